"""Shared closed-loop runs, computed once per session."""

from __future__ import annotations

import time

import numpy as np
import pytest

from quadsteer import config as cfgmod
from quadsteer.pipeline import certify_config, simulate_config
from quadsteer.sim import SimTrace

FLOOR = "table1-floor-flower"
WALL = "table1-wall-lissajous"


def build(name: str, **overrides):
    raw = cfgmod.preset_dict(name)
    for path, value in overrides.items():
        raw = cfgmod.set_path(raw, path.replace("__", "."), value)
    return cfgmod.from_dict(raw)


class _Runs:
    """Lazy cache of (config, trace) keyed by scenario name."""

    def __init__(self):
        self._cache = {}
        self.elapsed = {}

    def _make(self, key):
        if key == "flower_floor":
            return build(FLOOR)
        if key == "flower_wall":
            return build(FLOOR, disturbance=cfgmod.wall_disturbance())
        if key == "lissajous_wall":
            return build(WALL)
        if key == "lissajous_floor":
            return build(WALL, disturbance=cfgmod.floor_disturbance())
        if key == "flower_fine10":
            return build(FLOOR, sim__T=10.0, sim__dt=5e-4)
        raise KeyError(key)

    def get(self, key):
        if key not in self._cache:
            cfg = self._make(key)
            start = time.perf_counter()
            self._cache[key] = (cfg, simulate_config(cfg))
            self.elapsed[key] = time.perf_counter() - start
        return self._cache[key]


@pytest.fixture(scope="session")
def runs():
    return _Runs()


@pytest.fixture(scope="session")
def flower_cert():
    return certify_config(build(FLOOR))


def head(trace: SimTrace, t_end: float) -> SimTrace:
    """Rows with t <= t_end."""
    keep = trace.t <= t_end + 1e-12
    return SimTrace(np.array(trace.data[keep]), list(trace.columns), dict(trace.meta))


ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {msg}")
