"""Golden fixtures: reference constants, preset configs and a short golden trace.

``validate_fixtures`` recomputes every stored value through the library and
compares it with the stored tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import model as mdl
from .bounds import EnvelopeSpec, certify, compute_bounds
from .dyncontrol import PIGains
from .model import RobotParams
from .pipeline import simulate_config
from .uncertainty import weighted_viscous

FIXTURE_DIR = Path(__file__).with_name("golden")
GOLDEN_WINDOW = 1.0
GOLDEN_STRIDE = 50


def library_constants() -> dict:
    """Every constant the fixtures pin, computed from scratch."""
    p = RobotParams()
    env = EnvelopeSpec(a=p.a)
    b = compute_bounds(p, env, weighted_viscous(cfgmod.FLOOR_VISCOUS, p.r))
    cert = certify(b, PIGains())
    return {
        "A": p.A,
        "I_recomputed": p.I_recomputed,
        "a1": b.a1,
        "a2": b.a2,
        "b_c": b.b_c,
        "sigma_J": b.sigma_J,
        "sigma_dJ": b.sigma_dJ,
        "L_M": b.L_M,
        "L_C1": b.L_C1,
        "L_C2": b.L_C2,
        "V_d": env.V_d,
        "d_v": b.d_v,
        "A_v": b.A_v,
        "A_q": b.A_q,
        "A_c": b.A_c,
        "threshold": cert.threshold,
        "mu": cert.mu,
        "M11_zero_steer": mdl.m11(0.0, 0.0, p),
        "B11_zero_steer": mdl.b11(0.0, 0.0, p),
        "M11_opposed_steer": mdl.m11(math.pi / 2, -math.pi / 2, p),
    }


@dataclass
class FixtureCheck:
    fixture: str
    name: str
    expected: float
    actual: float
    tolerance: float
    ok: bool


@dataclass
class FixtureReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.ok]

    def summary(self) -> str:
        bad = self.failures()
        if not bad:
            return f"{len(self.checks)} fixture values match"
        return "\n".join(
            f"{c.fixture}:{c.name} expected {c.expected!r} got {c.actual!r} (tol {c.tolerance:g})" for c in bad
        )


def _within(expected: float, actual: float, entry: dict) -> tuple[bool, float]:
    if "rel_tol" in entry:
        tol = entry["rel_tol"] * abs(expected)
    else:
        tol = entry.get("abs_tol", 0.0)
    return abs(actual - expected) <= tol, tol


def _check_constants(path: Path, report: FixtureReport) -> None:
    data = json.loads(path.read_text())
    values = library_constants()
    for entry in data["values"]:
        name = entry["name"]
        actual = values.get(name, math.nan)
        ok, tol = _within(entry["expected"], actual, entry)
        report.checks.append(FixtureCheck(path.name, name, entry["expected"], actual, tol, ok))


def _check_preset(path: Path, report: FixtureReport) -> None:
    stored = json.loads(path.read_text())
    fresh = cfgmod.preset_dict(stored["name"])
    same = json.dumps(stored, sort_keys=True) == json.dumps(json.loads(json.dumps(fresh)), sort_keys=True)
    report.checks.append(FixtureCheck(path.name, "config", 0.0, 0.0 if same else 1.0, 0.0, same))


def golden_trace(name: str) -> tuple[np.ndarray, list]:
    """Rows (every GOLDEN_STRIDE steps) of the first second of a preset run."""
    raw = cfgmod.set_path(cfgmod.preset_dict(name), "sim.T", GOLDEN_WINDOW)
    trace = simulate_config(cfgmod.from_dict(raw))
    return trace.data[::GOLDEN_STRIDE], trace.columns


def _check_golden(path: Path, report: FixtureReport) -> None:
    stored = json.loads(path.read_text())
    data, columns = golden_trace(stored["preset"])
    expected = np.asarray(stored["rows"], float)
    idx = [columns.index(c) for c in stored["columns"]]
    actual = data[:, idx]
    tol = stored["abs_tol"]
    if actual.shape != expected.shape:
        report.checks.append(FixtureCheck(path.name, "shape", expected.size, actual.size, 0.0, False))
        return
    err = np.abs(actual - expected)
    j = np.unravel_index(int(np.argmax(err)), err.shape)
    report.checks.append(
        FixtureCheck(
            path.name,
            f"{stored['columns'][j[1]]}@row{j[0]}",
            float(expected[j]),
            float(actual[j]),
            tol,
            bool(err[j] <= tol),
        )
    )


def validate_fixtures(directory: Path | str | None = None) -> FixtureReport:
    """Recompute every fixture in ``directory`` and compare within tolerance."""
    directory = Path(directory) if directory is not None else FIXTURE_DIR
    report = FixtureReport()
    for path in sorted(directory.glob("*.json")):
        kind = json.loads(path.read_text()).get("fixture")
        if kind == "constants":
            _check_constants(path, report)
        elif kind == "golden_trace":
            _check_golden(path, report)
        else:
            _check_preset(path, report)
    if not report.checks:
        raise FileNotFoundError(f"no fixtures found in {directory}")
    return report


GOLDEN_COLUMNS = ["t", "x", "y", "theta", "delta_f", "delta_r", "v_w", "vwd", "tau_w", "ev1", "V"]


def regenerate(directory: Path | str | None = None) -> None:
    """Rewrite the preset and golden-trace fixtures from the current library."""
    directory = Path(directory) if directory is not None else FIXTURE_DIR
    directory.mkdir(parents=True, exist_ok=True)
    for name in cfgmod.PRESETS:
        (directory / f"{name}.json").write_text(json.dumps(cfgmod.preset_dict(name), indent=2, sort_keys=True) + "\n")
        data, columns = golden_trace(name)
        idx = [columns.index(c) for c in GOLDEN_COLUMNS]
        payload = {
            "fixture": "golden_trace",
            "preset": name,
            "window_s": GOLDEN_WINDOW,
            "stride": GOLDEN_STRIDE,
            "abs_tol": 1e-9,
            "columns": GOLDEN_COLUMNS,
            "rows": data[:, idx].tolist(),
        }
        (directory / f"golden-{name}.json").write_text(json.dumps(payload, indent=1) + "\n")
