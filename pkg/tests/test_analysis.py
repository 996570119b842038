import json
import math

import numpy as np
import pytest

from quadsteer import config as cfgmod
from quadsteer.analysis import (
    StabilityReport,
    CheckResult,
    analyze,
    config_distance,
    exact_passivity_check,
    fd_derivative,
    l2_gain_check,
    lyap_bound_check,
    storage,
    tracking_metrics,
)
from quadsteer.bounds import EnvelopeSpec, certify, compute_bounds
from quadsteer.dyncontrol import PIGains
from quadsteer.model import RobotParams
from quadsteer.pipeline import analyze_config, certify_config, simulate_config
from quadsteer.sim import COLUMNS, SimTrace

P = RobotParams()
G = PIGains()


def blank(n=11, dt=0.1):
    data = np.zeros((n, len(COLUMNS)))
    data[:, 0] = np.arange(n) * dt
    return SimTrace(data)


def test_storage_example():
    assert storage((1, 0, 0), (0, 0, 0), (0,) * 6, G.Ki_torque, P) == pytest.approx(1.78193, rel=1e-5)


def test_storage_integral_part():
    assert storage((0, 0, 0), (1, 2, 0), (0,) * 6, (2, 3, 4), P) == pytest.approx(0.5 * (2 + 12))


def test_storage_sandwich_random():
    bounds = compute_bounds(P, EnvelopeSpec(a=P.a))
    ki = G.Ki_torque
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        e, eta = rng.normal(size=3), rng.normal(size=3)
        q = np.zeros(6)
        q[4:] = rng.uniform(-math.pi / 2, math.pi / 2, 2)
        V = storage(e, eta, q, ki, P)
        lo = 0.5 * (bounds.a1 * e @ e + min(ki) * eta @ eta)
        hi = 0.5 * (bounds.a2 * e @ e + max(ki) * eta @ eta)
        assert lo * (1 - 1e-12) <= V <= hi * (1 + 1e-12)


def test_fd_derivative_exact_on_quartic():
    h = 0.01
    t = np.arange(20) * h
    d = fd_derivative(t**4 - 3 * t**2, h)
    assert np.all(np.isnan(d[:2])) and np.all(np.isnan(d[-2:]))
    assert d[2:-2] == pytest.approx(4 * t[2:-2] ** 3 - 6 * t[2:-2], abs=1e-9)


def test_fd_derivative_short_input():
    assert np.all(np.isnan(fd_derivative(np.ones(4), 0.1)))


def test_tracking_metrics_constant_error():
    tr = blank(n=101)
    tr.data[:, tr.columns.index("ex")] = 0.01
    m = tracking_metrics(tr, t_start=5.0)
    assert m["rms_pos"] == pytest.approx(0.01)
    assert m["rms_heading"] == 0.0


def test_tracking_metrics_empty():
    with pytest.raises(ValueError):
        tracking_metrics(SimTrace(np.zeros((0, len(COLUMNS)))))


def test_config_distance_weights_spin():
    tr = blank(n=1)
    tr.data[0, tr.columns.index("phi")] = 1.0
    assert config_distance(tr, P)[0] == pytest.approx(P.r)


def test_uncertified_checks_skip():
    bounds = compute_bounds(P, EnvelopeSpec(a=P.a))
    cert = certify(bounds, PIGains(Kp=1.0))
    tr = blank()
    assert lyap_bound_check(tr, bounds, cert, G, P).status == "uncertified"
    assert l2_gain_check(tr, cert, bounds, G, P).status == "uncertified"


def test_exact_passivity_detects_inconsistent_trace():
    tr = blank(n=50, dt=0.01)
    tr.data[:, tr.columns.index("ev1")] = np.linspace(0, 1, 50)
    res = exact_passivity_check(tr, G, P)
    assert res.status == "fail"


def test_report_json_handles_infinity():
    rep = StabilityReport(mu=math.inf, epsilon=1e-3, checks={"x": CheckResult("x", "pass", math.inf)})
    data = json.loads(rep.to_json())
    assert data["mu"] == "inf"
    assert data["pass"] is True


@pytest.fixture(scope="module")
def short_wall():
    cfg = cfgmod.from_dict(cfgmod.set_path(cfgmod.preset_dict("table1-wall-lissajous"), "sim.T", 3.0))
    return cfg, simulate_config(cfg)


def test_short_run_passes_every_check(short_wall):
    cfg, tr = short_wall
    rep = analyze_config(cfg, tr)
    assert rep.passed, rep.summary()
    assert set(rep.checks) == {"exact_passivity", "lyap_bound", "l2_gain", "residual_bound", "storage_sandwich"}
    assert "envelope" in rep.diagnostics and "certificate" in rep.diagnostics


def test_lyap_check_fails_on_corrupted_trace():
    cfg = cfgmod.from_dict(cfgmod.set_path(cfgmod.preset_dict("table1-floor-flower"), "sim.T", 0.5))
    tr = simulate_config(cfg)
    bad = SimTrace(tr.data.copy(), list(tr.columns))
    bad.data[:, bad.columns.index("ev1")] = 1.0
    bad.data[:, bad.columns.index("ft1")] = -100.0
    bounds, cert = certify_config(cfg)
    assert lyap_bound_check(bad, bounds, cert, cfg.pi_gains, cfg.robot).status == "fail"


def test_analyze_deterministic(short_wall):
    cfg, tr = short_wall
    bounds, cert = certify_config(cfg)
    a = analyze(tr, cfg.pi_gains, bounds, cert, cfg.robot).to_json()
    b = analyze(tr, cfg.pi_gains, bounds, cert, cfg.robot).to_json()
    assert a == b
