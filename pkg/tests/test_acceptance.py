"""One test per acceptance criterion; each records a PASS/FAIL line for the summary."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, FLOOR, build, head
from quadsteer import model as mdl
from quadsteer.analysis import (
    exact_passivity_check,
    l2_gain_check,
    lyap_bound_check,
    passivity_order_ratio,
    residual_bound_check,
    tracking_metrics,
)
from quadsteer.bounds import EnvelopeSpec, certify, compute_bounds, sample_configs
from quadsteer.cli import sweep_one
from quadsteer.config import preset_dict
from quadsteer.dyncontrol import PIGains
from quadsteer.model import RobotParams
from quadsteer.pipeline import certify_config
from quadsteer.uncertainty import verify_assumption_bounds, weighted_viscous

SCENARIOS = ("flower_floor", "lissajous_wall")
DISTURBANCE_SCENARIOS = ("flower_floor", "lissajous_floor", "flower_wall", "lissajous_wall")


def record(n: int, ok: bool, msg: str) -> None:
    ACCEPTANCE[n] = (bool(ok), msg)
    assert ok, msg


def close(value, expected, rel):
    return abs(value - expected) <= rel * abs(expected)


def test_criterion_1_constants():
    start = time.perf_counter()
    p = RobotParams()
    env = EnvelopeSpec(a=p.a)
    b = compute_bounds(p, env, weighted_viscous(0.0305, p.r))
    cert = certify(b, PIGains())
    elapsed = time.perf_counter() - start
    checks = {
        "sigma_J": close(b.sigma_J, 4.6640, 1e-4),
        "L_C2": close(b.L_C2, 1.7479, 1e-3),
        "V_d": close(env.V_d, 0.2817, 1e-3),
        "A_v": close(b.A_v, 2.2964, 1e-3),
        "d_v": close(b.d_v, 0.6635, 1e-3),
        "threshold": close(cert.threshold, 1.539, 1e-3),
        "certified": cert.passed and cert.lambda_min_Kp == 1.563,
        "runtime": elapsed < 1.0,
    }
    bad = [k for k, v in checks.items() if not v]
    record(
        1,
        not bad,
        f"sigma_J {b.sigma_J:.5f}, L_C2 {b.L_C2:.5f}, V_d {env.V_d:.5f}, A_v {b.A_v:.5f}, d_v {b.d_v:.5f},"
        f" threshold {cert.threshold:.5f}, certified {cert.passed}, {elapsed:.3f} s" + (f"; failed {bad}" if bad else ""),
    )


def test_criterion_2_structure():
    start = time.perf_counter()
    p = RobotParams()
    env = EnvelopeSpec(a=p.a)
    b = compute_bounds(p, env)
    M = mdl.mass_matrix_full(p)
    rng = np.random.default_rng(2024)
    qs = sample_configs(env, 10_000, seed=2024)
    worst_aj = worst_m = worst_c = worst_skew = 0.0
    eig_lo, eig_hi, b11_min = math.inf, 0.0, math.inf
    h = 1e-6
    for q in qs:
        J = mdl.jacobian(q, p)
        worst_aj = max(worst_aj, float(np.max(np.abs(mdl.constraint_matrix(q, p) @ J))))
        Mt = mdl.m_tilde(q, p)
        worst_m = max(worst_m, float(np.max(np.abs(J.T @ M @ J - Mt))))
        ev = np.linalg.eigvalsh(Mt)
        eig_lo, eig_hi = min(eig_lo, ev[0]), max(eig_hi, ev[-1])
        v = rng.uniform(-1, 1, 3) * (env.v_w_max, env.delta_dot_max, env.delta_dot_max)
        Cv = mdl.c_tilde(q, v[1], v[2], p) @ v
        worst_c = max(worst_c, float(np.linalg.norm(Cv) / (v @ v)))
        b11_min = min(b11_min, mdl.b11(q[4], q[5], p))
        df, dr = q[4], q[5]
        mdot = (mdl.m11(df + h * v[1], dr + h * v[2], p) - mdl.m11(df - h * v[1], dr - h * v[2], p)) / (2 * h)
        worst_skew = max(worst_skew, abs(mdot - 2 * mdl.c11(df, dr, v[1], v[2], p)))
    elapsed = time.perf_counter() - start
    ok = (
        worst_aj <= 1e-12
        and worst_m <= 1e-12
        and eig_lo >= 0.004 * (1 - 1e-12)
        and eig_hi <= 4.28485
        and worst_c <= 1.23549
        and b11_min >= 4 / p.r
        and worst_skew <= 1e-6
        and elapsed < 10.0
    )
    record(
        2,
        ok,
        f"10000 samples: |AJ| {worst_aj:.1e}, |J'MJ-M~| {worst_m:.1e}, eig [{eig_lo:.4f}, {eig_hi:.4f}],"
        f" |C~v|/|v|^2 {worst_c:.4f} <= {b.b_c:.5f}, min B~11 {b11_min:.2f}, skew {worst_skew:.1e}, {elapsed:.2f} s",
    )


def test_criterion_3_exact_passivity(runs):
    cfg, trace = runs.get("flower_floor")
    start = time.perf_counter()
    res = exact_passivity_check(trace, cfg.pi_gains, cfg.robot)
    analysis_time = time.perf_counter() - start
    _, fine = runs.get("flower_fine10")
    ratio = passivity_order_ratio(head(trace, 10.0), fine, cfg.pi_gains, cfg.robot, cfg.kin_gains)
    runtime = runs.elapsed["flower_floor"] + analysis_time
    ok = res.passed and 8.0 <= ratio["ratio"] <= 32.0 and ratio["rows_compared"] > 5000 and runtime < 30.0
    record(
        3,
        ok,
        f"max residual {res.details['max_abs_residual']:.2e} <= {res.tolerance:.1e};"
        f" dt halving ratio {ratio['ratio']:.1f} over {ratio['rows_compared']} smooth rows"
        f" (all rows {ratio['max_coarse_all'] / ratio['max_fine_all']:.1f}); 70 s run + check {runtime:.1f} s",
    )


def test_criterion_4_lyapunov_bound(runs):
    parts = []
    ok = True
    for key in SCENARIOS:
        cfg, trace = runs.get(key)
        bounds, cert = certify_config(cfg)
        res = lyap_bound_check(trace, bounds, cert, cfg.pi_gains, cfg.robot)
        ok &= cert.passed and res.passed
        parts.append(f"{key} {res.status} slack {res.min_slack:.3g} (tol {res.tolerance:.1e}, {len(trace)} rows)")
    record(4, ok, "; ".join(parts))


def test_criterion_5_l2_gain(runs):
    parts = []
    ok = True
    for key in DISTURBANCE_SCENARIOS:
        cfg, trace = runs.get(key)
        bounds, cert = certify_config(cfg)
        declared = verify_assumption_bounds(cfg.disturbance, cfg.envelope, 2000, cfg.robot)
        res = l2_gain_check(trace, cert, bounds, cfg.pi_gains, cfg.robot)
        ok &= declared.passed and res.passed
        parts.append(f"{key} {res.status} slack {res.min_slack:.3g}")
    record(5, ok, "; ".join(parts))


def test_criterion_6_residual_bound(runs):
    parts = []
    ok = True
    for key in SCENARIOS:
        cfg, trace = runs.get(key)
        bounds, _ = certify_config(cfg)
        res = residual_bound_check(trace, bounds, cfg.robot)
        rates = np.abs(trace.cols("vraw2", "vraw3"))
        edge = int(np.sum(np.any(rates >= cfg.kin_gains.delta_dot_max * (1 - 1e-12), axis=1)))
        edge_slack = float(np.min(_slack(trace, bounds, cfg)[np.any(rates >= cfg.kin_gains.delta_dot_max * (1 - 1e-12), axis=1)], initial=math.inf))
        ok &= res.passed and edge > 0 and edge_slack >= -res.tolerance
        parts.append(f"{key} {res.status} slack {res.min_slack:.3g}, {edge} rate-limit rows (min slack {edge_slack:.3g})")
    record(6, ok, "; ".join(parts))


def _slack(trace, bounds, cfg):
    from quadsteer.analysis import config_distance, residual_series

    r = np.linalg.norm(residual_series(trace, cfg.robot), axis=1)
    ev = np.linalg.norm(trace.cols("ev1", "ev2", "ev3"), axis=1)
    return bounds.A_q * config_distance(trace, cfg.robot) + bounds.A_v * ev + bounds.A_c - r


def test_criterion_7_tracking(runs):
    cfg_f, flower = runs.get("flower_floor")
    rms = tracking_metrics(flower, 5.0)["rms_pos"]
    cfg_l, liss = runs.get("lissajous_wall")
    horizon = 2 * math.pi / 0.1
    completed = liss.t[-1] >= horizon - cfg_l.sim.dt
    max_ev = float(np.max(np.linalg.norm(liss.cols("ev1", "ev2", "ev3"), axis=1)))
    ok = rms < 0.05 and completed and max_ev < 1.0 and np.all(np.isfinite(liss.data))
    record(
        7,
        ok,
        f"flower rms_pos {rms:.4f} m < 0.05; lissajous ran to t={liss.t[-1]:.3f} s of {horizon:.3f} s, max |e_v| {max_ev:.3g}",
    )


def test_criterion_8_gate():
    base = preset_dict(FLOOR)
    cfg = build(FLOOR)
    bounds, cert = certify_config(cfg)
    eps_cur = cfg.certify.epsilon / cfg.pi_gains.K_t
    th = cert.threshold
    values = list(np.linspace(th - 3 * eps_cur, th + 3 * eps_cur, 61)) + [th, th + eps_cur, th + eps_cur * (1 + 1e-9)]
    values = sorted(float(v) for v in values)
    flags = [sweep_one(base, "pi_gains.Kp[0]", v, simulate=False)["certified"] for v in values]
    flips = [i for i in range(1, len(flags)) if flags[i] != flags[i - 1]]
    ok = len(flips) == 1 and not flags[0] and flags[-1]
    if ok:
        lo, hi = values[flips[0] - 1], values[flips[0]]
        ok = th <= hi and lo <= th + eps_cur
        msg = f"single flip between {lo:.7f} and {hi:.7f}; threshold {th:.7f}, +eps/K_t {th + eps_cur:.7f}"
    else:
        msg = f"flips at {flips}"
    record(8, ok, msg)
