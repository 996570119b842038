"""Trace post-processing: storage function and dissipation-inequality checks.

Every check reports a signed slack series (>= 0 means satisfied); a check
passes when its worst slack is >= -tol with ``tol = 1e-9 * scale``.  Norms on
velocity space are Euclidean.  Configuration distances ``||q - q_d||`` use the
same weighted metric as the Jacobian gain, i.e. the wheel spin angle enters
as rim arc length ``r * phi``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bounds import BoundSet, GainCertificate
from .dyncontrol import PIGains
from .model import RobotParams
from .sim import SimTrace

TOL_REL = 1e-9

Q_COLS = ("x", "y", "theta", "phi", "delta_f", "delta_r")
QD_COLS = ("qd_x", "qd_y", "qd_theta", "qd_phi", "qd_df", "qd_dr")


@dataclass
class CheckResult:
    name: str
    status: str  # "pass", "fail" or "uncertified"
    min_slack: float = math.nan
    worst_time: float = math.nan
    tolerance: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def summary(self) -> str:
        return (
            f"{self.name}: {self.status.upper()} (min slack {self.min_slack:.4g}"
            f" at t={self.worst_time:.4g}, tol {self.tolerance:.3g})"
        )


@dataclass
class StabilityReport:
    mu: float
    epsilon: float
    checks: dict = field(default_factory=dict)
    tracking: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "epsilon": self.epsilon,
            "pass": self.passed,
            "checks": {k: asdict(v) for k, v in self.checks.items()},
            "tracking": self.tracking,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def summary(self) -> str:
        lines = [c.summary() for c in self.checks.values()]
        if self.tracking:
            lines.append(
                f"tracking: rms_pos {self.tracking['rms_pos']:.4g} m, rms_heading {self.tracking['rms_heading']:.4g} rad"
            )
        return "\n".join(lines)


def _finite(obj):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


# -- model terms on trace arrays ------------------------------------------------


def _m11(df, dr, p: RobotParams):
    ds = np.sin(df) - np.sin(dr)
    return 4.0 * p.I_phi / p.r**2 + 0.5 * p.m * (1.0 + np.cos(df - dr)) + p.I * p.A**2 * ds * ds


def _c11(df, dr, wf, wr, p: RobotParams):
    ds = np.sin(df) - np.sin(dr)
    return p.I * p.A**2 * ds * (np.cos(df) * wf - np.cos(dr) * wr) - 0.25 * p.m * np.sin(df - dr) * (wf - wr)


def storage(e_v, eta, q, Ki, p: RobotParams) -> float:
    """V = 1/2 e_v^T M~(q) e_v + 1/2 eta^T K_I eta (``Ki`` in the torque domain)."""
    e_v, eta, Ki = np.asarray(e_v, float), np.asarray(eta, float), np.asarray(Ki, float)
    m = np.array([_m11(q[4], q[5], p), 2.0 * p.I_delta, 2.0 * p.I_delta])
    return float(0.5 * (m @ e_v**2) + 0.5 * (Ki @ eta**2))


def storage_series(trace: SimTrace, gains: PIGains, p: RobotParams) -> np.ndarray:
    q = trace.cols(*Q_COLS)
    ev = trace.cols("ev1", "ev2", "ev3")
    eta = trace.cols("eta1", "eta2", "eta3")
    m = np.column_stack([_m11(q[:, 4], q[:, 5], p), np.full(len(q), 2 * p.I_delta), np.full(len(q), 2 * p.I_delta)])
    return 0.5 * np.sum(m * ev**2, axis=1) + 0.5 * (eta**2) @ np.asarray(gains.Ki_torque)


def storage_sandwich(trace: SimTrace, gains: PIGains, bounds: BoundSet, p: RobotParams) -> CheckResult:
    """Quadratic lower and upper bounds on V at every row."""
    V = storage_series(trace, gains, p)
    ev2 = np.sum(trace.cols("ev1", "ev2", "ev3") ** 2, axis=1)
    eta2 = np.sum(trace.cols("eta1", "eta2", "eta3") ** 2, axis=1)
    ki = gains.Ki_torque
    lo = 0.5 * (bounds.a1 * ev2 + min(ki) * eta2)
    hi = 0.5 * (bounds.a2 * ev2 + max(ki) * eta2)
    slack = np.minimum(V - lo, hi - V)
    return _result("storage_sandwich", slack, trace.t, TOL_REL * max(1.0, float(np.max(V, initial=0.0))))


def residual_series(trace: SimTrace, p: RobotParams) -> np.ndarray:
    """r = M~(q) v_d' + C~(q, q') v_d + f~(q, v_d) - u_d, rows x 3."""
    q = trace.cols(*Q_COLS)
    qd = trace.cols(*QD_COLS)
    v = trace.cols("v_w", "omega_f", "omega_r")
    vd = trace.cols("vwd", "omfd", "omrd")
    a = trace.cols("vdot1", "vdot2", "vdot3")
    ftd = trace.cols("ftd1", "ftd2", "ftd3")
    r = np.empty_like(vd)
    r[:, 0] = (
        (_m11(q[:, 4], q[:, 5], p) - _m11(qd[:, 4], qd[:, 5], p)) * a[:, 0]
        + (_c11(q[:, 4], q[:, 5], v[:, 1], v[:, 2], p) - _c11(qd[:, 4], qd[:, 5], vd[:, 1], vd[:, 2], p)) * vd[:, 0]
        + ftd[:, 0]
    )
    r[:, 1:] = ftd[:, 1:]
    return r


def composite_input(trace: SimTrace, p: RobotParams) -> np.ndarray:
    """u_c = -(f~(q, v) - f~(q, v_d)) - r."""
    ft = trace.cols("ft1", "ft2", "ft3")
    ftd = trace.cols("ftd1", "ftd2", "ftd3")
    return -(ft - ftd) - residual_series(trace, p)


def config_distance(trace: SimTrace, p: RobotParams) -> np.ndarray:
    dq = trace.cols(*Q_COLS) - trace.cols(*QD_COLS)
    dq[:, 3] *= p.r
    return np.linalg.norm(dq, axis=1)


def fd_derivative(y: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central difference; the two end samples on each side are NaN."""
    out = np.full(len(y), np.nan)
    if len(y) >= 5:
        out[2:-2] = (y[:-4] - 8.0 * y[1:-3] + 8.0 * y[3:-1] - y[4:]) / (12.0 * h)
    return out


def _step(trace: SimTrace) -> float:
    t = trace.t
    if len(t) < 2:
        return math.nan
    return float(t[1] - t[0])


def _result(name, slack, t, tol, details=None) -> CheckResult:
    slack = np.asarray(slack, float)
    valid = ~np.isnan(slack)
    if not valid.any():
        return CheckResult(name, "pass", math.inf, math.nan, tol, details or {})
    idx = int(np.nanargmin(slack))
    worst = float(slack[idx])
    status = "pass" if worst >= -tol else "fail"
    return CheckResult(name, status, worst, float(t[idx]), tol, details or {})


# -- checks ---------------------------------------------------------------------


def passivity_residual(trace: SimTrace, gains: PIGains, p: RobotParams) -> np.ndarray:
    """V' (finite difference) minus (-e_v^T K_P e_v + e_v^T u_c)."""
    V = storage_series(trace, gains, p)
    ev = trace.cols("ev1", "ev2", "ev3")
    rhs = -(ev**2) @ np.asarray(gains.Kp_torque) + np.sum(ev * composite_input(trace, p), axis=1)
    return fd_derivative(V, _step(trace)) - rhs


def switch_rows(trace: SimTrace, delta_dot_max: float, eps_v: float) -> np.ndarray:
    """Rows where a piecewise branch of the control law changes.

    Branches are steering saturation, the steering-rate clamps and the
    wheel-speed floor used in the yaw allocation.  The closed loop is only
    piecewise smooth across these events, so finite differences lose their
    order there.
    """
    raw = trace.cols("vraw1", "vraw2", "vraw3")
    state = np.column_stack(
        [
            trace["sat"] > 0.5,
            np.abs(raw[:, 1]) >= delta_dot_max * (1.0 - 1e-12),
            np.abs(raw[:, 2]) >= delta_dot_max * (1.0 - 1e-12),
            np.abs(raw[:, 0]) < eps_v,
            raw[:, 0] >= 0.0,
        ]
    )
    changed = np.zeros(len(trace), bool)
    changed[1:] = np.any(state[1:] != state[:-1], axis=1)
    return changed


def smooth_mask(trace: SimTrace, delta_dot_max: float, eps_v: float, margin: int = 3) -> np.ndarray:
    """True on rows whose difference stencil stays clear of switching events."""
    events = np.flatnonzero(switch_rows(trace, delta_dot_max, eps_v))
    mask = np.ones(len(trace), bool)
    for k in events:
        mask[max(0, k - margin) : k + margin + 1] = False
    return mask


def passivity_order_ratio(coarse: SimTrace, fine: SimTrace, gains: PIGains, p: RobotParams, kin) -> dict:
    """Ratio of max passivity residuals between a run and its half-step twin.

    Only rows at common times whose stencils avoid switching events in
    either run are compared.
    """
    rc = passivity_residual(coarse, gains, p)
    rf = passivity_residual(fine, gains, p)
    mc = smooth_mask(coarse, kin.delta_dot_max, kin.eps_v)
    mf = smooth_mask(fine, kin.delta_dot_max, kin.eps_v)
    # fine rows at the coarse sample times
    idx = np.searchsorted(fine.t, coarse.t)
    idx = np.clip(idx, 0, len(fine) - 1)
    common = np.isclose(fine.t[idx], coarse.t, atol=1e-9) & mc & mf[idx] & ~np.isnan(rc) & ~np.isnan(rf[idx])
    max_c = float(np.max(np.abs(rc[common]), initial=0.0))
    max_f = float(np.max(np.abs(rf[idx][common]), initial=0.0))
    return {
        "max_coarse": max_c,
        "max_fine": max_f,
        "ratio": max_c / max_f if max_f > 0 else math.inf,
        "rows_compared": int(common.sum()),
        "max_coarse_all": float(np.nanmax(np.abs(rc))) if len(rc) else 0.0,
        "max_fine_all": float(np.nanmax(np.abs(rf))) if len(rf) else 0.0,
    }


def exact_passivity_check(trace: SimTrace, gains: PIGains, p: RobotParams, tol_pass: float | None = None) -> CheckResult:
    """Passes when max |residual| <= tol_pass (default 1e-4 max(1, max V))."""
    V = storage_series(trace, gains, p)
    res = passivity_residual(trace, gains, p)
    tol = tol_pass if tol_pass is not None else 1e-4 * max(1.0, float(np.max(V, initial=0.0)))
    mag = np.abs(res)
    finite = ~np.isnan(mag)
    worst = float(np.max(mag[finite])) if finite.any() else 0.0
    idx = int(np.nanargmax(mag)) if finite.any() else 0
    return CheckResult(
        "exact_passivity",
        "pass" if worst <= tol else "fail",
        tol - worst,
        float(trace.t[idx]) if len(trace) else math.nan,
        tol,
        {"max_abs_residual": worst, "max_V": float(np.max(V, initial=0.0))},
    )


def _rho(trace: SimTrace, bounds: BoundSet, epsilon: float, p: RobotParams) -> np.ndarray:
    dq = config_distance(trace, p)
    return bounds.A_q**2 / (2.0 * epsilon) * dq**2 + bounds.A_c**2 / (2.0 * epsilon)


def vdot_analytic(trace: SimTrace, gains: PIGains, p: RobotParams) -> np.ndarray:
    ev = trace.cols("ev1", "ev2", "ev3")
    return -(ev**2) @ np.asarray(gains.Kp_torque) + np.sum(ev * composite_input(trace, p), axis=1)


def lyap_bound_check(
    trace: SimTrace, bounds: BoundSet, cert: GainCertificate, gains: PIGains, p: RobotParams
) -> CheckResult:
    """V' <= -mu_eps ||e_v||^2 + rho_eps pointwise.

    V' is the exact storage rate along the trace (the composite-input
    identity); the finite-difference rate agrees with it to the integration
    order, as checked by ``exact_passivity_check``.
    """
    if not cert.passed:
        return CheckResult("lyap_bound", "uncertified", details={"mu": cert.mu})
    ev2 = np.sum(trace.cols("ev1", "ev2", "ev3") ** 2, axis=1)
    vdot = vdot_analytic(trace, gains, p)
    rho = _rho(trace, bounds, cert.epsilon, p)
    bound = -cert.mu * ev2 + rho
    slack = bound - vdot
    scale = max(1.0, float(np.max(np.abs(bound))), float(np.max(np.abs(vdot), initial=0.0)))
    outside = ev2 > rho / cert.mu
    details = {
        "outside_ball_samples": int(outside.sum()),
        "outside_ball_max_vdot": float(np.max(vdot[outside])) if outside.any() else None,
    }
    return _result("lyap_bound", slack, trace.t, TOL_REL * scale, details)


def _trapz(y: np.ndarray, t: np.ndarray) -> float:
    if len(t) < 2:
        return 0.0
    return float(np.trapezoid(y, t))


def l2_gain_check(
    trace: SimTrace, cert: GainCertificate, bounds: BoundSet, gains: PIGains, p: RobotParams
) -> CheckResult:
    """||y||^2 <= ||u||^2 / mu^2 + (2 / mu)(V(0) + int rho) with y = e_v, u = -f~(q, v)."""
    if not cert.passed:
        return CheckResult("l2_gain", "uncertified", details={"mu": cert.mu})
    t = trace.t
    y2 = _trapz(np.sum(trace.cols("ev1", "ev2", "ev3") ** 2, axis=1), t)
    u2 = _trapz(np.sum(trace.cols("ft1", "ft2", "ft3") ** 2, axis=1), t)
    rho_int = _trapz(_rho(trace, bounds, cert.epsilon, p), t)
    V0 = float(storage_series(trace, gains, p)[0]) if len(trace) else 0.0
    mu = cert.mu
    rhs = u2 / mu**2 + 2.0 / mu * (V0 + rho_int)
    slack = rhs - y2
    details = {
        "y_norm_sq": y2,
        "u_norm_sq": u2,
        "V0": V0,
        "rho_integral": rho_int,
        "rhs": rhs,
        "gain_bound": 1.0 / mu,
        "empirical_ratio": math.sqrt(y2 / u2) if u2 > 0 else None,
    }
    tol = TOL_REL * max(1.0, rhs)
    return CheckResult("l2_gain", "pass" if slack >= -tol else "fail", slack, float(t[-1]) if len(t) else math.nan, tol, details)


def residual_bound_check(trace: SimTrace, bounds: BoundSet, p: RobotParams) -> CheckResult:
    """||r|| <= A_q ||q - q_d|| + A_v ||e_v|| + A_c pointwise."""
    r = np.linalg.norm(residual_series(trace, p), axis=1)
    ev = np.linalg.norm(trace.cols("ev1", "ev2", "ev3"), axis=1)
    bound = bounds.A_q * config_distance(trace, p) + bounds.A_v * ev + bounds.A_c
    slack = bound - r
    scale = max(1.0, float(np.max(bound, initial=0.0)))
    return _result("residual_bound", slack, trace.t, TOL_REL * scale, {"max_residual": float(np.max(r, initial=0.0))})


def envelope_diagnostics(trace: SimTrace, envelope) -> dict:
    """How far the recorded references stray outside the declared envelope."""
    vd = trace.cols("vwd", "omfd", "omrd")
    a = trace.cols("vdot1", "vdot2", "vdot3")
    lo, hi = envelope.delta_range
    d = trace.cols("delta_f", "delta_r")
    return {
        "max_abs_vwd": float(np.max(np.abs(vd[:, 0]), initial=0.0)),
        "v_w_max": envelope.v_w_max,
        "max_abs_steer_rate_d": float(np.max(np.abs(vd[:, 1:]), initial=0.0)),
        "delta_dot_max": envelope.delta_dot_max,
        "max_norm_vdot_d": float(np.max(np.linalg.norm(a, axis=1), initial=0.0)),
        "A_d": envelope.A_d,
        "steering_in_range": bool(np.all((d >= lo - 1e-12) & (d <= hi + 1e-12))),
        "saturated_fraction": float(np.mean(trace["sat"])) if len(trace) else 0.0,
    }


def tracking_metrics(trace: SimTrace, t_start: float = 5.0) -> dict:
    """RMS pose and velocity errors over rows with t >= t_start."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    mask = trace.t >= t_start
    if not mask.any():
        mask = np.ones(len(trace), bool)
    ex, ey, eth = trace["ex"][mask], trace["ey"][mask], trace["etheta"][mask]
    ev = trace.cols("ev1", "ev2", "ev3")[mask]
    return {
        "t_start": t_start,
        "rms_pos": float(np.sqrt(np.mean(ex**2 + ey**2))),
        "rms_heading": float(np.sqrt(np.mean(eth**2))),
        "rms_ev": np.sqrt(np.mean(ev**2, axis=0)).tolist(),
        "max_ev": np.max(np.abs(ev), axis=0).tolist(),
    }


def analyze(
    trace: SimTrace,
    gains: PIGains,
    bounds: BoundSet,
    cert: GainCertificate,
    p: RobotParams,
    envelope=None,
    t_start: float = 5.0,
) -> StabilityReport:
    """Run every check on one trace."""
    report = StabilityReport(mu=cert.mu, epsilon=cert.epsilon)
    for res in (
        exact_passivity_check(trace, gains, p),
        lyap_bound_check(trace, bounds, cert, gains, p),
        l2_gain_check(trace, cert, bounds, gains, p),
        residual_bound_check(trace, bounds, p),
        storage_sandwich(trace, gains, bounds, p),
    ):
        report.checks[res.name] = res
    report.tracking = tracking_metrics(trace, t_start)
    if envelope is not None:
        report.diagnostics["envelope"] = envelope_diagnostics(trace, envelope)
    return report
