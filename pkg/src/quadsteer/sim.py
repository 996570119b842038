"""Closed-loop fixed-step simulation of the reduced dynamics.

Two controller timings are supported:

* ``"continuous"`` (default): the kinematic law, reference filter, PI law and
  integral state are part of the ODE and are re-evaluated at every RK4 stage.
  The closed loop is then a smooth ODE, so the storage identity checked in
  ``analysis`` holds to the integrator's order.
* ``"zoh"``: references and torques are computed once per step and held
  across the RK4 stages, mirroring a sampled embedded loop.

The state integrated in continuous mode is ``q`` (6), ``v`` (3), the integral
``eta`` (3), the filtered reference ``v_d`` (3) and the reconstructed desired
configuration ``q_d`` (6), with ``q_d' = J(q_d) v_d``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import model as mdl
from .dyncontrol import PIGains, feedforward, torque_law
from .kincontrol import KinGains, PoseRef, initial_steering, law_chain, pose_error, yaw_allocation
from .model import RobotParams
from .uncertainty import UncertaintyModel, compile_force

HEADER = (
    "t,x,y,theta,phi,delta_f,delta_r,v_w,omega_f,omega_r,vwd,omfd,omrd,delta_fd,delta_rd,"
    "tau_w,tau_f,tau_r,ev1,ev2,ev3,ex,ey,etheta,ft1,ft2,ft3,V,sat"
).split(",")
EXTRA = (
    "vdot1,vdot2,vdot3,eta1,eta2,eta3,ftd1,ftd2,ftd3,"
    "qd_x,qd_y,qd_theta,qd_phi,qd_df,qd_dr,vraw1,vraw2,vraw3"
).split(",")
COLUMNS = HEADER + EXTRA

DIVERGENCE_LIMIT = 1e6


class SimulationDiverged(RuntimeError):
    """Raised when a state component leaves the divergence guard."""

    def __init__(self, message: str, trace: "SimTrace"):
        super().__init__(message)
        self.trace = trace


class TraceParseError(ValueError):
    pass


# -- trajectories -------------------------------------------------------------

FLOWER_PERIOD = 70.0


def flower_ref(t: float) -> PoseRef:
    """Four-petal rose centred at (0.1, 0.2), heading along the path."""
    w1 = 2.0 * math.pi / 35.0
    w2 = 2.0 * math.pi / 70.0
    c1, s1 = math.cos(w1 * t), math.sin(w1 * t)
    c2, s2 = math.cos(w2 * t), math.sin(w2 * t)
    x = 0.5 * c1 * c2 + 0.1
    y = 0.5 * c1 * s2 + 0.2
    xd = -0.5 * (w1 * s1 * c2 + w2 * c1 * s2)
    yd = -0.5 * (w1 * s1 * s2 - w2 * c1 * c2)
    xdd = -0.5 * ((w1 * w1 + w2 * w2) * c1 * c2 - 2.0 * w1 * w2 * s1 * s2)
    ydd = -0.5 * ((w1 * w1 + w2 * w2) * c1 * s2 + 2.0 * w1 * w2 * s1 * c2)
    return PoseRef.from_motion(x, y, xd, yd, xdd, ydd)


def lissajous_ref(t: float) -> PoseRef:
    """Figure-eight with constant zero heading."""
    px = 0.1 * t - math.pi / 2 + 0.75
    py = 0.2 * t - math.pi
    x = 0.75 * math.cos(px)
    y = -0.5 * math.sin(py)
    xd = -0.075 * math.sin(px)
    yd = -0.1 * math.cos(py)
    return PoseRef(x, y, 0.0, xd, yd, math.hypot(xd, yd), 0.0)


@dataclass(frozen=True)
class TrajectorySpec:
    """Reference trajectory.

    ``kind="samples"`` interpolates time-stamped rows ``(t, x_d, y_d,
    theta_d)`` with a cubic spline (``order=3``) or piecewise linearly
    (``order=1``).
    """

    kind: str = "flower"
    samples: tuple = ()
    order: int = 3

    def __post_init__(self):
        if self.kind not in ("flower", "lissajous", "samples"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "samples":
            if len(self.samples) < 2:
                raise ValueError("sampled trajectory needs at least 2 rows")
            if self.order not in (1, 3):
                raise ValueError("order must be 1 or 3")
            ts = [row[0] for row in self.samples]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("sample times must be strictly increasing")

    def evaluator(self) -> Callable[[float], PoseRef]:
        if self.kind == "flower":
            return flower_ref
        if self.kind == "lissajous":
            return lissajous_ref
        return _sampled_evaluator(np.asarray(self.samples, dtype=float), self.order)


def _sampled_evaluator(rows: np.ndarray, order: int) -> Callable[[float], PoseRef]:
    from scipy.interpolate import CubicSpline, make_interp_spline

    t = rows[:, 0]
    theta = np.unwrap(rows[:, 3])
    k = 3 if order == 3 and len(t) >= 4 else 1
    if k == 3:
        sx, sy, sth = (CubicSpline(t, col) for col in (rows[:, 1], rows[:, 2], theta))
    else:
        sx, sy, sth = (make_interp_spline(t, col, k=1) for col in (rows[:, 1], rows[:, 2], theta))
    dx, dy, dth = sx.derivative(), sy.derivative(), sth.derivative()

    def ev(tt: float) -> PoseRef:
        tt = min(max(tt, t[0]), t[-1])
        xd, yd = float(dx(tt)), float(dy(tt))
        return PoseRef(float(sx(tt)), float(sy(tt)), float(sth(tt)), xd, yd, math.hypot(xd, yd), float(dth(tt)))

    return ev


# -- configuration and trace --------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    T: float = 70.0
    integrator: str = "rk4"
    record_stride: int = 1
    controller: str = "continuous"
    q0: tuple | None = None
    v0: tuple | None = None

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be > 0")
        if not (self.T >= 0 and math.isfinite(self.T)):
            raise ValueError("T must be >= 0")
        if self.integrator not in ("rk4", "euler"):
            raise ValueError("integrator must be 'rk4' or 'euler'")
        if self.controller not in ("continuous", "zoh"):
            raise ValueError("controller must be 'continuous' or 'zoh'")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError("record_stride must be an integer >= 1")
        if self.q0 is not None and len(self.q0) != 6:
            raise ValueError("q0 must have 6 entries")
        if self.v0 is not None and len(self.v0) != 3:
            raise ValueError("v0 must have 3 entries")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.T / self.dt + 1e-9))


@dataclass
class SimTrace:
    """Recorded closed-loop signals, one row per recorded step."""

    data: np.ndarray
    columns: list = field(default_factory=lambda: list(COLUMNS))
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def cols(self, *names: str) -> np.ndarray:
        return self.data[:, [self.columns.index(n) for n in names]]

    @property
    def t(self) -> np.ndarray:
        return self["t"]

    def write_csv(self, path, extras: bool = True) -> None:
        cols = self.columns if extras else HEADER
        idx = [self.columns.index(c) for c in cols]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.data[:, idx]:
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def read_csv(cls, path) -> "SimTrace":
        """Strict reader: the fixed header must lead and every row be complete."""
        with open(path, newline="") as fh:
            text = fh.read()
        if text and not text.endswith("\n"):
            raise TraceParseError(f"{path}: truncated final row")
        rows = list(csv.reader(text.splitlines()))
        if not rows:
            raise TraceParseError(f"{path}: empty trace")
        header = rows[0]
        if header[: len(HEADER)] != HEADER:
            raise TraceParseError(f"{path}: unexpected header")
        data = np.empty((len(rows) - 1, len(header)))
        for i, row in enumerate(rows[1:]):
            if len(row) != len(header):
                raise TraceParseError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
            try:
                data[i] = [float(x) for x in row]
            except ValueError as exc:
                raise TraceParseError(f"{path}: row {i + 2}: {exc}") from None
        return cls(data=data, columns=header)


# -- dynamics -----------------------------------------------------------------


def dynamics_rhs(q, v, tau, model: UncertaintyModel | None, p: RobotParams, t: float, force=None):
    """q' = J(q) v and v' = M~^-1 (B~ tau - C~ v - f~).

    ``force`` may be a precompiled evaluator from ``compile_force``; otherwise
    it is built from ``model``.  Returns ``(q_dot, v_dot, f_tilde)``.
    """
    if force is None and model is not None:
        force = compile_force(model)
    q_dot = mdl.qdot(q, v, p)
    df, dr = q[4], q[5]
    if force is None:
        ft = (0.0, 0.0, 0.0)
    else:
        f = force(q, q_dot, t)
        ft = (mdl.f11(q, f, p), f[4], f[5])
    two_id = 2.0 * p.I_delta
    v_dot = (
        (mdl.b11(df, dr, p) * tau[0] - mdl.c11(df, dr, v[1], v[2], p) * v[0] - ft[0]) / mdl.m11(df, dr, p),
        (2.0 * tau[1] - ft[1]) / two_id,
        (2.0 * tau[2] - ft[2]) / two_id,
    )
    return q_dot, v_dot, ft


def rk4_step(state: Sequence[float], rhs: Callable, dt: float, t: float = 0.0) -> list:
    """Classical RK4 step for ``x' = rhs(t, x)`` on a flat state list."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    n = len(state)
    k1 = rhs(t, state)
    s2 = [state[i] + 0.5 * dt * k1[i] for i in range(n)]
    k2 = rhs(t + 0.5 * dt, s2)
    s3 = [state[i] + 0.5 * dt * k2[i] for i in range(n)]
    k3 = rhs(t + 0.5 * dt, s3)
    s4 = [state[i] + dt * k3[i] for i in range(n)]
    k4 = rhs(t + dt, s4)
    return [state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(n)]


def euler_step(state: Sequence[float], rhs: Callable, dt: float, t: float = 0.0) -> list:
    k = rhs(t, state)
    return [s + dt * d for s, d in zip(state, k)]


# -- closed loop --------------------------------------------------------------


class _Loop:
    """Closed-loop vector field plus per-sample signal evaluation."""

    def __init__(self, ref_fn, kin: KinGains, gains: PIGains, model: UncertaintyModel, p: RobotParams):
        self.ref_fn = ref_fn
        self.kin = kin
        self.gains = gains
        self.p = p
        self.force = compile_force(model)
        self.kp_t = gains.Kp_torque
        self.ki_t = gains.Ki_torque
        self.tau_ff = kin.tau_ff
        self.inv_tau = 1.0 / kin.tau_ff
        self.tau_limit = gains.tau_limit
        self.A = p.A
        self.IA2 = p.I * p.A**2
        self.k_spin = 4.0 * p.I_phi / p.r**2
        self.two_id = 2.0 * p.I_delta
        self.a2ab = p.a**2 / (p.a**2 + p.b**2)

    def signals(self, t: float, x: Sequence[float]) -> dict:
        """Every derived signal at one state of the continuous-mode ODE."""
        p, gains = self.p, self.gains
        q, v, eta, vd, qd = x[0:6], x[6:9], x[9:12], x[12:15], x[15:21]
        ref = self.ref_fn(t)
        vwd, df_d, dr_d, wf, wr, _, sat = law_chain(q, ref, self.kin, p)
        raw = (vwd, wf, wr)
        vdot_d = tuple((raw[i] - vd[i]) / self.tau_ff for i in range(3))
        e_v = tuple(v[i] - vd[i] for i in range(3))
        u_d = feedforward(qd, vd, vdot_d, p)
        tau, tsat = torque_law(q, e_v, eta, u_d, gains, p)
        q_dot, v_dot, ft = dynamics_rhs(q, v, tau, None, p, t, self.force)
        ftd = self._f_tilde(q, vd, t)
        eta_dot = tuple(
            0.0 if abs(eta[i]) >= gains.eta_limit[i] and eta[i] * e_v[i] > 0 else e_v[i] for i in range(3)
        )
        return {
            "ref": ref,
            "raw": raw,
            "delta_d": (df_d, dr_d),
            "sat": sat or tsat,
            "vdot_d": vdot_d,
            "e_v": e_v,
            "tau": tau,
            "q_dot": q_dot,
            "v_dot": v_dot,
            "ft": ft,
            "ftd": ftd,
            "eta_dot": eta_dot,
            "qd_dot": mdl.qdot(qd, vd, p),
        }

    def _f_tilde(self, q, v, t):
        if self.force is None:
            return (0.0, 0.0, 0.0)
        f = self.force(q, mdl.qdot(q, v, self.p), t)
        return (mdl.f11(q, f, self.p), f[4], f[5])

    def rhs(self, t: float, x: Sequence[float]) -> list:
        """Closed-loop vector field with the model terms inlined."""
        p, kin = self.p, self.kin
        r, A, IA2, m = p.r, self.A, self.IA2, p.m
        th, df, dr = x[2], x[4], x[5]
        v0, v1, v2 = x[6], x[7], x[8]
        vd0, vd1, vd2 = x[12], x[13], x[14]
        ref = self.ref_fn(t)
        vwd, _, _, wf, wr, _, _ = law_chain(x, ref, kin, p)
        inv_tau = self.inv_tau
        a0 = (vwd - vd0) * inv_tau
        a1 = (wf - vd1) * inv_tau
        a2 = (wr - vd2) * inv_tau
        e0, e1, e2 = v0 - vd0, v1 - vd1, v2 - vd2

        # feedforward at q_d
        qdf, qdr, qth = x[19], x[20], x[17]
        sfd, cfd, srd, crd = math.sin(qdf), math.cos(qdf), math.sin(qdr), math.cos(qdr)
        dsd = sfd - srd
        m11d = self.k_spin + 0.5 * m * (1.0 + cfd * crd + sfd * srd) + IA2 * dsd * dsd
        c11d = IA2 * dsd * (cfd * vd1 - crd * vd2) - 0.25 * m * (sfd * crd - cfd * srd) * (vd1 - vd2)
        u0 = m11d * a0 + c11d * vd0
        u1 = self.two_id * a1
        u2 = self.two_id * a2

        # plant at q
        sf, cf, sr, cr = math.sin(df), math.cos(df), math.sin(dr), math.cos(dr)
        sth, cth = math.sin(th), math.cos(th)
        ds = sf - sr
        cdiff = cf * cr + sf * sr
        m11 = self.k_spin + 0.5 * m * (1.0 + cdiff) + IA2 * ds * ds
        c11 = IA2 * ds * (cf * v1 - cr * v2) - 0.25 * m * (sf * cr - cf * sr) * (v1 - v2)
        b11 = (2.0 * (1.0 + cdiff) + self.a2ab * ds * ds + 4.0) / r
        jx = 0.5 * ((cf + cr) * cth - (sf + sr) * sth)
        jy = 0.5 * ((sf + sr) * cth + (cf + cr) * sth)
        jth = A * ds
        jphi = 1.0 / r

        kp, ki, eta = self.kp_t, self.ki_t, x[9:12]
        w0 = -kp[0] * e0 - ki[0] * eta[0] + u0
        w1 = -kp[1] * e1 - ki[1] * eta[1] + u1
        w2 = -kp[2] * e2 - ki[2] * eta[2] + u2
        tau0, tau1, tau2 = w0 / b11, 0.5 * w1, 0.5 * w2
        lim = self.tau_limit
        if lim is not None:
            tau0 = max(-lim[0], min(lim[0], tau0))
            tau1 = max(-lim[1], min(lim[1], tau1))
            tau2 = max(-lim[2], min(lim[2], tau2))

        q_dot = (jx * v0, jy * v0, jth * v0, jphi * v0, v1, v2)
        if self.force is None:
            ft0 = ft1 = ft2 = 0.0
        else:
            f = self.force(x, q_dot, t)
            ft0 = jx * f[0] + jy * f[1] + jth * f[2] + jphi * f[3]
            ft1, ft2 = f[4], f[5]
        two_id = self.two_id
        vdot0 = (b11 * tau0 - c11 * v0 - ft0) / m11
        vdot1 = (2.0 * tau1 - ft1) / two_id
        vdot2 = (2.0 * tau2 - ft2) / two_id

        elim = self.gains.eta_limit
        h0 = 0.0 if abs(eta[0]) >= elim[0] and eta[0] * e0 > 0 else e0
        h1 = 0.0 if abs(eta[1]) >= elim[1] and eta[1] * e1 > 0 else e1
        h2 = 0.0 if abs(eta[2]) >= elim[2] and eta[2] * e2 > 0 else e2

        sthd, cthd = math.sin(qth), math.cos(qth)
        jxd = 0.5 * ((cfd + crd) * cthd - (sfd + srd) * sthd)
        jyd = 0.5 * ((sfd + srd) * cthd + (cfd + crd) * sthd)
        return [
            *q_dot, vdot0, vdot1, vdot2, h0, h1, h2, a0, a1, a2,
            jxd * vd0, jyd * vd0, A * dsd * vd0, jphi * vd0, vd1, vd2,
        ]


def initial_state(cfg: SimConfig, ref_fn, kin: KinGains, p: RobotParams) -> list:
    """Flat continuous-mode state at t=0.

    Without ``q0`` the robot starts on the reference pose with its steering
    seeded from the reference motion, so the initial steering-rate demand is
    zero.  Without ``v0`` it starts at the raw reference velocity.  The filter
    is seeded with the raw reference and ``q_d(0) = q(0)``.
    """
    ref = ref_fn(0.0)
    if cfg.q0 is None:
        q = [ref.x_d, ref.y_d, ref.theta_d, 0.0, 0.0, 0.0]
        err = pose_error(q, ref, wrap=True)
        df0, dr0, vwd = initial_steering(err, ref, kin, p, q[2])
        omega_virt = ref.omega_d
        q[4], q[5], _, _ = yaw_allocation(df0, dr0, vwd, omega_virt, kin, p)
    else:
        q = [float(x) for x in cfg.q0]
    vwd, _, _, wf, wr, _, _ = law_chain(q, ref, kin, p)
    raw = [vwd, wf, wr]
    v = raw[:] if cfg.v0 is None else [float(x) for x in cfg.v0]
    return [*q, *v, 0.0, 0.0, 0.0, *raw, *q]


def _storage(q, e_v, eta, ki_t, p: RobotParams) -> float:
    m = (mdl.m11(q[4], q[5], p), 2.0 * p.I_delta, 2.0 * p.I_delta)
    return 0.5 * sum(m[i] * e_v[i] ** 2 + ki_t[i] * eta[i] ** 2 for i in range(3))


def _row(t: float, x: Sequence[float], s: dict, loop: _Loop) -> list:
    q, v, eta, qd = x[0:6], x[6:9], x[9:12], x[15:21]
    vd = x[12:15]
    err = pose_error(q, s["ref"], wrap=True)
    V = _storage(q, s["e_v"], eta, loop.ki_t, loop.p)
    return [
        t, *q, *v, *vd, *s["delta_d"], *s["tau"], *s["e_v"], *err, *s["ft"], V, 1.0 if s["sat"] else 0.0,
        *s["vdot_d"], *eta, *s["ftd"], *qd, *s["raw"],
    ]


def run(
    cfg: SimConfig,
    traj: TrajectorySpec,
    kin: KinGains,
    gains: PIGains,
    model: UncertaintyModel | None = None,
    p: RobotParams | None = None,
) -> SimTrace:
    """Simulate the closed loop and record a trace.

    Deterministic for a fixed configuration.  Raises ``SimulationDiverged``
    (carrying the partial trace) if any state component becomes non-finite
    or exceeds 1e6 in magnitude.
    """
    model = model or UncertaintyModel()
    p = p or RobotParams()
    ref_fn = traj.evaluator()
    loop = _Loop(ref_fn, kin, gains, model, p)
    step = rk4_step if cfg.integrator == "rk4" else euler_step
    x = initial_state(cfg, ref_fn, kin, p)
    dt, n, stride = cfg.dt, cfg.n_steps, int(cfg.record_stride)
    rows = []
    meta = {"dt": dt, "T": cfg.T, "integrator": cfg.integrator, "controller": cfg.controller, "stride": stride}

    if cfg.controller == "continuous":
        advance = lambda k, t, x: step(x, loop.rhs, dt, t)  # noqa: E731
        sample = lambda t, x: loop.signals(t, x)  # noqa: E731
    else:
        zoh = _ZohLoop(loop, dt)
        advance = lambda k, t, x: zoh.advance(t, x, step)  # noqa: E731
        sample = lambda t, x: zoh.sample(t, x)  # noqa: E731

    for k in range(n + 1):
        t = k * dt
        if k % stride == 0:
            rows.append(_row(t, x, sample(t, x), loop))
        if k == n:
            break
        x = advance(k, t, x)
        worst = max(abs(c) for c in x)
        if not worst <= DIVERGENCE_LIMIT:
            trace = SimTrace(np.array(rows), meta=meta)
            i = max(range(len(x)), key=lambda j: abs(x[j]) if math.isfinite(x[j]) else math.inf)
            raise SimulationDiverged(f"state component {i} reached {x[i]!r} at t={t + dt:.6g}", trace)
    return SimTrace(np.array(rows, dtype=float).reshape(len(rows), len(COLUMNS)), meta=meta)


class _ZohLoop:
    """Sampled controller: references and torques held across each step."""

    def __init__(self, loop: _Loop, dt: float):
        self.loop = loop
        self.dt = dt
        self.alpha = -math.expm1(-dt / loop.tau_ff)
        self.prev_ev = None

    def sample(self, t, x) -> dict:
        s = self.loop.signals(t, x)
        return s

    def advance(self, t, x, step):
        loop, p, dt = self.loop, self.loop.p, self.dt
        s = loop.signals(t, x)
        tau = s["tau"]
        e_v = s["e_v"]
        vd = x[12:15]
        prev = e_v if self.prev_ev is None else self.prev_ev
        force = loop.force

        def plant(tt, y):
            q_dot, v_dot, _ = dynamics_rhs(y[0:6], y[6:9], tau, None, p, tt, force)
            return [*q_dot, *v_dot, *mdl.qdot(y[9:15], vd, p)]

        y = step([*x[0:9], *x[15:21]], plant, dt, t)
        eta = [
            max(-lim, min(lim, x[9 + i] + 0.5 * dt * (prev[i] + e_v[i])))
            for i, lim in enumerate(loop.gains.eta_limit)
        ]
        raw = s["raw"]
        vd_new = [vd[i] + self.alpha * (raw[i] - vd[i]) for i in range(3)]
        self.prev_ev = e_v
        return [*y[0:9], *eta, *vd_new, *y[9:15]]
