"""Structural constants of the reduced model and the sufficient gain condition.

All constants are closed-form upper bounds; the ``sampled_*`` helpers estimate
the same suprema by brute force so that tests can confirm each formula bounds
its sampled counterpart.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as mdl
from .model import RobotParams
from .uncertainty import UncertaintyModel


@dataclass(frozen=True)
class EnvelopeSpec:
    """Operating envelope of the reference signals.

    ``V_d`` defaults to the weighted-norm value
    ``sqrt(v_w_max^2 + 2 a^2 delta_dot_max^2)`` (requires ``a``);
    pass ``norm="euclidean"`` to use ``sqrt(v_w_max^2 + 2 delta_dot_max^2)``.
    """

    delta_range: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    delta_dot_max: float = math.pi / 2
    v_w_max: float = 0.13
    A_d: float = 0.5
    V_d: float | None = None
    a: float = 0.1125
    norm: str = "weighted"

    def __post_init__(self):
        lo, hi = self.delta_range
        object.__setattr__(self, "delta_range", (float(lo), float(hi)))
        if not lo < hi:
            raise ValueError("delta_range must be an increasing interval")
        for name in ("delta_dot_max", "v_w_max", "A_d", "a"):
            if not getattr(self, name) > 0:
                raise ValueError(f"EnvelopeSpec.{name} must be > 0")
        if self.norm not in ("weighted", "euclidean"):
            raise ValueError("norm must be 'weighted' or 'euclidean'")
        if self.V_d is None:
            object.__setattr__(self, "V_d", self.derived_V_d())
        elif not self.V_d > 0:
            raise ValueError("EnvelopeSpec.V_d must be > 0")

    def derived_V_d(self) -> float:
        scale = self.a if self.norm == "weighted" else 1.0
        return math.sqrt(self.v_w_max**2 + 2.0 * (scale * self.delta_dot_max) ** 2)


@dataclass
class BoundSet:
    a1: float = 0.0
    a2: float = 0.0
    b_c: float = 0.0
    sigma_J: float = 0.0
    sigma_dJ: float = 0.0
    L_M: float = 0.0
    L_C1: float = 0.0
    L_C2: float = 0.0
    c_tilde: float = 0.0
    d_tilde: float = 0.0
    d_v: float = 0.0
    A_q: float = 0.0
    A_v: float = 0.0
    A_c: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GainCertificate:
    lambda_min_Kp: float
    K_t: float
    epsilon: float
    mu: float
    mu_eps0: float
    threshold: float
    threshold_eps: float
    passed: bool
    passed_eps0: bool
    l2_gain_bound: float
    margin_current: float = field(default=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        d["pass_eps0"] = d.pop("passed_eps0")
        return d


# -- closed forms -----------------------------------------------------------


def mass_bounds(p: RobotParams) -> tuple[float, float]:
    """Uniform eigenvalue bounds (a1, a2) of M~(q)."""
    spin = 4.0 * p.I_phi / p.r**2
    steer = 2.0 * p.I_delta
    return min(spin, steer), max(spin + p.m + 4.0 * p.I * p.A**2, steer)


def coriolis_bound(p: RobotParams) -> float:
    return 2.0 * p.I * p.A**2 + p.m / 4.0


def jacobian_gain(
    p: RobotParams,
    envelope: EnvelopeSpec | None = None,
    mode: str = "formula",
    n_samples: int = 10_000,
    seed: int = 0,
    samples: np.ndarray | None = None,
) -> float:
    """Induced gain of J(q) under the metric W = diag(1, 1, 1, r^2, 1, 1).

    ``formula`` returns sqrt(2 + 4A^2).  ``sampled`` returns the largest
    sqrt(lambda_max(J^T W J)) over sampled steering angles (or over the
    explicit ``samples``, an (n, 6) array of configurations).
    """
    if mode == "formula":
        return math.sqrt(2.0 + 4.0 * p.A**2)
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    if samples is None:
        samples = sample_configs(envelope or EnvelopeSpec(a=p.a), n_samples, seed)
    W = np.diag([1.0, 1.0, 1.0, p.r**2, 1.0, 1.0])
    best = 0.0
    for q in samples:
        J = mdl.jacobian(q, p)
        best = max(best, math.sqrt(np.linalg.eigvalsh(J.T @ W @ J)[-1]))
    return best


def jacobian_sensitivity(p: RobotParams) -> float:
    return math.sqrt(1.5 + 2.0 * p.A**2)


def lipschitz_constants(p: RobotParams, envelope: EnvelopeSpec) -> tuple[float, float, float]:
    """(L_M, L_C1, L_C2) from gradient bounds of M~11 and C~11."""
    IA2 = p.I * p.A**2
    L_M = math.sqrt(2.0) * (p.m / 2.0 + 4.0 * IA2)
    L_C1 = math.sqrt(2.0) * (p.m / 4.0 + 4.0 * IA2) * envelope.delta_dot_max
    L_C2 = math.sqrt(2.0) * (p.m / 4.0 + 2.0 * IA2)
    return L_M, L_C1, L_C2


def velocity_sensitivity(p: RobotParams, L_f2: float) -> float:
    return jacobian_gain(p) ** 2 * L_f2


def projected_uncertainty(p: RobotParams, unc: UncertaintyModel) -> tuple[float, float]:
    """(c~, d~) = (sigma_J ||c||, sigma_J^2 ||d||)."""
    c, d = unc.bounds()
    sJ = jacobian_gain(p)
    return sJ * float(np.linalg.norm(c)), sJ**2 * float(np.linalg.norm(d))


def residual_coeffs(bounds: BoundSet, envelope: EnvelopeSpec, use_b_c: bool = False) -> tuple[float, float, float]:
    """Time-invariant residual coefficients (A_q, A_v, A_c).

    With ``use_b_c`` the Coriolis bound b_c replaces L_C2, which is tighter
    whenever b_c < L_C2.
    """
    L_C2 = bounds.b_c if use_b_c else bounds.L_C2
    V_d, A_d = envelope.V_d, envelope.A_d
    A_q = bounds.L_M * A_d + bounds.L_C1 * V_d + L_C2 * bounds.sigma_dJ * V_d**2
    A_v = L_C2 * bounds.sigma_J * V_d
    A_c = bounds.c_tilde + bounds.d_tilde * V_d
    return A_q, A_v, A_c


def compute_bounds(
    p: RobotParams,
    envelope: EnvelopeSpec,
    unc: UncertaintyModel | None = None,
    use_b_c: bool = False,
) -> BoundSet:
    """Every structural constant for the given robot, envelope and disturbance."""
    unc = unc or UncertaintyModel()
    a1, a2 = mass_bounds(p)
    L_M, L_C1, L_C2 = lipschitz_constants(p, envelope)
    c_t, d_t = projected_uncertainty(p, unc)
    out = BoundSet(
        a1=a1,
        a2=a2,
        b_c=coriolis_bound(p),
        sigma_J=jacobian_gain(p),
        sigma_dJ=jacobian_sensitivity(p),
        L_M=L_M,
        L_C1=L_C1,
        L_C2=L_C2,
        c_tilde=c_t,
        d_tilde=d_t,
        d_v=velocity_sensitivity(p, unc.lipschitz()[1]),
    )
    out.A_q, out.A_v, out.A_c = residual_coeffs(out, envelope, use_b_c=use_b_c)
    return out


def certify(bounds: BoundSet, gains, epsilon: float = 1e-3) -> GainCertificate:
    """Evaluate lambda_min(K_P) > d_v + A_v + epsilon in the torque domain.

    ``gains`` needs ``Kp`` (current domain) and ``K_t``.  A failing condition
    is reported through ``passed``; it is not an exception.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    lam_cur = float(min(gains.Kp))
    lam = gains.K_t * lam_cur
    need = bounds.d_v + bounds.A_v
    mu = lam - need - epsilon
    mu0 = lam - need
    passed = mu > 0
    return GainCertificate(
        lambda_min_Kp=lam_cur,
        K_t=gains.K_t,
        epsilon=epsilon,
        mu=mu,
        mu_eps0=mu0,
        threshold=need / gains.K_t,
        threshold_eps=(need + epsilon) / gains.K_t,
        passed=bool(passed),
        passed_eps0=bool(mu0 > 0),
        l2_gain_bound=1.0 / mu if passed else math.inf,
        margin_current=lam_cur - (need + epsilon) / gains.K_t,
    )


# -- sampling oracles -------------------------------------------------------


def sample_configs(envelope: EnvelopeSpec, n: int, seed: int = 0) -> np.ndarray:
    """Configurations with heading in [-pi, pi] and steering in the envelope."""
    rng = np.random.default_rng(seed)
    lo, hi = envelope.delta_range
    q = np.zeros((n, 6))
    q[:, 0:2] = rng.uniform(-1.0, 1.0, (n, 2))
    q[:, 2] = rng.uniform(-math.pi, math.pi, n)
    q[:, 3] = rng.uniform(-math.pi, math.pi, n)
    q[:, 4:6] = rng.uniform(lo, hi, (n, 2))
    return q


def sampled_constants(p: RobotParams, envelope: EnvelopeSpec, n: int = 10_000, seed: int = 0) -> dict:
    """Brute-force estimates of the suprema bounded by the closed forms."""
    rng = np.random.default_rng(seed)
    qs = sample_configs(envelope, n, seed)
    wd = envelope.delta_dot_max
    eig_min, eig_max, coriolis = math.inf, 0.0, 0.0
    lm, lc1, lc2 = 0.0, 0.0, 0.0
    for q in qs:
        df, dr = q[4], q[5]
        m = mdl.m11(df, dr, p)
        eig_min = min(eig_min, m, 2 * p.I_delta)
        eig_max = max(eig_max, m, 2 * p.I_delta)
        v = rng.uniform(-1, 1, 3) * (envelope.v_w_max, wd, wd)
        nv = float(v @ v)
        if nv > 0:
            coriolis = max(coriolis, abs(mdl.c11(df, dr, v[1], v[2], p) * v[0]) / nv)
        # secant quotients on random nearby pairs
        step = rng.normal(size=2) * 1e-3
        df2, dr2 = df + step[0], dr + step[1]
        ns = math.hypot(*step)
        lm = max(lm, abs(mdl.m11(df2, dr2, p) - m) / ns)
        w = rng.uniform(-wd, wd, 2)
        lc1 = max(lc1, abs(mdl.c11(df2, dr2, *w, p) - mdl.c11(df, dr, *w, p)) / ns)
        dw = rng.normal(size=2) * 1e-2
        w2 = np.clip(w + dw, -wd, wd)
        nw = float(np.linalg.norm(w2 - w))
        if nw > 0:
            lc2 = max(lc2, abs(mdl.c11(df, dr, *w2, p) - mdl.c11(df, dr, *w, p)) / nw)
    return {
        "eig_min": eig_min,
        "eig_max": eig_max,
        "coriolis_ratio": coriolis,
        "L_M": lm,
        "L_C1": lc1,
        "L_C2": lc2,
        "sigma_J": jacobian_gain(p, envelope, "sampled", samples=qs),
    }
