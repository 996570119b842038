"""Memoryless disturbance models f(q, q', t) with declared bounds.

Each model carries per-coordinate bounds ``c`` and ``d`` such that
``|f_k| <= c_k + d_k |q'_k|`` on the operating envelope, plus Lipschitz caps
``L_f1`` (in q) and ``L_f2`` (in q').  Bounds left as ``None`` are derived from
the model parameters.

The ``metric`` field states how the wheel-spin coordinate is measured.  With
``"euclidean"`` a viscous coefficient acts on the spin rate directly,
``f_phi = b_f phi'``.  With ``"weighted"`` spin is measured as rim speed
``r phi'`` and its generalized force as ``f_phi / r``, so the same ``b_f``
becomes ``f_phi = b_f r^2 phi'`` (a drag of ``b_f v_w`` at the rim).  In that
metric ``L_f2 = b_f`` is the operator norm that the velocity-sensitivity bound
``d_v <= sigma_J^2 L_f2`` actually needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import RobotParams, qdot

KINDS = ("none", "viscous", "constant_bias", "gravity_plane", "thruster_pulse", "composite")
METRICS = ("euclidean", "weighted")

_ZERO6 = (0.0,) * 6

def _vec6(value, name: str) -> tuple[float, ...]:
    out = tuple(float(x) for x in value)
    if len(out) != 6:
        raise ValueError(f"{name} must have 6 entries, got {len(out)}")
    return out

@dataclass(frozen=True)
class Pulse:
    t_start: float
    t_end: float
    force: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "force", _vec6(self.force, "pulse force"))
        if self.t_end < self.t_start:
            raise ValueError("pulse t_end must be >= t_start")

@dataclass(frozen=True)
class UncertaintyModel:
    kind: str = "none"
    metric: str = "euclidean"
    # viscous
    b_f: float = 0.0
    steering_viscous: bool = False
    # constant_bias
    c_bias: tuple[float, ...] = _ZERO6
    # gravity_plane; direction is the angle of the f vector in the x-y plane
    g: float = 0.0
    direction: float = -math.pi / 2
    mass: float = 0.0
    # thruster_pulse
    pulses: tuple[Pulse, ...] = ()
    # composite
    parts: tuple["UncertaintyModel", ...] = ()
    # wheel radius, required by the weighted metric
    radius: float | None = None
    # declared bounds; None means derive from the parameters
    c: tuple[float, ...] | None = None
    d: tuple[float, ...] | None = None
    L_f1: float | None = None
    L_f2: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown uncertainty kind {self.kind!r}; expected one of {KINDS}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        object.__setattr__(self, "c_bias", _vec6(self.c_bias, "c_bias"))
        object.__setattr__(
            self, "pulses", tuple(p if isinstance(p, Pulse) else Pulse(*p) for p in self.pulses)
        )
        object.__setattr__(self, "parts", tuple(self.parts))
        if self.c is not None:
            object.__setattr__(self, "c", _vec6(self.c, "c"))
        if self.d is not None:
            object.__setattr__(self, "d", _vec6(self.d, "d"))
        if self.b_f < 0 or self.g < 0 or self.mass < 0:
            raise ValueError("b_f, g and mass must be non-negative")
        if self.metric == "weighted" and self.kind == "viscous" and not self.radius:
            raise ValueError("weighted viscous model needs the wheel radius")

    @property
    def time_dependent(self) -> bool:
        """Pulse schedules depend on t and are excluded from Lipschitz checks."""
        if self.kind == "composite":
            return any(part.time_dependent for part in self.parts)
        return self.kind == "thruster_pulse"

    # -- bounds -------------------------------------------------------------

    def _auto_c(self) -> np.ndarray:
        if self.kind == "constant_bias":
            return np.abs(np.array(self.c_bias))
        if self.kind == "gravity_plane":
            w = self.mass * self.g
            return np.array([abs(w * math.cos(self.direction)), abs(w * math.sin(self.direction)), 0, 0, 0, 0])
        if self.kind == "thruster_pulse":
            if not self.pulses:
                return np.zeros(6)
            return np.max([np.abs(p.force) for p in self.pulses], axis=0)
        if self.kind == "composite":
            return sum((part.bounds()[0] for part in self.parts), np.zeros(6))
        return np.zeros(6)

    def _auto_d(self) -> np.ndarray:
        if self.kind == "viscous":
            d = np.zeros(6)
            d[3] = self.b_f
            if self.steering_viscous:
                d[4] = d[5] = self.b_f
            return d
        if self.kind == "composite":
            return sum((part.bounds()[1] for part in self.parts), np.zeros(6))
        return np.zeros(6)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Declared (c, d), falling back to the derived values."""
        c = np.array(self.c) if self.c is not None else self._auto_c()
        d = np.array(self.d) if self.d is not None else self._auto_d()
        return c, d

    def lipschitz(self) -> tuple[float, float]:
        """Declared (L_f1, L_f2), falling back to the derived values."""
        if self.kind == "composite":
            parts = [part.lipschitz() for part in self.parts]
            auto1 = sum(x for x, _ in parts)
            auto2 = sum(x for _, x in parts)
        elif self.kind == "viscous":
            auto1, auto2 = 0.0, self.b_f
        else:
            auto1, auto2 = 0.0, 0.0
        return (
            self.L_f1 if self.L_f1 is not None else auto1,
            self.L_f2 if self.L_f2 is not None else auto2,
        )

def eval_f(model: UncertaintyModel, q: Sequence[float], q_dot: Sequence[float], t: float) -> np.ndarray:
    """Evaluate the disturbance vector f(q, q', t); pure and deterministic."""
    kind = model.kind
    if kind == "none":
        return np.zeros(6)
    if kind == "viscous":
        f = np.zeros(6)
        scale = 1.0
        if model.metric == "weighted":
            # rim speed r*phi' drives a rim force, mapped back to the spin axis
            scale = model.radius**2
        f[3] = model.b_f * scale * q_dot[3]
        if model.steering_viscous:
            f[4] = model.b_f * q_dot[4]
            f[5] = model.b_f * q_dot[5]
        return f
    if kind == "constant_bias":
        return np.array(model.c_bias)
    if kind == "gravity_plane":
        w = model.mass * model.g
        return np.array([w * math.cos(model.direction), w * math.sin(model.direction), 0, 0, 0, 0])
    if kind == "thruster_pulse":
        f = np.zeros(6)
        for pulse in model.pulses:
            if pulse.t_start <= t < pulse.t_end:
                f += pulse.force
        return f
    return sum((eval_f(part, q, q_dot, t) for part in model.parts), np.zeros(6))

def compile_force(model: UncertaintyModel):
    """Scalar equivalent of ``eval_f`` for hot loops.

    Returns ``None`` for the null model, otherwise a function
    ``(q, q_dot, t) -> list`` of 6 floats.
    """
    kind = model.kind
    if kind == "none":
        return None
    if kind == "viscous":
        k_phi = model.b_f * (model.radius**2 if model.metric == "weighted" else 1.0)
        k_st = model.b_f if model.steering_viscous else 0.0
        return lambda q, qd, t: [0.0, 0.0, 0.0, k_phi * qd[3], k_st * qd[4], k_st * qd[5]]
    if kind == "constant_bias":
        bias = list(model.c_bias)
        return lambda q, qd, t: list(bias)
    if kind == "gravity_plane":
        w = model.mass * model.g
        fx, fy = w * math.cos(model.direction), w * math.sin(model.direction)
        return lambda q, qd, t: [fx, fy, 0.0, 0.0, 0.0, 0.0]
    if kind == "thruster_pulse":
        pulses = model.pulses

        def pulse_force(q, qd, t):
            out = [0.0] * 6
            for pulse in pulses:
                if pulse.t_start <= t < pulse.t_end:
                    out = [a + b for a, b in zip(out, pulse.force)]
            return out

        return pulse_force
    funcs = [f for f in (compile_force(part) for part in model.parts) if f is not None]
    if not funcs:
        return None

    def total(q, qd, t):
        out = [0.0] * 6
        for fn in funcs:
            out = [a + b for a, b in zip(out, fn(q, qd, t))]
        return out

    return total


def weighted_viscous(b_f: float, r: float, **kwargs) -> UncertaintyModel:
    return UncertaintyModel(kind="viscous", metric="weighted", b_f=b_f, radius=r, **kwargs)

def gravity_plane(g: float, mass: float, direction: float = -math.pi / 2, **kwargs) -> UncertaintyModel:
    return UncertaintyModel(kind="gravity_plane", g=g, mass=mass, direction=direction, **kwargs)

def composite(*parts: UncertaintyModel, **kwargs) -> UncertaintyModel:
    return UncertaintyModel(kind="composite", parts=tuple(parts), **kwargs)

# -- verification -----------------------------------------------------------

@dataclass
class AssumptionReport:
    passed: bool
    n_samples: int
    max_component_violation: float
    max_norm_violation: float
    worst_component: int
    worst_sample: dict = field(default_factory=dict)

    def diagnostic(self) -> str:
        if self.passed:
            return f"bounds cover the model over {self.n_samples} samples"
        s = self.worst_sample
        return (
            f"declared bounds violated by {max(self.max_component_violation, self.max_norm_violation):.6g}"
            f" (component {self.worst_component}) at q={s.get('q')}, q_dot={s.get('q_dot')}, t={s.get('t')}"
        )

def _metric_scaling(model: UncertaintyModel, r: float | None) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate scales (force, rate) defining the norm of the model's metric."""
    fs = np.ones(6)
    vs = np.ones(6)
    if model.metric == "weighted" or any(p.metric == "weighted" for p in model.parts):
        if r is None:
            raise ValueError("weighted metric needs the wheel radius")
        fs[3] = 1.0 / r
        vs[3] = r
    return fs, vs

def verify_assumption_bounds(
    model: UncertaintyModel,
    envelope,
    n_samples: int,
    params: RobotParams | None = None,
    seed: int = 0,
    t_max: float = 100.0,
    rtol: float = 1e-12,
) -> AssumptionReport:
    """Sample (q, q', t) over the envelope and check the declared (c, d).

    Both the per-component bound and the aggregated norm bound
    ``||f|| <= ||c|| + ||d|| ||q'||`` are checked; violations are reported
    as signed excess (positive means violated).  Excess below ``rtol`` times
    the force scale is round-off and does not fail the check.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    params = params or RobotParams()
    rng = np.random.default_rng(seed)
    c, d = model.bounds()
    fs, vs = _metric_scaling(model, params.r)
    lo, hi = envelope.delta_range
    worst_comp = -math.inf
    worst_norm = -math.inf
    worst_k = -1
    worst_sample: dict = {}
    scale = 0.0
    for _ in range(n_samples):
        q = np.array(
            [
                rng.uniform(-1, 1),
                rng.uniform(-1, 1),
                rng.uniform(-math.pi, math.pi),
                rng.uniform(-math.pi, math.pi),
                rng.uniform(lo, hi),
                rng.uniform(lo, hi),
            ]
        )
        v = (
            rng.uniform(-envelope.v_w_max, envelope.v_w_max),
            rng.uniform(-envelope.delta_dot_max, envelope.delta_dot_max),
            rng.uniform(-envelope.delta_dot_max, envelope.delta_dot_max),
        )
        qd = np.array(qdot(q, v, params))
        t = rng.uniform(0.0, t_max)
        f = eval_f(model, q, qd, t) * fs
        scale = max(scale, float(np.max(np.abs(f))))
        rate = np.abs(qd) * vs
        comp = np.abs(f) - (c + d * rate)
        k = int(np.argmax(comp))
        norm_excess = np.linalg.norm(f) - (np.linalg.norm(c) + np.linalg.norm(d) * np.linalg.norm(rate))
        if comp[k] > worst_comp or norm_excess > worst_norm:
            if max(comp[k], norm_excess) >= max(worst_comp, worst_norm):
                worst_sample = {"q": q.tolist(), "q_dot": qd.tolist(), "t": t}
                worst_k = k
            worst_comp = max(worst_comp, comp[k])
            worst_norm = max(worst_norm, norm_excess)
    return AssumptionReport(
        passed=bool(max(worst_comp, worst_norm) <= rtol * max(1.0, scale)),
        n_samples=n_samples,
        max_component_violation=float(worst_comp),
        max_norm_violation=float(worst_norm),
        worst_component=worst_k,
        worst_sample=worst_sample,
    )
