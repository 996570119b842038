"""Inner-loop PI law with model-based feedforward.

    tau = B~(q)^-1 (-K_P e_v - K_I eta + M~(q_d) v_d' + C~(q_d, q_d') v_d),   eta' = e_v

Gains are configured in the current domain (A per unit error) and mapped to
the torque domain by the motor torque constant ``K_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from . import model as mdl
from .model import RobotParams, Wrench

PRESET_KP = (1.563, 2.344, 2.344)
PRESET_KI = (0.061, 0.092, 0.092)
PRESET_KT = 1.923


def _triple(value, name: str) -> tuple[float, float, float]:
    if isinstance(value, (int, float)):
        value = (value,) * 3
    out = tuple(float(x) for x in value)
    if len(out) != 3:
        raise ValueError(f"{name} must have 3 entries")
    return out


@dataclass(frozen=True)
class PIGains:
    Kp: tuple[float, float, float] = PRESET_KP
    Ki: tuple[float, float, float] = PRESET_KI
    K_t: float = PRESET_KT
    eta_limit: tuple[float, float, float] = (10.0, 10.0, 10.0)
    tau_limit: tuple[float, float, float] | None = None

    def __post_init__(self):
        for name in ("Kp", "Ki", "eta_limit"):
            vals = _triple(getattr(self, name), name)
            if not all(math.isfinite(x) and x > 0 for x in vals):
                raise ValueError(f"PIGains.{name} entries must be finite and > 0")
            object.__setattr__(self, name, vals)
        if not self.K_t > 0:
            raise ValueError("PIGains.K_t must be > 0")
        if self.tau_limit is not None:
            lim = _triple(self.tau_limit, "tau_limit")
            if not all(x > 0 for x in lim):
                raise ValueError("PIGains.tau_limit entries must be > 0")
            object.__setattr__(self, "tau_limit", lim)

    @property
    def Kp_torque(self) -> tuple[float, float, float]:
        return tuple(self.K_t * k for k in self.Kp)

    @property
    def Ki_torque(self) -> tuple[float, float, float]:
        return tuple(self.K_t * k for k in self.Ki)


@dataclass(frozen=True)
class ControllerState:
    eta: tuple[float, float, float] = (0.0, 0.0, 0.0)
    e_v: tuple[float, float, float] = (0.0, 0.0, 0.0)


def reset(state: ControllerState | None = None) -> ControllerState:
    return ControllerState()


def feedforward(
    q_d: Sequence[float], v_d: Sequence[float], v_dot_d: Sequence[float], p: RobotParams
) -> tuple[float, float, float]:
    """u_d = M~(q_d) v_d' + C~(q_d, q_d') v_d, with q_d' = J(q_d) v_d."""
    df, dr = q_d[4], q_d[5]
    return (
        mdl.m11(df, dr, p) * v_dot_d[0] + mdl.c11(df, dr, v_d[1], v_d[2], p) * v_d[0],
        2.0 * p.I_delta * v_dot_d[1],
        2.0 * p.I_delta * v_dot_d[2],
    )


def torque_law(
    q: Sequence[float],
    e_v: Sequence[float],
    eta: Sequence[float],
    u_d: Sequence[float],
    gains: PIGains,
    p: RobotParams,
) -> tuple[Wrench, bool]:
    """Evaluate the control law; returns the torque and a saturation flag."""
    kp, ki = gains.Kp_torque, gains.Ki_torque
    w = [-kp[i] * e_v[i] - ki[i] * eta[i] + u_d[i] for i in range(3)]
    tau = [w[0] / mdl.b11(q[4], q[5], p), 0.5 * w[1], 0.5 * w[2]]
    sat = False
    if gains.tau_limit is not None:
        for i, lim in enumerate(gains.tau_limit):
            if abs(tau[i]) > lim:
                tau[i] = math.copysign(lim, tau[i])
                sat = True
    return Wrench(*tau), sat


def clamp_eta(eta: Sequence[float], gains: PIGains) -> tuple[float, float, float]:
    return tuple(max(-lim, min(lim, x)) for x, lim in zip(eta, gains.eta_limit))


def control_step(q, v, ref, q_d, gains: PIGains, state: ControllerState, dt: float, p: RobotParams | None = None):
    """One sampled controller update.

    ``ref`` is a ``ReferenceState`` (its ``v_d`` and ``v_dot_d`` are used).
    The torque uses the integral state at the start of the step; ``eta`` is
    then advanced by the trapezoidal rule and clamped.  Returns
    ``(tau, new_state, e_v)``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    p = p or RobotParams()
    v_d = ref.v_d
    e_v = tuple(v[i] - v_d[i] for i in range(3))
    u_d = feedforward(q_d, v_d, ref.v_dot_d, p)
    tau, _ = torque_law(q, e_v, state.eta, u_d, gains, p)
    eta = clamp_eta([state.eta[i] + 0.5 * dt * (state.e_v[i] + e_v[i]) for i in range(3)], gains)
    return tau, ControllerState(eta=eta, e_v=e_v), e_v
