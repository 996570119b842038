"""Kinematics and reduced velocity-space dynamics of the four-wheel steered robot.

Generalized coordinates are ``q = (x, y, theta, phi, delta_f, delta_r)`` and the
admissible velocity is ``v = (v_w, omega_f, omega_r)``.  The front and rear
wheel pairs share one steering angle each and all four wheels share one spin
angle, so the constrained Lagrangian model collapses to three diagonal
velocity-space equations

    M~(q) v' + C~(q, q') v = B~(q) tau - f~(q, v)

with ``M~ = J^T M J``, ``C~ = J^T M J'``, ``B~ = J^T B`` and ``f~ = J^T f``.

The scalar helpers (``m11``, ``c11``, ``b11``, ``f11``) are the hot path used by
the simulator; the matrix functions wrap them for analysis and tests.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)
_WARNED_I: set[float] = set()


class ConfigState(NamedTuple):
    """Generalized coordinates q (m, m, rad, rad, rad, rad)."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    phi: float = 0.0
    delta_f: float = 0.0
    delta_r: float = 0.0


class BodyVelocity(NamedTuple):
    """Reduced velocity v: wheel speed (m/s) and steering rates (rad/s)."""

    v_w: float = 0.0
    omega_f: float = 0.0
    omega_r: float = 0.0


class Wrench(NamedTuple):
    """Averaged drive torque and front/rear steering torques (N m)."""

    tau_w: float = 0.0
    tau_f: float = 0.0
    tau_r: float = 0.0


@dataclass(frozen=True)
class RobotParams:
    """Physical constants of the robot.

    ``I`` defaults to ``I_theta + 4 m_w (a^2 + b^2)`` when not given.  A stored
    ``I`` that disagrees with the recomputed value by more than 1e-3 relative
    only triggers a warning, because published tables round it.
    """

    r: float = 0.0254
    a: float = 0.1125
    b: float = 0.1125
    m: float = 3.50
    m_w: float = 0.03203
    I_theta: float = 0.03333
    I_phi: float = 1.03e-5
    I_delta: float = 0.002
    I: float | None = 0.0365

    def __post_init__(self):
        for name in ("r", "a", "b", "m", "m_w", "I_theta", "I_phi", "I_delta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"RobotParams.{name} must be finite and > 0, got {value!r}")
        if self.I is None:
            object.__setattr__(self, "I", self.I_recomputed)
        elif not (math.isfinite(self.I) and self.I > 0.0):
            raise ValueError(f"RobotParams.I must be finite and > 0, got {self.I!r}")
        elif abs(self.I - self.I_recomputed) > 1e-3 * self.I_recomputed and self.I not in _WARNED_I:
            _WARNED_I.add(self.I)
            log.warning(
                "yaw inertia I=%g differs from I_theta + 4 m_w (a^2+b^2) = %.6g",
                self.I,
                self.I_recomputed,
            )

    @cached_property
    def A(self) -> float:
        """Steering-to-yaw geometry factor a / (2a^2 + 2b^2), 1/m."""
        return self.a / (2.0 * self.a**2 + 2.0 * self.b**2)

    @property
    def I_recomputed(self) -> float:
        return self.I_theta + 4.0 * self.m_w * (self.a**2 + self.b**2)


# -- scalar entries ---------------------------------------------------------


def m11(delta_f: float, delta_r: float, p: RobotParams) -> float:
    ds = math.sin(delta_f) - math.sin(delta_r)
    return (
        4.0 * p.I_phi / p.r**2
        + 0.5 * p.m * (1.0 + math.cos(delta_f - delta_r))
        + p.I * p.A**2 * ds * ds
    )


def c11(delta_f: float, delta_r: float, ddelta_f: float, ddelta_r: float, p: RobotParams) -> float:
    ds = math.sin(delta_f) - math.sin(delta_r)
    return (
        p.I * p.A**2 * ds * (math.cos(delta_f) * ddelta_f - math.cos(delta_r) * ddelta_r)
        - 0.25 * p.m * math.sin(delta_f - delta_r) * (ddelta_f - ddelta_r)
    )


def b11(delta_f: float, delta_r: float, p: RobotParams) -> float:
    ds = math.sin(delta_f) - math.sin(delta_r)
    return (
        2.0 * (1.0 + math.cos(delta_f - delta_r))
        + p.a**2 / (p.a**2 + p.b**2) * ds * ds
        + 4.0
    ) / p.r


def f11(q: Sequence[float], f: Sequence[float], p: RobotParams) -> float:
    """First component of J^T f, written out term by term."""
    _, _, th, _, df, dr = q
    return (
        0.5 * (math.cos(df + th) + math.cos(dr + th)) * f[0]
        + 0.5 * (math.sin(df + th) + math.sin(dr + th)) * f[1]
        + p.A * (math.sin(df) - math.sin(dr)) * f[2]
        + f[3] / p.r
    )


def jacobian_col(q: Sequence[float], p: RobotParams) -> tuple[float, float, float, float]:
    """Non-trivial first column of J(q): (x', y', theta', phi') per unit v_w."""
    _, _, th, _, df, dr = q
    return (
        0.5 * (math.cos(df + th) + math.cos(dr + th)),
        0.5 * (math.sin(df + th) + math.sin(dr + th)),
        p.A * (math.sin(df) - math.sin(dr)),
        1.0 / p.r,
    )


def qdot(q: Sequence[float], v: Sequence[float], p: RobotParams) -> list[float]:
    """q' = J(q) v without building the matrix."""
    jx, jy, jth, jphi = jacobian_col(q, p)
    vw = v[0]
    return [jx * vw, jy * vw, jth * vw, jphi * vw, v[1], v[2]]


# -- matrices ---------------------------------------------------------------


def jacobian(q: Sequence[float], p: RobotParams) -> np.ndarray:
    """Kinematic map J(q) (6x3) with q' = J(q) v."""
    J = np.zeros((6, 3))
    J[:4, 0] = jacobian_col(q, p)
    J[4, 1] = 1.0
    J[5, 2] = 1.0
    return J


def constraint_matrix(q: Sequence[float], p: RobotParams) -> np.ndarray:
    """Pfaffian constraint matrix A(q) (3x6), annihilating J(q)."""
    _, _, th, _, df, dr = q
    s1 = 0.5 * (math.sin(df + th) + math.sin(dr + th))
    s2 = 0.5 * (math.cos(df + th) + math.cos(dr + th))
    s3 = p.A * (math.sin(df) - math.sin(dr))
    return np.array(
        [
            [s1, -s2, 0.0, 0.0, 0.0, 0.0],
            [s3, 0.0, -s2, 0.0, 0.0, 0.0],
            [0.0, s3, -s1, 0.0, 0.0, 0.0],
        ]
    )


def mass_matrix_full(p: RobotParams) -> np.ndarray:
    return np.diag([p.m, p.m, p.I, 4.0 * p.I_phi, 2.0 * p.I_delta, 2.0 * p.I_delta])


def input_matrix_full(q: Sequence[float], p: RobotParams) -> np.ndarray:
    """Full-space input matrix B(q) (6x3)."""
    _, _, th, _, df, dr = q
    B = np.zeros((6, 3))
    B[0, 0] = 2.0 / p.r * (math.cos(df + th) + math.cos(dr + th))
    B[1, 0] = 2.0 / p.r * (math.sin(df + th) + math.sin(dr + th))
    B[2, 0] = 2.0 * p.a / p.r * (math.sin(df) - math.sin(dr))
    B[3, 0] = 4.0
    B[4, 1] = 2.0
    B[5, 2] = 2.0
    return B


def m_tilde(q: Sequence[float], p: RobotParams) -> np.ndarray:
    """Reduced inertia diag(M~11, 2 I_delta, 2 I_delta)."""
    return np.diag([m11(q[4], q[5], p), 2.0 * p.I_delta, 2.0 * p.I_delta])


def c_tilde(q: Sequence[float], delta_dot_f: float, delta_dot_r: float, p: RobotParams) -> np.ndarray:
    """Reduced Coriolis matrix; only the (1, 1) entry is non-zero."""
    C = np.zeros((3, 3))
    C[0, 0] = c11(q[4], q[5], delta_dot_f, delta_dot_r, p)
    return C


def b_tilde(q: Sequence[float], p: RobotParams) -> np.ndarray:
    """Reduced input matrix diag(B~11, 2, 2); B~11 >= 4/r so always invertible."""
    return np.diag([b11(q[4], q[5], p), 2.0, 2.0])


def f_tilde_project(q: Sequence[float], f_full: Sequence[float], p: RobotParams) -> np.ndarray:
    """Project a generalized force onto velocity space: J(q)^T f."""
    return np.array([f11(q, f_full, p), f_full[4], f_full[5]], dtype=float)
