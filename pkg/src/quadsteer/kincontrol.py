"""Virtual kinematic controller: pose errors to feasible velocity/steering references.

The chain is pose error -> tracking law -> initial steering from the desired
body-frame velocity -> normalized yaw demand split across front and rear
steering sines -> first-order steering-rate laws.  The raw reference ``v_d``
is passed through a first-order low-pass of time constant ``tau_ff``; the
filter state is what the inner loop tracks and its exact derivative is the
feedforward acceleration ``v_dot_d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .model import BodyVelocity, RobotParams


class PoseRef(NamedTuple):
    x_d: float
    y_d: float
    theta_d: float
    x_dot_d: float
    y_dot_d: float
    v_t: float
    omega_d: float

    @classmethod
    def from_motion(cls, x, y, xd, yd, xdd, ydd, theta_d=None, omega_d=None) -> "PoseRef":
        """Build a reference from position derivatives.

        Heading defaults to the direction of travel and its rate to the path
        curvature times speed.
        """
        v2 = xd * xd + yd * yd
        if theta_d is None:
            theta_d = math.atan2(yd, xd)
        if omega_d is None:
            omega_d = (xd * ydd - yd * xdd) / v2 if v2 > 0 else 0.0
        return cls(x, y, theta_d, xd, yd, math.sqrt(v2), omega_d)


@dataclass(frozen=True)
class KinGains:
    k_x: float = 5.0
    k_y: float = 5.0
    k_theta: float = 5.0
    k_delta: float = 5.0
    eps_v: float = 0.01
    delta_max: float = math.pi / 2
    delta_dot_max: float = math.pi / 2
    tau_ff: float = 0.05

    def __post_init__(self):
        for name in ("k_x", "k_y", "k_theta", "k_delta", "eps_v", "delta_dot_max", "tau_ff"):
            if not getattr(self, name) > 0:
                raise ValueError(f"KinGains.{name} must be > 0")
        if not 0 < self.delta_max <= math.pi / 2:
            raise ValueError("KinGains.delta_max must lie in (0, pi/2]")


@dataclass(frozen=True)
class ReferenceState:
    """Output of one kinematic-controller evaluation.

    ``v_w_d``, ``omega_f_d``, ``omega_r_d`` are the raw law outputs; ``v_d``
    is the filtered reference handed to the inner loop and ``v_dot_d`` its
    derivative.
    """

    v_w_d: float = 0.0
    delta_f_d: float = 0.0
    delta_r_d: float = 0.0
    omega_f_d: float = 0.0
    omega_r_d: float = 0.0
    v_d: BodyVelocity = BodyVelocity()
    v_dot_d: tuple[float, float, float] = (0.0, 0.0, 0.0)
    omega_virt: float = 0.0
    saturated: bool = False

    @property
    def raw(self) -> tuple[float, float, float]:
        return (self.v_w_d, self.omega_f_d, self.omega_r_d)


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(angle, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def unwrap_near(angle: float, reference: float) -> float:
    """The 2*pi-equivalent of ``angle`` closest to ``reference``."""
    return reference + wrap_angle(angle - reference)


def sgn_eps(x: float) -> float:
    return 1.0 if x >= 0.0 else -1.0


def _clamp(x: float, lim: float) -> float:
    return lim if x > lim else (-lim if x < -lim else x)


def pose_error(q: Sequence[float], ref: PoseRef, wrap: bool = False) -> tuple[float, float, float]:
    """Body-frame tracking errors (e_x, e_y, e_theta); ``wrap`` maps e_theta into (-pi, pi]."""
    dx = ref.x_d - q[0]
    dy = ref.y_d - q[1]
    c, s = math.cos(q[2]), math.sin(q[2])
    e_th = ref.theta_d - q[2]
    if wrap:
        e_th = wrap_angle(e_th)
    return (dx * c + dy * s, -dx * s + dy * c, e_th)


def tracking_law(err: Sequence[float], ref: PoseRef, g: KinGains) -> tuple[float, float]:
    """Unicycle tracking law, returning (v_w_d, omega_virt)."""
    e_x, e_y, e_th = err
    v_w_d = ref.v_t * math.cos(e_th) + g.k_x * e_x
    omega_virt = ref.omega_d + g.k_theta * e_th + g.k_y * ref.v_t * e_y
    return v_w_d, omega_virt


def initial_steering(
    err: Sequence[float], ref: PoseRef, g: KinGains, p: RobotParams, theta: float
) -> tuple[float, float, float]:
    """Steering angles pointing the wheels along the desired body velocity.

    The reference velocity is rotated into the body frame, so for a heading
    reference equal to the direction of travel the travel angle reduces to
    the heading error and straight tracking gives zero steering.  Directions
    behind the body are folded into [-pi/2, pi/2] with a negative wheel
    speed.  Returns (delta_f0, delta_r0, v_w_d) where v_w_d is the signed
    magnitude of the desired body velocity.
    """
    e_x, e_y, e_th = err
    beta = math.atan2(ref.y_dot_d, ref.x_dot_d) - theta if ref.v_t > 0 else 0.0
    a = ref.v_t * math.cos(beta) + g.k_x * e_x
    lateral = ref.v_t * math.sin(beta) + g.k_y * ref.v_t * e_y
    yaw_split = g.k_theta * p.a * e_th
    b_f = lateral - yaw_split
    b_r = lateral + yaw_split
    sign = 1.0
    if a < 0.0:
        a, b_f, b_r, lateral, sign = -a, -b_f, -b_r, -lateral, -1.0
    return math.atan2(b_f, a), math.atan2(b_r, a), sign * math.hypot(a, lateral)


def yaw_allocation(
    delta_f0: float, delta_r0: float, v_w_d: float, omega_virt: float, g: KinGains, p: RobotParams
) -> tuple[float, float, bool, float]:
    """Adjust steering so that A (sin df - sin dr) |v| sgn(v) equals omega_virt.

    Returns (delta_f_d, delta_r_d, saturated, omega_virt_achieved).  When the
    sines or angles hit their limits the achieved yaw demand is smaller than
    requested and ``omega_virt`` is scaled by the achieved/demanded ratio.
    """
    speed = sgn_eps(v_w_d) * max(abs(v_w_d), g.eps_v)
    s = omega_virt / (p.A * speed)
    sf0, sr0 = math.sin(delta_f0), math.sin(delta_r0)
    d_req = s - (sf0 - sr0)
    sf = sf0 + 0.5 * d_req
    sr = sr0 - 0.5 * d_req
    saturated = False
    if abs(sf) > 1.0:
        sf, saturated = math.copysign(1.0, sf), True
    if abs(sr) > 1.0:
        sr, saturated = math.copysign(1.0, sr), True
    df = math.atan2(sf, math.sqrt(max(0.0, 1.0 - sf * sf)))
    dr = math.atan2(sr, math.sqrt(max(0.0, 1.0 - sr * sr)))
    if abs(df) > g.delta_max:
        df, saturated = math.copysign(g.delta_max, df), True
    if abs(dr) > g.delta_max:
        dr, saturated = math.copysign(g.delta_max, dr), True
    if saturated and s != 0.0:
        omega_virt *= (math.sin(df) - math.sin(dr)) / s
    return df, dr, saturated, omega_virt


def steering_map(
    err: Sequence[float],
    ref: PoseRef,
    g: KinGains,
    p: RobotParams,
    v_w_d: float,
    omega_virt: float,
    theta: float = 0.0,
) -> tuple[float, float, bool]:
    """Desired steering angles for a given wheel speed and yaw demand."""
    df0, dr0, _ = initial_steering(err, ref, g, p, theta)
    df, dr, sat, _ = yaw_allocation(df0, dr0, v_w_d, omega_virt, g, p)
    return df, dr, sat


def steering_rate_law(
    delta_f: float, delta_r: float, delta_f_d: float, delta_r_d: float, g: KinGains
) -> tuple[float, float]:
    """Proportional steering-rate references, clamped to the rate limit.

    Angle differences are wrapped, so 2*pi-equivalent angles never command
    a full turn.
    """
    lim = g.delta_dot_max
    return (
        _clamp(-g.k_delta * wrap_angle(delta_f - delta_f_d), lim),
        _clamp(-g.k_delta * wrap_angle(delta_r - delta_r_d), lim),
    )


def law_chain(q: Sequence[float], ref: PoseRef, g: KinGains, p: RobotParams) -> tuple:
    """Allocation-free law chain for hot loops.

    Returns (v_w_d, delta_f_d, delta_r_d, omega_f_d, omega_r_d, omega_virt,
    saturated).
    """
    err = pose_error(q, ref, wrap=True)
    _, omega_virt = tracking_law(err, ref, g)
    df0, dr0, v_w_d = initial_steering(err, ref, g, p, q[2])
    df, dr, sat, omega_virt = yaw_allocation(df0, dr0, v_w_d, omega_virt, g, p)
    wf, wr = steering_rate_law(q[4], q[5], df, dr, g)
    return v_w_d, df, dr, wf, wr, omega_virt, sat


def raw_reference(q: Sequence[float], ref: PoseRef, g: KinGains, p: RobotParams) -> ReferenceState:
    """Evaluate the whole law chain at one instant, without filtering."""
    v_w_d, df, dr, wf, wr, omega_virt, sat = law_chain(q, ref, g, p)
    return ReferenceState(
        v_w_d=v_w_d,
        delta_f_d=df,
        delta_r_d=dr,
        omega_f_d=wf,
        omega_r_d=wr,
        v_d=BodyVelocity(v_w_d, wf, wr),
        omega_virt=omega_virt,
        saturated=sat,
    )


def reference_step(
    q: Sequence[float],
    ref: PoseRef,
    g: KinGains,
    p: RobotParams,
    prev: ReferenceState | None,
    dt: float,
) -> ReferenceState:
    """One sampled update of the kinematic controller with reference filtering.

    The filter is discretized exactly for a raw input held over ``dt``.  With
    ``prev=None`` the filter is seeded with the current raw reference, so the
    initial feedforward acceleration is zero.  Emitted steering angles are
    unwrapped to the 2*pi-equivalent nearest the previous ones.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    cur = raw_reference(q, ref, g, p)
    raw = cur.raw
    df_d, dr_d = cur.delta_f_d, cur.delta_r_d
    if prev is None:
        vd = raw
    else:
        df_d = unwrap_near(df_d, prev.delta_f_d)
        dr_d = unwrap_near(dr_d, prev.delta_r_d)
        alpha = -math.expm1(-dt / g.tau_ff)
        vd = tuple(o + alpha * (n - o) for o, n in zip(prev.v_d, raw))
    vdot = tuple((n - f) / g.tau_ff for n, f in zip(raw, vd))
    return ReferenceState(
        v_w_d=cur.v_w_d,
        delta_f_d=df_d,
        delta_r_d=dr_d,
        omega_f_d=cur.omega_f_d,
        omega_r_d=cur.omega_r_d,
        v_d=BodyVelocity(*vd),
        v_dot_d=vdot,
        omega_virt=cur.omega_virt,
        saturated=cur.saturated,
    )
