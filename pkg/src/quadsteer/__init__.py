"""Passivity-based tracking control and stability verification for a four-wheel steered robot."""

from .bounds import BoundSet, EnvelopeSpec, GainCertificate, certify, compute_bounds
from .dyncontrol import ControllerState, PIGains, control_step
from .kincontrol import KinGains, PoseRef, ReferenceState, reference_step
from .model import BodyVelocity, ConfigState, RobotParams, Wrench
from .sim import SimConfig, SimTrace, TrajectorySpec, run
from .uncertainty import UncertaintyModel

__version__ = "0.1.0"

__all__ = [
    "BodyVelocity",
    "BoundSet",
    "ConfigState",
    "ControllerState",
    "EnvelopeSpec",
    "GainCertificate",
    "KinGains",
    "PIGains",
    "PoseRef",
    "ReferenceState",
    "RobotParams",
    "SimConfig",
    "SimTrace",
    "TrajectorySpec",
    "UncertaintyModel",
    "Wrench",
    "certify",
    "compute_bounds",
    "control_step",
    "reference_step",
    "run",
]
