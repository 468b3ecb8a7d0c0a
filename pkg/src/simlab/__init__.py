"""Closed-loop quadrotor simulation lab.

Learns the vehicle's discrete-time dynamics with a small network, adapts the
last layer online from forward-prediction error, propagates aleatoric
uncertainty with a quaternion-manifold unscented transform, and feeds model
and uncertainty into a multiple-shooting SQP model predictive controller.
"""

from .dynamics import Control, RigidBodyParams, State
from .errors import ConfigError, DynamicsError, OcpError, SimlabError
from .learner import ReplayWindow, Trajectory, Transition
from .mlp import Gradient, MlpParams
from .mpc import ControllerConfig, ControllerContext, OcpProblem, OcpSolution
from .uncertainty import SigmaEnsemble, TangentGaussian

__version__ = "0.1.0"

__all__ = [
    "Control",
    "ControllerConfig",
    "ControllerContext",
    "ConfigError",
    "DynamicsError",
    "Gradient",
    "MlpParams",
    "OcpError",
    "OcpProblem",
    "OcpSolution",
    "ReplayWindow",
    "RigidBodyParams",
    "SigmaEnsemble",
    "SimlabError",
    "State",
    "TangentGaussian",
    "Trajectory",
    "Transition",
    "__version__",
]
