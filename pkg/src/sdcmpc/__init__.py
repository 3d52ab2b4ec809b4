"""Quadrotor MPC via state-dependent coefficient (SDC) factorization.

The package provides three controllers over a shared rigid-body model:

* a nonlinear MPC benchmark (SQP on a multiple-shooting transcription),
* a nominal SDC-MPC that refactors the dynamics each step and solves a
  single convex QP,
* a robust SDC-MPC that augments the nominal one with a disturbance
  observer.

`sdcmpc.bench` runs the obstacle-avoidance tracking mission all three are
compared on; the `bench` console script wraps it.
"""

from .mpc import (
    CenterCoincidenceError,
    ControlStepResult,
    MpcConfig,
    NmpcController,
    ObstacleSpec,
    ReferenceWindow,
    RobustSdcMpc,
    SdcMpc,
    TerminalMode,
    build_tracking_qp,
    discretize_affine,
    linearize_obstacle,
    make_controller,
)
from .observer import DisturbanceObserver
from .qp import QpSolution, QpStatus, QuadraticProgram, solve_qp
from .riccati import (
    TerminalIngredients,
    solve_care,
    solve_lyapunov,
    terminal_alpha,
    terminal_ingredients,
)
from .rigidbody import (
    GRAVITY,
    GimbalLockError,
    QuadrotorParams,
    continuous_dynamics,
    euler_rate_matrix,
    hover_input,
    hover_state,
    rk4_step,
    rotation_matrix,
    skew,
)
from .sdc import SdcModel, sdc_model
from .systems import LinearSystem, QuadrotorSystem

__all__ = [
    "GRAVITY",
    "CenterCoincidenceError",
    "ControlStepResult",
    "DisturbanceObserver",
    "GimbalLockError",
    "LinearSystem",
    "MpcConfig",
    "NmpcController",
    "ObstacleSpec",
    "QpSolution",
    "QpStatus",
    "QuadraticProgram",
    "QuadrotorParams",
    "QuadrotorSystem",
    "ReferenceWindow",
    "RobustSdcMpc",
    "SdcModel",
    "SdcMpc",
    "TerminalIngredients",
    "TerminalMode",
    "build_tracking_qp",
    "continuous_dynamics",
    "discretize_affine",
    "euler_rate_matrix",
    "hover_input",
    "hover_state",
    "linearize_obstacle",
    "make_controller",
    "rk4_step",
    "rotation_matrix",
    "sdc_model",
    "skew",
    "solve_care",
    "solve_lyapunov",
    "solve_qp",
    "terminal_alpha",
    "terminal_ingredients",
]

__version__ = "0.1.0"
