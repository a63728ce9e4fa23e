"""Augmented-Lagrangian primal-dual semismooth Newton solver for multi-block composite problems."""

from .alcore import (
    ALState,
    MultiBlockProblem,
    PrimalDualPoint,
    QuadraticBlock,
    SmoothBlock,
    lipschitz_estimate,
    tiny_problem,
)
from .firstorder import run_first_order
from .newton import NewtonConfig, SolveReport, alpdsn, superlinear_probe

__version__ = "0.1.0"

__all__ = [
    "ALState",
    "MultiBlockProblem",
    "PrimalDualPoint",
    "QuadraticBlock",
    "SmoothBlock",
    "lipschitz_estimate",
    "tiny_problem",
    "run_first_order",
    "NewtonConfig",
    "SolveReport",
    "alpdsn",
    "superlinear_probe",
    "__version__",
]
