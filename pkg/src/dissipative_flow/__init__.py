"""Numerical laboratory for compressible flows with convex implicit rheology.

Galerkin momentum solver coupled to a regularised continuity equation,
Fenchel-conjugate tooling for convex dissipation potentials, energy audits,
Reynolds-defect estimation across refinement sweeps, and a Young-function
constructor for uniform-integrability certificates.
"""

__version__ = "0.1.0"

from .exceptions import (
    ConfigurationError,
    ConjugateDivergenceError,
    ContractViolation,
    DegenerateQuotientError,
    EquiIntegrabilityError,
    StepRejected,
    WindowContractionError,
)
from .orlicz import YoungFunctionEstimator
from .rheology import MollifierSpec, PotentialSpec
from .scenario import Scenario
from .solver import GalerkinFlowSolver
from .tensor_core import GalerkinBasis, Grid, SymTensor

__all__ = [
    "ConfigurationError",
    "ConjugateDivergenceError",
    "ContractViolation",
    "DegenerateQuotientError",
    "EquiIntegrabilityError",
    "GalerkinBasis",
    "GalerkinFlowSolver",
    "Grid",
    "MollifierSpec",
    "PotentialSpec",
    "Scenario",
    "StepRejected",
    "SymTensor",
    "WindowContractionError",
    "YoungFunctionEstimator",
]
