"""Damped second-order gradient systems and Kurdyka-Łojasiewicz convergence rates.

Modules
-------
potential
    Potential catalog, derivative checks and sampled bounds.
dynamics
    Integration of ``u'' + gamma u' + grad G(u) = 0`` and of gradient flows.
deformation
    Deformed energy and the quasi-gradient angle certificate.
desingularize
    Desingularizing functions, worst-case decay curves and the KL inequality.
levelset
    Minimal gradient norm on level sets.
rates
    Envelope checks, decay-law fitting and the end-to-end rate report.
cli
    Command-line front end (``kldyn``).
"""
from .desingularize import Desingularizer, worst_case_curve
from .dynamics import DynamicsConfig, PhaseState, Trajectory, integrate
from .errors import (CapabilityError, ContractError, DegenerateSampleError, DomainError,
                     InputError, InsufficientDataError, IntegrationError, KLDynError,
                     LevelNotReachedError, RoundingFloorError)
from .potential import PotentialSpec, from_name

__version__ = "0.1.0"

__all__ = [
    "CapabilityError", "ContractError", "DegenerateSampleError", "Desingularizer", "DomainError",
    "DynamicsConfig", "InputError", "InsufficientDataError", "IntegrationError", "KLDynError",
    "LevelNotReachedError", "PhaseState", "PotentialSpec", "RoundingFloorError", "Trajectory",
    "from_name", "integrate", "worst_case_curve",
]
