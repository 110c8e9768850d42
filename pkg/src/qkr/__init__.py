"""Spin-1/2 quantum kicked rotor: diffusion sweeps and finite-size scaling.

Data types and the pipeline entry points are re-exported here; the
per-module namespaces (qkr.model, qkr.evolve, qkr.ensemble, qkr.anderson,
qkr.scaling, qkr.storage) carry the full API, including the single-member
evolution functions.
"""

from .model import DVector, ModelParams
from .evolve import DriveContext, NormDriftError, SpinorState, Trajectory
from .ensemble import (
    DiffusionCurve,
    EnsembleError,
    EnsembleSpec,
    run_ensemble,
    sweep,
)
from .anderson import SecularProblem, TangentSingularityError
from .scaling import (
    ConvergenceError,
    RankDeficiencyError,
    ScalingDataset,
    ScalingError,
    ScalingFit,
    UnidentifiableError,
    bootstrap_errors,
    collapse_export,
    fit,
    localization_length,
    scaling_model,
    select_kmax,
)

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "DVector",
    "SpinorState",
    "DriveContext",
    "Trajectory",
    "NormDriftError",
    "EnsembleSpec",
    "EnsembleError",
    "DiffusionCurve",
    "run_ensemble",
    "sweep",
    "SecularProblem",
    "TangentSingularityError",
    "ScalingDataset",
    "ScalingFit",
    "ScalingError",
    "UnidentifiableError",
    "ConvergenceError",
    "RankDeficiencyError",
    "fit",
    "select_kmax",
    "bootstrap_errors",
    "collapse_export",
    "scaling_model",
    "localization_length",
    "__version__",
]
