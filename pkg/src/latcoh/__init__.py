"""Coherence of consensus and vehicular formations on torus lattices.

Exact H2 performance measures (local error, long range deviation, deviation
from average, control effort) for spatially invariant feedback on Z_N^d,
a brute-force Lyapunov oracle for validating every closed form, asymptotic
scaling sweeps and lower-bound checks, and stochastic time-domain simulation
of the dynamics.
"""

from .errors import (
    ConfigError,
    LatcohError,
    OracleCapError,
    ParityError,
    StabilityError,
    StructureError,
    ValidationFailure,
)
from .measures import (
    MeasureKind,
    VarianceReport,
    consensus_variance,
    control_effort,
    lemma2_bound_check,
    stability_check,
    variance,
    vehicular_variance,
)
from .stencils import (
    FeedbackKind,
    FeedbackSpec,
    Stencil,
    standard_consensus_spec,
    standard_consensus_stencil,
    standard_vehicular_spec,
    stencil_from_platoon_gains,
    validate_structure,
)
from .torus import MultiIndex, TorusShape

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FeedbackKind",
    "FeedbackSpec",
    "LatcohError",
    "MeasureKind",
    "MultiIndex",
    "OracleCapError",
    "ParityError",
    "StabilityError",
    "Stencil",
    "StructureError",
    "TorusShape",
    "ValidationFailure",
    "VarianceReport",
    "consensus_variance",
    "control_effort",
    "lemma2_bound_check",
    "stability_check",
    "standard_consensus_spec",
    "standard_consensus_stencil",
    "standard_vehicular_spec",
    "stencil_from_platoon_gains",
    "validate_structure",
    "variance",
    "vehicular_variance",
]
