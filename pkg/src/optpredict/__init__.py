"""Optimal prediction for linear Hamiltonian systems.

Exact and reduced conditional-mean evolution under a Gaussian invariant
measure, a priori error bounds, and a spectral Klein-Gordon instance with
Monte Carlo checks of the probabilistic error statements.
"""

__version__ = "0.1.0"

from .errors import (
    OptPredictError,
    NotPositiveDefinite,
    DimensionMismatch,
    ToleranceNotMet,
    InvariantViolation,
    RankDeficient,
    SingularM,
    BlocksDiffer,
    InvalidParams,
    HypothesisViolated,
    ShrinkNotAllowed,
)
