"""Exception hierarchy."""


class OptPredictError(Exception):
    pass


class DimensionMismatch(OptPredictError, ValueError):
    pass


class NotPositiveDefinite(OptPredictError, ValueError):
    pass


class ToleranceNotMet(OptPredictError, RuntimeError):
    pass


class InvariantViolation(OptPredictError, ValueError):
    """The pair (L, A) does not satisfy L^T A + A L = 0."""


class RankDeficient(OptPredictError, ValueError):
    pass


class SingularM(OptPredictError, ValueError):
    """M = G^T A^-1 G could not be factorized."""


class BlocksDiffer(OptPredictError, ValueError):
    """Operation needs G_q == G_p."""


class InvalidParams(OptPredictError, ValueError):
    pass


class HypothesisViolated(OptPredictError, ValueError):
    pass


class ShrinkNotAllowed(OptPredictError, ValueError):
    pass
