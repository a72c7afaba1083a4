"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SplitGibbsError(Exception):
    exit_code = 1


class ParameterError(SplitGibbsError, ValueError):
    exit_code = 2


class DimensionError(ParameterError):
    """Vector or matrix sizes do not agree."""


class ContractError(ParameterError):
    """An operation was called outside its preconditions."""


class NonConvergenceError(SplitGibbsError):
    exit_code = 3


class ResourceError(SplitGibbsError):
    exit_code = 4


class NumericError(SplitGibbsError, ArithmeticError):
    exit_code = 5


class NotPositiveDefiniteError(NumericError):
    pass


class SingularTriangularError(NumericError):
    pass


class NoiseCovarianceError(NotPositiveDefiniteError):
    """The noise covariance M^T + N is not SPD, so the sampler cannot converge."""


class CoefficientBreakdownError(NumericError):
    """A Chebyshev noise coefficient (a_k, b_k or kappa_k) became non-positive."""


class ModelAssemblyError(NumericError):
    pass
