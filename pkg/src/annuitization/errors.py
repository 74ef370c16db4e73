"""Exception hierarchy shared by the solver modules."""


class AnnuitizationError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(AnnuitizationError):
    pass


class InvalidParam(ConfigError):
    pass


class InvalidDistribution(ConfigError):
    pass


class IllPosed(ConfigError):
    """theta - alpha - rho - mu_min >= 0, so the value function is infinite."""


class TreeTooLarge(AnnuitizationError):
    pass


class NoRoot(AnnuitizationError):
    pass


class NonIntegrable(AnnuitizationError):
    pass


class QuadratureFailure(AnnuitizationError):
    pass


class SolverError(AnnuitizationError):
    pass


class ChildrenUnsolved(SolverError):
    pass


class GridExhausted(SolverError):
    pass


class Ambiguous(SolverError):
    pass


class UnboundedValue(SolverError):
    pass
