"""Exception hierarchy."""


class EETestError(Exception):
    """Base class for all errors raised by ee_testkit."""


class DimensionError(EETestError, ValueError):
    pass


class DomainError(EETestError, ValueError):
    """A function was evaluated outside of its domain (e.g. near a pole)."""


class RankDeficiencyError(EETestError, ValueError):
    """The restriction Jacobian does not have full row rank."""


class SingularMatrixError(EETestError, ValueError):
    pass


class NotPositiveDefiniteError(EETestError, ValueError):
    pass


class SolverOrderingError(EETestError, RuntimeError):
    """The constrained optimum beats the unconstrained one (solver fault)."""


class InputError(EETestError, ValueError):
    """Malformed user input (CSV files, configuration)."""
