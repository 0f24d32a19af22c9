"""Exception types raised across the package."""


class CyclicQMError(Exception):
    """Base class for all package errors."""


class GridError(CyclicQMError, ValueError):
    """Invalid grid or time-mesh parameters."""


class DegenerateRangeError(GridError):
    pass


class GridSizeError(GridError):
    pass


class NonPositiveEpsilonError(GridError):
    pass


class SpecError(CyclicQMError, ValueError):
    """Invalid physical parameters in an energy specification."""


class CouplingRangeError(SpecError):
    pass


class BoundaryMassError(CyclicQMError):
    """Kernel mass leaks past the grid edges (strict mode only)."""


class BoundaryMassWarning(UserWarning):
    pass


class IllConditionedWarning(UserWarning):
    pass


class NegativeEntryError(CyclicQMError):
    """A builder that must yield a stoquastic factor produced a negative entry."""


class SingularFactorError(CyclicQMError):
    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class DimensionError(CyclicQMError, ValueError):
    pass


class LengthMismatchError(CyclicQMError, ValueError):
    pass


class EnumerationBudgetError(CyclicQMError):
    pass


class ZeroSupportError(CyclicQMError, ValueError):
    pass


class NonConvergenceError(CyclicQMError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InconsistentMarginalsError(CyclicQMError, ValueError):
    pass


class TraceError(CyclicQMError, ValueError):
    pass


class HermiticityError(CyclicQMError, ValueError):
    pass


class EigenDecompositionError(CyclicQMError):
    pass


class SlitOffGridError(CyclicQMError, ValueError):
    pass


class PointerRangeError(CyclicQMError, ValueError):
    pass


class ProbabilityError(CyclicQMError, ValueError):
    pass


class ConfigError(CyclicQMError):
    """Configuration could not be parsed or validated."""

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = list(problems or [])
