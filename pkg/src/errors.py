"""Exception hierarchy for the cluster QMC engine.

Two branches: ``ConfigValidationError`` for bad input (CLI exit code 2) and
``NumericalError`` for failures of the numerics themselves (exit code 3).
"""


class ClusterQMCError(Exception):
    """Base class for every error raised by this package."""


class ConfigValidationError(ClusterQMCError, ValueError):
    """Invalid configuration, species label, range or precondition."""


class ParameterRangeError(ConfigValidationError):
    """A wavefunction parameter is outside its admissible range.

    Args:
        message: Human readable description.
        parameter: Name of the offending parameter, e.g. ``"a_3"`` or ``"kappa"``.
        value: Offending value, if known.
    """

    def __init__(self, message: str, parameter: str = "", value: float | None = None):
        super().__init__(message)
        self.parameter = parameter
        self.value = value


class NumericalError(ClusterQMCError):
    """A numerical stage could not produce a trustworthy result."""


class DomainError(NumericalError, ValueError):
    """Argument outside the domain of a mathematical function."""


class DegenerateConfigurationError(NumericalError):
    """Two atoms coincide within the distance tolerance."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        super().__init__(message)
        self.pair = pair


class UnrealizableDistancesError(NumericalError):
    """Distances cannot be embedded in Euclidean space (negative Grammian eigenvalue)."""


class NearCollinearError(NumericalError):
    """Grammian determinant too small for the effective potential to be evaluated."""

    def __init__(self, message: str, omega: float | None = None):
        super().__init__(message)
        self.omega = omega


class NodeProximityError(NumericalError):
    """A linear combination of basis functions (nearly) vanishes."""


class TuningError(NumericalError):
    """Step-size tuning did not converge."""


class SamplePoisonedError(NumericalError):
    """A non-finite entry appeared in the estimator matrices."""

    def __init__(self, sample: int, function: int):
        super().__init__(f"Non-finite estimator entry at sample {sample}, basis function {function}")
        self.sample = sample
        self.function = function


class RankZeroError(NumericalError):
    """Every singular value of the estimator matrix was discarded."""


class DegenerateStateError(NumericalError):
    """A state has vanishing norm on the sample."""


class TimeStepError(NumericalError):
    """Projection weights left the admissible dynamic range."""


class InsufficientProjectionError(NumericalError):
    """Too few usable projection times before breakdown."""


class TransformInconsistencyError(NumericalError):
    """Cartesian and distance-coordinate Hamiltonians disagree beyond step-size control."""

    def __init__(self, message: str, cartesian: float, distance: float):
        super().__init__(message)
        self.cartesian = cartesian
        self.distance = distance


class IdentityViolationError(NumericalError):
    """Two evaluations of the same exact identity disagree."""


class FitError(NumericalError):
    """The dimension parabola fit is under-determined."""
