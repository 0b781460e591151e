"""Exception types shared across the package."""


class DomainError(ValueError):
    """Coordinate outside the declared domain of a system or potential."""


class ConfigurationError(ValueError):
    """Solver or scenario configuration is inconsistent with the system."""


class InvalidSpecError(ValueError):
    """A transform request that is ill-posed (e.g. divides by a zero weight)."""


class ThresholdSingularityError(ValueError):
    """Energy too close to a channel threshold for scattering quantities."""


class IntegrationOverflowError(RuntimeError):
    """Non-finite values appeared during integration.

    Carries the coordinate at which the overflow was first detected.
    """

    def __init__(self, x: float, message: str | None = None):
        self.x = x
        super().__init__(message or f"integration produced non-finite values near x = {x:.6g}")


class SingularTransformError(RuntimeError):
    """The transform denominator matrix became (near) singular.

    Carries the coordinate of the offending point when known.  Singularities
    are treated as meaningful (forbidden parameter combinations), never
    regularized away.
    """

    def __init__(self, x: float | None = None, message: str | None = None):
        self.x = x
        if message is None:
            where = "" if x is None else f" near x = {x:.6g}"
            message = f"transform denominator is singular{where}"
        super().__init__(message)


class ConstructionInvalidError(RuntimeError):
    """A construction's premise failed a runtime check (e.g. periodization)."""
