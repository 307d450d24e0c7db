"""Exception types raised across the package."""


class DomainUQError(Exception):
    """Base class for all package errors."""


class OrderCapExceeded(DomainUQError, ValueError):
    pass


class NonPositiveJacobian(DomainUQError):
    """det J(x, y) <= 0 somewhere on the verification grid."""

    def __init__(self, message, point=None, value=None):
        super().__init__(message)
        self.point = point
        self.value = value


class ThetaTooSmall(DomainUQError, ValueError):
    pass


class UnsupportedAlpha(DomainUQError, ValueError):
    pass


class NotPrime(DomainUQError, ValueError):
    pass


class DimensionZero(DomainUQError, ValueError):
    pass


class LambdaOutOfRange(DomainUQError, ValueError):
    pass


class DegenerateElement(DomainUQError):
    """A mapped triangle has non-positive signed area."""

    def __init__(self, message, triangle=None, area=None, sample_index=None, y=None):
        super().__init__(message)
        self.triangle = triangle
        self.area = area
        self.sample_index = sample_index
        self.y = y


class SolverDivergence(DomainUQError):
    pass


class MeshMismatch(DomainUQError, ValueError):
    pass


class InsufficientPoints(DomainUQError, ValueError):
    pass


class ConfigError(DomainUQError, ValueError):
    pass
