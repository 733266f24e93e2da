"""Exception hierarchy shared by every module of the package."""


class FinslerError(Exception):
    """Base class for all errors raised by conicfinsler."""


class InvalidOrderError(FinslerError, ValueError):
    pass


class SingularEvaluationError(FinslerError, ArithmeticError):
    """A jet operation left its domain (division by zero, log of a non-positive value, ...)."""


class TruncationExceededError(FinslerError):
    """A derivative was requested beyond the truncation order of a jet."""


class StencilDomainError(FinslerError):
    """A finite-difference stencil point fell outside the domain of the function."""


class DomainError(FinslerError):
    """The support element is not in the conic domain of the metric."""


class DegenerateMetricError(FinslerError):
    def __init__(self, message, det=None):
        super().__init__(message)
        self.det = det


class DegenerateTransformError(FinslerError):
    """sigma + eps - phi_{;2}^2 vanishes, so the transformed metric tensor is singular."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class SignatureFlipError(FinslerError):
    """eps * rho <= 0: the transformed surface changes signature and the frame formulas do not apply."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class DeclarationMismatchError(FinslerError):
    """A conformal factor declared x-only or y-only fails its independence check."""
