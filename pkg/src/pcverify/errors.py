"""Exception types raised across the package."""

from .geometry import DimensionMismatch, DomainError


class InvalidParam(ValueError):
    pass


class SingularDesign(ValueError):
    """Regression design matrix is rank deficient."""

    def __init__(self, message: str, collinear: tuple = ()):
        super().__init__(message)
        self.collinear = collinear


class SolverFailure(RuntimeError):
    pass


class SamplerExhausted(RuntimeError):
    pass


class DegenerateBox(ValueError):
    pass


class Blowup(RuntimeError):
    """A reach tube grew past its width cap; carries the partial tube."""

    def __init__(self, message: str, tube=None, t: int = -1):
        super().__init__(message)
        self.tube = tube
        self.t = t


__all__ = [
    "Blowup",
    "DegenerateBox",
    "DimensionMismatch",
    "DomainError",
    "InvalidParam",
    "SamplerExhausted",
    "SingularDesign",
    "SolverFailure",
]
