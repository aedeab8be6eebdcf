"""Exception types raised across the package."""


class MixrayError(Exception):
    """Base class for all package errors."""


class DomainError(MixrayError, ValueError):
    """A point, time or parameter lies outside the admissible domain."""


class ContractError(MixrayError, ValueError):
    """Arguments violate an interface contract (rank mismatch, empty input, ...)."""


class ConditioningError(MixrayError, ArithmeticError):
    """An automorphism field is numerically singular."""


class StencilError(MixrayError, ValueError):
    """A finite-difference stencil would leave the sampled grid."""


class NonTerminatingRayError(MixrayError, RuntimeError):
    """A geodesic did not reach the boundary within the length guard."""


class ConvergenceError(MixrayError, RuntimeError):
    """An iterative method failed to converge."""
