"""Exception hierarchy for mavdesign."""


class MavDesignError(Exception):
    """Base class for all package errors."""


class DomainError(MavDesignError, ValueError):
    """A dose or a parameter value lies outside the admissible region."""


class ValidationError(MavDesignError, ValueError):
    """An input object (design, scheme, scenario field) is malformed."""


class SingularInformationError(MavDesignError, ArithmeticError):
    """A candidate information matrix is singular or too ill-conditioned.

    ``cond`` carries the offending condition number when it is known
    (``inf`` for exact singularity).
    """

    def __init__(self, message: str, cond: float = float("inf")):
        super().__init__(message)
        self.cond = cond


class DegenerateEffectError(MavDesignError, ArithmeticError):
    """eta(b) and eta(a) coincide, so the normalized effect is undefined."""


class NoCrossingError(MavDesignError, ArithmeticError):
    """The normalized effect never reaches the requested ED level."""


class AllStartsFailedError(MavDesignError, RuntimeError):
    """Every optimizer start ran into singular information."""
