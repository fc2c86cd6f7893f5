"""Exception hierarchy shared by all modules."""


class GenHedgeError(Exception):
    """Base class for every error raised by the package."""


class CapabilityError(GenHedgeError):
    """A requested derivative order is not available for a curve."""


class ToleranceError(GenHedgeError):
    """A quadrature did not reach its declared tolerance."""


class DomainError(GenHedgeError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigurationError(GenHedgeError, ValueError):
    """A model or run configuration cannot be realized."""


class NumericError(GenHedgeError, ArithmeticError):
    """A computation produced non-finite or otherwise invalid numbers."""


class SingularOperatorError(GenHedgeError):
    """An operator inverse was requested on a direction where it is singular."""


class InvariantError(GenHedgeError):
    """A checked invariant failed. ``witness`` holds the offending input."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class KScheduleRefinementRequired(GenHedgeError):
    """The volatility scale schedule is too coarse for a prescribed limit.

    ``caps`` holds per-index caps that, fed back to ``select_k``, satisfy the
    constraint.
    """

    def __init__(self, message, caps=None):
        super().__init__(message)
        self.caps = caps


class CertificateFailure(GenHedgeError):
    """A certificate in a scenario report did not pass."""


class MissingArtifactError(GenHedgeError):
    """A pipeline stage needs a file that an earlier stage has not written."""
