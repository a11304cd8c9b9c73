"""Exception hierarchy.

Errors fall into two families that the command line maps onto exit codes:
configuration problems (:class:`ValidationError`, exit 2) and numerical
failures (:class:`NumericError`, exit 3).
"""


class WMSqueezeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(WMSqueezeError, ValueError):
    """A parameter set violates a documented constraint."""


class ParseError(ValidationError):
    """A configuration document could not be parsed."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class WeightConstraintViolated(ValidationError):
    """Subpulse weights do not satisfy sum(theta_j**2) == 1 with theta_j > 0."""


class NoRealSolution(ValidationError):
    """No real beam-splitter setting realises the requested weak value."""


class DomainError(ValidationError):
    """Argument outside the domain where a closed form is defined."""


class NumericError(WMSqueezeError, ArithmeticError):
    """Base class for failures of a numerical procedure."""


class DegreeTooLarge(NumericError):
    """Polynomial degree or Gaussian moment order exceeds the supported bound."""


class TruncationError(NumericError):
    """Weight lost beyond a Fock cutoff exceeds the configured tolerance."""


class CutoffLeakage(NumericError):
    """A unitary pushed population into the guard levels of a truncated mode."""


class ZeroProbability(NumericError):
    """A post-selection branch has (numerically) vanishing probability."""


class SingularPostSelection(NumericError):
    """Pre- and post-selected states are orthogonal; the weak value diverges."""


class BudgetExhausted(NumericError):
    """An optimizer ran out of objective evaluations before converging."""
