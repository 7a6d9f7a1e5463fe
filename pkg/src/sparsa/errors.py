"""Exception hierarchy shared by all sparsa modules."""


class SparsaError(Exception):
    """Base class for every error raised by sparsa."""


class NotPositiveDefinite(SparsaError):
    """A matrix expected to be SPD has a pivot at or below tolerance."""


class DegenerateClass(SparsaError):
    """A class has fewer than two samples, so within-class spread is undefined."""


class ZeroVariance(SparsaError):
    """A feature needed for a diagonal scaling has zero pooled variance."""


class ZeroDirection(SparsaError):
    """The discriminant direction has zero variance under the population."""


class InfeasibleProblem(SparsaError):
    pass


class TooFewSamples(SparsaError):
    pass


class CvFailed(SparsaError):
    """Every cell of a cross-validation grid failed to fit."""


class InvalidSpec(SparsaError):
    pass


class DataFormatError(SparsaError):
    """Raised when an input dataset cannot be parsed."""
