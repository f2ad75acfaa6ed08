"""Exception taxonomy shared across the package.

Every exception raised on a contract violation derives from ``FhError`` so
the command line layer can map any failure to a machine-readable error
record (``type`` = class name, ``message`` = str(exc)).
"""


class FhError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(FhError):
    """Array shapes are inconsistent with each other."""


class NonFiniteInput(FhError):
    """An input array contains NaN or infinity."""


class NonpositiveSamplingVariance(FhError):
    """A sampling variance d_i is zero or negative."""


class RankDeficientX(FhError):
    """The design matrix does not have full column rank."""


class SingularNormalEquations(FhError):
    """The weighted normal equations could not be solved."""


class InsufficientDegreesOfFreedom(FhError):
    """The adjusted-likelihood fit needs m > p + 2 areas."""


class DegreesOfFreedomTooSmall(FhError):
    """A closed-form moment needs more areas than were supplied."""


class NotBalanced(FhError):
    """An operation restricted to equal sampling variances got unequal ones."""


class OptimizationDidNotConverge(FhError):
    """The variance fit exhausted its iteration budget."""


class NoFiniteValues(FhError):
    """The objective was non-finite at every probed point."""


class MaxIterExceeded(FhError):
    """The search iteration cap was reached before the bracket closed."""


class NoSignChange(FhError):
    """The stationarity function has no sign change on the scanned range."""


class MultipleSignChanges(FhError):
    """The stationarity function changes sign more than once on the range."""


class ZeroTruth(FhError):
    """A relative metric was requested against a zero truth value."""


class ParseError(FhError):
    """A dataset or design file could not be parsed."""


class SchemaError(FhError):
    """A parsed file does not match the expected schema."""
