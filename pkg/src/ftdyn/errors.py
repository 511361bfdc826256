"""Exception types shared across the toolkit."""


class FtdynError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(FtdynError):
    """Invalid system specification or run configuration."""


class SingularMatrixError(FtdynError):
    """A matrix that must be invertible is (numerically) singular."""


class DegenerateSplitError(FtdynError):
    """The singular values are too close to define contracted/expanded
    directions; the point is outside the hyperbolicity locus U_n."""

    def __init__(self, msg, ratio=None):
        super().__init__(msg)
        self.ratio = ratio


class EscapeError(FtdynError):
    """A plane-domain orbit left the configured trapping box."""


class ChartError(FtdynError):
    """Manifold tracing or chart construction failed."""


class PreconditionError(FtdynError):
    """An operation was invoked on inputs violating its stated preconditions."""


class CoverError(FtdynError):
    """The subdivide/saturate/cut induction could not certify a level.

    Carries the first failing level and item for diagnosis.
    """

    def __init__(self, msg, level=None, item=None):
        super().__init__(msg)
        self.level = level
        self.item = item
