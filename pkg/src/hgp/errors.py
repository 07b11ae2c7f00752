"""Exception types shared across the package.

The CLI maps these onto its exit-code taxonomy, so library code should
raise the most specific class that applies.
"""


class HgpError(Exception):
    """Base class for all package-specific errors."""


class ParseError(HgpError):
    """Malformed input file (GeoJSON, WKT, CSV, or config)."""


class GeometryError(HgpError):
    """Input geometry violates an operation's preconditions."""


class NotPositiveDefiniteError(HgpError):
    """A correlation/covariance matrix stayed indefinite through the jitter schedule."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class SamplerInitError(HgpError):
    """The MCMC sampler could not be initialized (bad data or nonfinite posterior)."""


class ComparisonMismatchError(HgpError):
    """Model-comparison inputs were fitted to different data."""


class PredictionUnsupportedError(HgpError):
    """Prediction requested for a random effect that does not support it."""
