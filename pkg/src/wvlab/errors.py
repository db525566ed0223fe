"""Exception types shared across the package."""


class WvlabError(Exception):
    """Base class for all package-specific errors."""


class InvalidModeIndex(WvlabError):
    """A mode index is negative, out of range, or repeated where distinct ones are required."""


class LossNotExpanded(WvlabError):
    """An operation requiring a loss-free circuit was given one with loss elements."""


class DimensionMismatch(WvlabError):
    """Matrix/vector dimensions are incompatible."""


class DomainError(WvlabError):
    """A scalar function was evaluated outside its domain."""


class PostSelectionTooRare(WvlabError):
    """The post-selection probability is below the configured guard (dark port)."""


class SizeLimitExceeded(WvlabError):
    """A requested Fock basis would exceed the configured dimension bound."""


class TailTooLarge(WvlabError):
    """Truncated state preparation discards more probability than tolerated."""


class DecompositionFailed(WvlabError):
    """A mode matrix could not be decomposed into elementary operations within tolerance."""


class NotFactorizable(WvlabError):
    """The final state does not factorize across detect/rest, so the marginal-vs-projected comparison is undefined."""


class EmptyPopulation(WvlabError):
    """A conditional estimate was requested for an outcome that never occurred."""
