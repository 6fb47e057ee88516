"""Exception hierarchy shared by every module."""


class XorIrlError(Exception):
    """Base class for all library errors."""


class ConfigurationError(XorIrlError):
    """Malformed model, feature map, constraint set, or config."""


class EncodingError(XorIrlError):
    """The MDP/constraint combination cannot be compiled as requested."""


class DecodeError(XorIrlError):
    """An assignment does not describe a single start-to-goal trajectory."""


class InfeasibleError(XorIrlError):
    """No trajectory satisfies the constraints."""


class EnumerationOverflow(XorIrlError):
    """Exhaustive enumeration exceeded its cap."""


class DegenerateBatchError(XorIrlError):
    """The importance-weight denominator of a gradient estimate is zero."""


class SamplingAborted(XorIrlError):
    """Too many consecutive sampler failures."""


class InputError(XorIrlError):
    """User-supplied data (e.g. demonstrations) violates a precondition."""


class LearningRateWarning(UserWarning):
    """Step size exceeds the smoothness-based stability bound."""
