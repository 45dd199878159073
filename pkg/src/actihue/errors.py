"""Exception types raised across the package."""


class ActiHueError(Exception):
    """Base class for all package errors."""


class InvalidDims(ActiHueError, ValueError):
    pass


class InvalidActivation(ActiHueError, ValueError):
    pass


class ZeroVector(ActiHueError, ValueError):
    """Raised when normalizing a (near) zero vector, e.g. a dead post-ReLU pixel."""


class DegeneratePlane(ActiHueError, ValueError):
    pass


class DegenerateSpectrum(ActiHueError, ValueError):
    pass


class FrozenStore(ActiHueError):
    pass


class EmptyStore(ActiHueError):
    pass


class NotFrozen(ActiHueError):
    pass


class BadQueryNorm(ActiHueError, ValueError):
    pass


class EmptyQuery(ActiHueError, ValueError):
    pass


class NoAngularData(ActiHueError, ValueError):
    pass


class BadClassCount(ActiHueError, ValueError):
    pass


class ShapeMismatch(ActiHueError, ValueError):
    pass


class StaleCache(ActiHueError):
    pass


class ConfigError(ActiHueError, ValueError):
    pass


class ManifestError(ActiHueError, ValueError):
    pass


class IoFailure(ActiHueError, OSError):
    pass


class FormatError(ActiHueError, ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagic(FormatError):
    pass


class BadVersion(FormatError):
    pass


class Truncated(FormatError):
    pass


class NonFiniteLoss(ActiHueError, FloatingPointError):
    pass
