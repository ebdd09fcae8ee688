"""Exception types shared across the package."""


class XmexpError(Exception):
    """Base class for all package errors."""


class ConfigurationError(XmexpError, ValueError):
    """Shapes, dimensions or settings that cannot work together."""


class UsageError(XmexpError, ValueError):
    """An operation was called with arguments outside its contract."""


class StateError(XmexpError, RuntimeError):
    """An operation was called while the object is in the wrong state."""


class InputError(XmexpError, ValueError):
    """Malformed external input (audio, image or manifest files)."""
