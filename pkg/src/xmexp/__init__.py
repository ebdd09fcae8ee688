"""Crossmodal expectation learning: two perception/expectation channels joined by a SOM."""

from .errors import ConfigurationError, InputError, StateError, UsageError

__version__ = "0.1.0"

__all__ = ["ConfigurationError", "InputError", "StateError", "UsageError", "__version__"]
