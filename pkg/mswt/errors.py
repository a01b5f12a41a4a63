"""Exception hierarchy shared by every mswt module."""

from __future__ import annotations


class MswtError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(MswtError, ValueError):
    """Tensor extents do not satisfy an operation's contract."""


class ConfigError(MswtError, ValueError):
    """Invalid configuration value or malformed config file."""


class FormatError(MswtError, ValueError):
    """Malformed checkpoint, image or manifest file."""


class DataError(MswtError):
    """Corpus is missing, inconsistent or unreadable."""


class NumericalError(MswtError, FloatingPointError):
    """A NaN or infinite value appeared, or a gradient check failed."""


class GraphError(MswtError, RuntimeError):
    """Reverse-mode differentiation was invoked on an unusable graph."""


__all__ = [
    "ConfigError",
    "DataError",
    "FormatError",
    "GraphError",
    "MswtError",
    "NumericalError",
    "ShapeError",
]
