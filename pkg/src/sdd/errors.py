"""Exception hierarchy shared across the engine.

The CLI maps these onto distinct exit codes, so keep the split between
I/O, on-disk format, and configuration problems intact.
"""


class SddError(Exception):
    """Base class for all engine errors."""


class AudioIOError(SddError):
    """File missing, unreadable, or an unsupported audio container."""


class FormatError(SddError):
    """A binary or text artifact (weights, manifest) is malformed."""


class ConfigError(SddError):
    """Invalid engine configuration or parameter combination."""
