"""Shared exception types.

Every failure the library raises deliberately goes through one of these
classes so callers can tell a bad configuration from a numerical blow-up
without string matching.  Plain ``IOError`` (the builtin alias of
``OSError``) is used for filesystem problems such as refusing to
overwrite an existing dataset directory.
"""


class MiclabError(Exception):
    """Base class for all library errors."""


class ShapeError(MiclabError):
    """Array shapes are inconsistent or violate an operation's contract."""


class NumericsError(MiclabError):
    """A numeric invariant broke: NaN/Inf values, non-normalized
    probabilities, or a diverged training loss."""


class ConfigError(MiclabError):
    """A configuration value is missing, malformed, or out of bounds."""


class RangeError(MiclabError):
    """Data values fall outside their documented range (for example an
    image with pixels outside [0, 1])."""


class UnsupportedError(MiclabError):
    """The request is well formed but the feature does not exist."""


class CheckpointError(MiclabError):
    """A checkpoint file failed a magic, version, or compatibility check."""
