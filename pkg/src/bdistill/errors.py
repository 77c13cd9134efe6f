"""Exception types shared across the package."""


class BdistillError(Exception):
    """Base class for all package errors."""


class ShapeError(BdistillError):
    """Array dimensions do not chain or do not match a declared contract."""


class InputError(BdistillError):
    """A value is out of range or otherwise invalid (labels, actions, NaNs)."""


class ConfigError(BdistillError):
    """A run configuration failed validation; message names the field."""


class FormatError(BdistillError):
    """A file is corrupt, truncated, or carries an unsupported version tag."""


class EpisodeDoneError(BdistillError):
    """step() was called on a terminal environment state before reset()."""
