"""Exception hierarchy shared across the toolkit."""


class StateKGError(Exception):
    """Base class for all toolkit errors."""


class ParseError(StateKGError):
    """A fact file line could not be parsed."""


class ValidationError(StateKGError):
    """An input violated a documented precondition."""


class SplitError(StateKGError):
    """A chronological split could not be constructed."""


class EntityLookupError(StateKGError):
    """An entity or relation id is out of range."""


class GenerationError(StateKGError):
    """A synthetic dataset specification is inconsistent."""


class NumericError(StateKGError):
    """A numeric contract was violated (non-finite values, NaN loss)."""


class CheckpointError(StateKGError):
    """A checkpoint stream is corrupt or incompatible."""


class ConfigError(StateKGError):
    """A run configuration is invalid (unknown key, bad value, missing file)."""
