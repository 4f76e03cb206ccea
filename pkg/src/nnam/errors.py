"""Exception types shared across the toolkit."""


class NnamError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(NnamError):
    """Operands have incompatible dimensions."""


class ConfigError(NnamError):
    """Invalid configuration value or key."""


class DataError(NnamError):
    """Malformed or inconsistent dataset content."""


class DecodeError(NnamError):
    """No legal decoding path exists for the given inputs."""


class ScoringError(NnamError):
    """Scoring preconditions violated (e.g. empty reference)."""


class MappingError(NnamError):
    """A phone symbol has no entry in the mapping table."""


class TrainingDivergedError(NnamError):
    """Training produced a non-finite criterion."""


class OracleError(NnamError):
    """A test oracle could not produce a reference value."""
