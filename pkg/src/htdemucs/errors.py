"""Exception types shared across the package."""


class HTDemucsError(Exception):
    pass


class DimensionError(HTDemucsError, ValueError):
    """Shapes or geometry are inconsistent."""


class DegenerateRowError(HTDemucsError, ValueError):
    """A masked softmax row has no kept element."""


class ContractError(HTDemucsError, ValueError):
    """A call violates an operation precondition."""


class LengthError(HTDemucsError, ValueError):
    """Audio is too short for the requested operation."""


class FormatError(HTDemucsError, ValueError):
    """Unsupported audio format or sample rate."""


class ConfigError(HTDemucsError, ValueError):
    pass


class CorruptionError(HTDemucsError, IOError):
    """Weight container failed its checksum."""


class NumericError(HTDemucsError, ArithmeticError):
    """NaN or inf appeared during training."""
