"""Exception taxonomy shared across the simulator."""


class AuxfedError(Exception):
    """Base class for all simulator errors."""


class ConfigError(AuxfedError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


class ParameterError(AuxfedError):
    """A numeric parameter is outside its valid range."""


class DimensionError(AuxfedError):
    """Array shapes are incompatible with the requested operation."""


class DivergenceError(AuxfedError):
    """KL divergence undefined: q has zero mass where p is positive."""


class NumericError(AuxfedError):
    """Non-finite values encountered where finite values are required."""


class PartitionError(AuxfedError):
    """Data cannot be partitioned as requested (e.g. empty class)."""


class ParseError(AuxfedError):
    """Malformed input file; message names the offending line."""


class PrototypeError(AuxfedError):
    """Operation mixes models of different prototypes."""


class ScoreError(AuxfedError):
    """Certainty scores violate their contract (e.g. non-positive)."""


class ClientError(AuxfedError):
    """A client is in a state that prevents local training."""
