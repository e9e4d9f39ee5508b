"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class TapeError(RuntimeError):
    """Misuse of the differentiation tape (detached loss, double backward, ...)."""


class NumericError(ArithmeticError):
    """A quantity that must be finite came out NaN or infinite."""


class SchemaError(ValueError):
    """Data does not conform to the declared feature schema."""


class ConfigError(ValueError):
    """Inconsistent or incomplete model/training configuration."""


class DataError(ValueError):
    """Input file is missing, malformed, or does not match the schema."""


class UndefinedMetricError(ValueError):
    """A fairness metric was requested on an empty group or (group, label) cell.

    Raised instead of silently returning 0, which would fake perfect parity.
    """


class EmptyGroupError(ValueError):
    """A two-sample statistic was requested with one sample set empty."""
