"""privfair: private and fair representation learning at desk scale.

Learns stochastic representations that trade utility against leakage of a
sensitive attribute, verifies the underlying information-theoretic identities
with an exact enumeration oracle, and audits learned representations with
leakage estimators and group-fairness metrics.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor
from .errors import (
    ConfigError,
    DataError,
    EmptyGroupError,
    NumericError,
    SchemaError,
    ShapeError,
    TapeError,
    UndefinedMetricError,
)

__all__ = [
    "Tape",
    "Tensor",
    "ConfigError",
    "DataError",
    "EmptyGroupError",
    "NumericError",
    "SchemaError",
    "ShapeError",
    "TapeError",
    "UndefinedMetricError",
    "__version__",
]
