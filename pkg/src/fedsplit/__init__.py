"""fedsplit: two-party split training for title/content text classifiers.

PartyA holds titles and labels (and the interaction head); PartyB holds
contents.  Per batch they exchange only a cut-layer activation matrix and
its gradient.  A centralized trainer with identical math serves as the
correctness oracle: same seed, bitwise-identical parameters.
"""

__version__ = "0.1.0"

from .errors import (
    AutodiffError,
    ConfigError,
    DataError,
    FedsplitError,
    FormatError,
    MetricError,
    ProtocolError,
    ShapeError,
    TrainingError,
)
from .tensor import Tape, Tensor

__all__ = [
    "AutodiffError", "ConfigError", "DataError", "FedsplitError", "FormatError",
    "MetricError", "ProtocolError", "ShapeError", "TrainingError",
    "Tape", "Tensor", "__version__",
]
