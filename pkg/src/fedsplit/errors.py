"""Exception hierarchy shared by all fedsplit modules."""


class FedsplitError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(FedsplitError):
    """Tensor shapes are incompatible for the requested operation."""


class AutodiffError(FedsplitError):
    """Misuse of the gradient tape (e.g. backward on an unrecorded tensor)."""


class DataError(FedsplitError):
    """Corpus ingestion or record-level validation failed."""


class FormatError(FedsplitError):
    """A file (embeddings, checkpoint) does not match its declared format."""


class ProtocolError(FedsplitError):
    """Wire-protocol violation: bad frame, bad state, bad cursor, timeout."""


class MetricError(FedsplitError):
    """An evaluation metric is undefined for the given inputs."""


class TrainingError(FedsplitError):
    """Training aborted: non-finite loss/gradient or a stuck peer."""


class ConfigError(FedsplitError):
    """Invalid or inconsistent training configuration."""
