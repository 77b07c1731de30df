"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid layer chain, experiment config or generator config."""


class ShapeError(ValueError):
    """Array shapes do not agree with what an operation expects."""


class NonFiniteError(ValueError):
    """NaN or Inf where finite values are required."""


class ForwardStateError(RuntimeError):
    """backward() called before a recorded forward pass."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, epoch=None, components=None):
        super().__init__(message)
        self.epoch = epoch
        self.components = components or {}


class EmptyGroupError(ValueError):
    """A demographic filter selected no students."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given labels (e.g. AUC with one class)."""


class RankDeficiencyError(ValueError):
    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank


class IngestError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
