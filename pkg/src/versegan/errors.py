"""Exception hierarchy shared across the package."""


class VerseganError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(VerseganError):
    """An operation received tensors whose shapes do not conform."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class NonFiniteError(VerseganError):
    """A forward operation produced NaN or Inf from finite inputs."""


class GradientError(VerseganError):
    """Gradients are missing, non-finite, or otherwise unusable."""


class CorpusError(VerseganError):
    """Corpus ingestion / batching failure."""


class ConfigError(VerseganError):
    """Bad configuration file, preset name, or field value."""


class CheckpointError(VerseganError):
    """Unreadable, corrupt, or incompatible checkpoint."""


class TrainingDiverged(VerseganError):
    """Training hit a NaN loss or tripped the divergence guard."""
