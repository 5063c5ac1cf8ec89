"""versegan: adversarial fine-tuning of a recurrent language model for
creative text generation, built on a self-contained reverse-mode autodiff
engine (float64, numpy).

Pipeline: ingest a plain-text corpus -> MLE-pretrain an LSTM language model
-> fine-tune on the target corpus -> adversarially fine-tune against a
weight-shared discriminator, either by policy gradient on the discriminator
score or through a relaxed (Gumbel-softmax) differentiable sampler ->
evaluate perplexity and diversity across checkpoints.
"""

from .autodiff import Tensor, grad_check, no_grad
from .errors import (CheckpointError, ConfigError, CorpusError, GradientError,
                     NonFiniteError, ShapeMismatchError, TrainingDiverged,
                     VerseganError)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "grad_check", "no_grad", "VerseganError", "ShapeMismatchError",
    "NonFiniteError", "GradientError", "CorpusError", "ConfigError",
    "CheckpointError", "TrainingDiverged", "__version__",
]
