"""Real/fake scorer sharing the generator's encoder architecture.

The encoder (embedding + stacked LSTM) is value-copied from a fine-tuned
generator at construction, then owned independently. Its top-layer states
are concat-pooled -- [last step || max over time || mean over time] -- and
fed through three [affine, batch-norm, relu] blocks and a final
affine+sigmoid head, yielding a score strictly inside (0, 1).

The encoder also accepts soft inputs (a distribution over the vocabulary
per step), which the relaxed-sampling training mode needs: the embedding
lookup generalizes to distribution x embedding-matrix products.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeMismatchError
from .generator import GeneratorConfig, GeneratorModel
from .layers import BatchNorm, Linear, LSTMLayer


def concat_pool(states: Tensor, lengths=None) -> Tensor:
    """[B,T,H] hidden states -> [B,3H] as [last || max || mean].

    With `lengths`, padded positions past each row's length are ignored and
    "last" means the last valid step.
    """
    if states.data.ndim != 3 or states.shape[1] < 1:
        raise ShapeMismatchError("concat_pool", states.shape)
    last = ad.last_over_time(states, lengths)
    mx = ad.max_over_time(states, lengths)
    mean = ad.mean_over_time(states, lengths)
    return ad.concat([last, mx, mean], axis=1)


@dataclass
class DiscriminatorConfig:
    encoder: GeneratorConfig
    freeze_encoder: bool = False

    def head_widths(self) -> list[tuple[int, int]]:
        """Geometric taper from the 3H pooled vector down to the final unit."""
        h = self.encoder.embedding_size  # top-layer hidden size
        w1, w2, w3 = h, max(h // 2, 1), max(h // 4, 1)
        return [(3 * h, w1), (w1, w2), (w2, w3)]

    def final_width(self) -> int:
        return self.head_widths()[-1][1]


class DiscriminatorModel:
    """Encoder copied from a generator plus a fresh concat-pooling head."""

    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator):
        config.encoder.validate()
        self.config = config
        enc = config.encoder
        self.embedding = Tensor(np.zeros((enc.vocab_size, enc.embedding_size)),
                                requires_grad=True)
        self.layers = [LSTMLayer(inp, out, rng) for inp, out in enc.layer_sizes()]
        self.blocks = [(Linear(i, o, rng), BatchNorm(o))
                       for i, o in config.head_widths()]
        self.head_out = Linear(config.final_width(), 1, rng)

    @classmethod
    def from_generator(cls, gen: GeneratorModel, rng: np.random.Generator,
                       freeze_encoder: bool = False) -> "DiscriminatorModel":
        """Value-copy the generator's encoder weights; head starts fresh.

        Encoder dropout is disabled inside the discriminator; storage is
        independent, so training one model never touches the other.
        """
        config = DiscriminatorConfig(
            encoder=gen.config.without_dropout(), freeze_encoder=freeze_encoder)
        disc = cls(config, rng)
        disc.embedding.data[...] = gen.embedding.data
        if len(disc.layers) != len(gen.layers):
            raise ConfigError("encoder layer count mismatch")
        for mine, theirs in zip(disc.layers, gen.layers):
            if mine.w_input.shape != theirs.w_input.shape:
                raise ShapeMismatchError("init_from_generator",
                                         mine.w_input.shape, theirs.w_input.shape)
            mine.w_input.data[...] = theirs.w_input.data
            mine.w_recur.data[...] = theirs.w_recur.data
            mine.bias.data[...] = theirs.bias.data
        return disc

    # -- parameter plumbing ------------------------------------------------

    def encoder_parameters(self) -> list[tuple[str, Tensor]]:
        named = [("embedding", self.embedding)]
        for i, layer in enumerate(self.layers):
            named += [(f"lstm{i}.{n}", t) for n, t in layer.parameters()]
        return named

    def head_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, (lin, bn) in enumerate(self.blocks):
            named += [(f"block{i}.lin.{n}", t) for n, t in lin.parameters()]
            named += [(f"block{i}.bn.{n}", t) for n, t in bn.parameters()]
        named += [(f"out.{n}", t) for n, t in self.head_out.parameters()]
        return named

    def parameters(self) -> list[tuple[str, Tensor]]:
        return self.encoder_parameters() + self.head_parameters()

    def trainable_parameters(self) -> list[Tensor]:
        named = self.head_parameters() if self.config.freeze_encoder \
            else self.parameters()
        return [t for _, t in named]

    def param_tensors(self) -> list[Tensor]:
        return [t for _, t in self.parameters()]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        named = []
        for i, (_, bn) in enumerate(self.blocks):
            named += [(f"block{i}.bn.{n}", a) for n, a in bn.buffers()]
        return named

    def snapshot(self) -> dict[str, np.ndarray]:
        snap = {name: t.data.copy() for name, t in self.parameters()}
        snap.update({f"buffer.{name}": a.copy() for name, a in self.buffers()})
        return snap

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.parameters():
            t.data[...] = snap[name]
        for name, a in self.buffers():
            a[...] = snap[f"buffer.{name}"]

    # -- forward -----------------------------------------------------------

    def encode(self, token_ids: np.ndarray) -> Tensor:
        """Hard token ids [B,T] -> top-layer states [B,T,H]."""
        token_ids = np.asarray(token_ids)
        if token_ids.ndim != 2 or token_ids.shape[1] < 1:
            raise ShapeMismatchError("disc_encode", token_ids.shape)
        steps = [ad.embedding(self.embedding, token_ids[:, t])
                 for t in range(token_ids.shape[1])]
        return self._encode_steps(steps, token_ids.shape[0])

    def encode_soft(self, distributions: list[Tensor]) -> Tensor:
        """Per-step vocabulary distributions [B,V] -> states [B,T,H]."""
        if not distributions:
            raise ShapeMismatchError("disc_encode_soft", (0,))
        steps = [ad.matmul(y, self.embedding) for y in distributions]
        return self._encode_steps(steps, distributions[0].shape[0])

    def _encode_steps(self, embedded_steps: list[Tensor], batch: int) -> Tensor:
        hs = [Tensor(np.zeros((batch, out))) for _, out in
              self.config.encoder.layer_sizes()]
        cs = [Tensor(np.zeros((batch, out))) for _, out in
              self.config.encoder.layer_sizes()]
        tops = []
        for x in embedded_steps:
            for li, layer in enumerate(self.layers):
                hs[li], cs[li] = layer.step(x, hs[li], cs[li])
                x = hs[li]
            tops.append(hs[-1])
        return ad.stack(tops, axis=1)

    def head(self, pooled: Tensor, mode: str) -> Tensor:
        """Pooled [B,3H] -> pre-sigmoid score logits [B]."""
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        training = mode == "train"
        if training and pooled.shape[0] < 2:
            raise ShapeMismatchError("disc-head-train-batch", pooled.shape)
        x = pooled
        for lin, bn in self.blocks:
            x = ad.relu(bn(lin(x), training=training))
        z = self.head_out(x)
        return ad.reshape(z, (z.shape[0],))

    def score_logits(self, token_ids: np.ndarray, lengths=None,
                     mode: str = "eval") -> Tensor:
        states = self.encode(token_ids)
        return self.head(concat_pool(states, lengths), mode)

    def score(self, token_ids: np.ndarray, lengths=None,
              mode: str = "eval") -> Tensor:
        """Scores in (0,1); eval mode uses running batch-norm statistics,
        which makes single-sequence scoring legal."""
        return ad.sigmoid(self.score_logits(token_ids, lengths, mode))

    def score_soft(self, distributions: list[Tensor], lengths=None,
                   mode: str = "eval") -> Tensor:
        states = self.encode_soft(distributions)
        return ad.sigmoid(self.head(concat_pool(states, lengths), mode))

    def score_values(self, token_ids: np.ndarray, lengths=None) -> np.ndarray:
        """Graph-free eval-mode scores, e.g. for rewards."""
        with ad.no_grad():
            return self.score(token_ids, lengths, mode="eval").data.copy()
