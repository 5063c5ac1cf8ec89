"""Recurrent language-model generator.

Architecture: token embedding -> stacked LSTM -> decoder that reuses the
embedding matrix (weight tying), so the top LSTM layer is sized to the
embedding. Training-mode regularization follows the AWD-LSTM recipe:
embedding-row dropout, variational (per-window-constant) masks on inputs,
between layers and on outputs, and weight drop on the recurrent matrices.
Eval mode applies none of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeMismatchError
from .layers import LSTMLayer

ARGMAX_TEMPERATURE = 1e-6  # below this, sampling degenerates to greedy


@dataclass
class GeneratorConfig:
    vocab_size: int
    embedding_size: int = 64
    hidden_size: int = 128
    num_layers: int = 2
    bptt_len: int = 35
    dropout_embedding: float = 0.05
    dropout_input: float = 0.2
    dropout_hidden: float = 0.2
    dropout_output: float = 0.2
    weight_drop: float = 0.1
    encoder_type: str = "lstm"

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be at least 2")
        for name in ("embedding_size", "hidden_size", "num_layers", "bptt_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("dropout_embedding", "dropout_input", "dropout_hidden",
                     "dropout_output", "weight_drop"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{name} must be in [0,1), got {p}")
        if self.encoder_type != "lstm":
            raise ConfigError(
                f"encoder_type '{self.encoder_type}' is not implemented "
                f"(only 'lstm' is)")

    def layer_sizes(self) -> list[tuple[int, int]]:
        """(input, hidden) per layer; the top layer ends at embedding_size
        so the decoder can reuse the embedding matrix."""
        sizes = []
        for layer in range(self.num_layers):
            inp = self.embedding_size if layer == 0 else self.hidden_size
            out = self.embedding_size if layer == self.num_layers - 1 else self.hidden_size
            sizes.append((inp, out))
        return sizes

    def without_dropout(self) -> "GeneratorConfig":
        return replace(self, dropout_embedding=0.0, dropout_input=0.0,
                       dropout_hidden=0.0, dropout_output=0.0, weight_drop=0.0)


class HiddenState:
    """Per-layer (h, c) pairs, batch-major."""

    def __init__(self, pairs: list[tuple[Tensor, Tensor]]):
        self.pairs = pairs

    @classmethod
    def zeros(cls, config: GeneratorConfig, batch_size: int) -> "HiddenState":
        pairs = []
        for _, hidden in config.layer_sizes():
            pairs.append((Tensor(np.zeros((batch_size, hidden))),
                          Tensor(np.zeros((batch_size, hidden)))))
        return cls(pairs)

    def detach(self) -> "HiddenState":
        return HiddenState([(h.detach(), c.detach()) for h, c in self.pairs])

    @property
    def batch_size(self) -> int:
        return self.pairs[0][0].shape[0]


@dataclass
class Trajectory:
    """A sampled continuation and the log-probs of the policy that drew it."""

    tokens: list[int]
    step_log_probs: np.ndarray
    reward: float | None = None
    per_step_rewards: np.ndarray | None = None
    baseline_at_sample: float | None = None


class GeneratorModel:
    """Parameter container plus forward/sampling/scoring entry points."""

    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.embedding = Tensor(
            rng.uniform(-0.1, 0.1, (config.vocab_size, config.embedding_size)),
            requires_grad=True)
        self.decoder_bias = Tensor(np.zeros(config.vocab_size), requires_grad=True)
        self.layers = [LSTMLayer(inp, out, rng) for inp, out in config.layer_sizes()]

    # -- parameter plumbing ------------------------------------------------

    def parameters(self) -> list[tuple[str, Tensor]]:
        named = [("embedding", self.embedding), ("decoder_bias", self.decoder_bias)]
        for i, layer in enumerate(self.layers):
            named += [(f"lstm{i}.{n}", t) for n, t in layer.parameters()]
        return named

    def param_tensors(self) -> list[Tensor]:
        return [t for _, t in self.parameters()]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.parameters():
            t.data[...] = snap[name]

    # -- forward -----------------------------------------------------------

    def init_state(self, batch_size: int) -> HiddenState:
        return HiddenState.zeros(self.config, batch_size)

    def draw_masks(self, batch_size: int, rng: np.random.Generator) -> dict:
        """One dropout mask per site; reused at every step of a window."""
        cfg = self.config
        return {
            "embedding_rows": ad.dropout_mask((cfg.vocab_size, 1),
                                              cfg.dropout_embedding, rng),
            "input": ad.dropout_mask((batch_size, cfg.embedding_size),
                                     cfg.dropout_input, rng),
            "hidden": [ad.dropout_mask((batch_size, hidden),
                                       cfg.dropout_hidden, rng)
                       for _, hidden in cfg.layer_sizes()[:-1]],
            "output": ad.dropout_mask((batch_size, 1, cfg.embedding_size),
                                      cfg.dropout_output, rng),
            "weight": [ad.dropout_mask(layer.w_recur.shape, cfg.weight_drop, rng)
                       for layer in self.layers],
        }

    def decode(self, flat_states: Tensor) -> Tensor:
        """Hidden states [N, E] -> logits [N, V] through the tied embedding."""
        return ad.add(ad.matmul(flat_states, ad.transpose(self.embedding)),
                      self.decoder_bias)

    def forward(self, inputs: np.ndarray, state: HiddenState | None = None,
                mode: str = "eval", rng: np.random.Generator | None = None,
                masks: dict | None = None) -> tuple[Tensor, Tensor, HiddenState]:
        """Teacher-forced window pass.

        inputs: int ids [batch, time]. Returns (logits [B,T,V], top-layer
        states [B,T,E], detached next state). Train mode draws one dropout
        mask per site and reuses it across the window (variational); pass
        `masks` (from `draw_masks`) to pin them, e.g. for gradient checks.
        """
        inputs = np.asarray(inputs)
        if inputs.ndim != 2:
            raise ShapeMismatchError("lm_forward", inputs.shape)
        if inputs.size and (inputs.min() < 0 or inputs.max() >= self.config.vocab_size):
            raise ShapeMismatchError("lm_forward-ids",
                                     (int(inputs.min()), int(inputs.max())),
                                     (self.config.vocab_size,))
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        batch, time = inputs.shape
        if state is None:
            state = self.init_state(batch)
        if state.batch_size != batch:
            raise ShapeMismatchError("lm_forward-state",
                                     (state.batch_size,), (batch,))

        train = mode == "train"
        if train:
            if masks is None:
                if rng is None:
                    raise ConfigError("train-mode forward needs an rng for dropout")
                masks = self.draw_masks(batch, rng)
            emb_matrix = ad.apply_mask(self.embedding, masks["embedding_rows"])
            w_recs = [ad.apply_mask(layer.w_recur, m)
                      for layer, m in zip(self.layers, masks["weight"])]
        else:
            emb_matrix = self.embedding
            w_recs = [None] * len(self.layers)

        hs = [h for h, _ in state.pairs]
        cs = [c for _, c in state.pairs]
        tops = []
        for t in range(time):
            x = ad.embedding(emb_matrix, inputs[:, t])
            if train:
                x = ad.apply_mask(x, masks["input"])
            for li, layer in enumerate(self.layers):
                hs[li], cs[li] = layer.step(x, hs[li], cs[li], w_recs[li])
                x = hs[li]
                if train and li < len(self.layers) - 1:
                    x = ad.apply_mask(x, masks["hidden"][li])
            tops.append(hs[-1])
        states = ad.stack(tops, axis=1)  # [B,T,E]
        decoded_in = ad.apply_mask(states, masks["output"]) if train else states
        flat = ad.reshape(decoded_in, (batch * time, self.config.embedding_size))
        logits = ad.reshape(self.decode(flat),
                            (batch, time, self.config.vocab_size))
        new_state = HiddenState(list(zip(hs, cs))).detach()
        return logits, states, new_state

    # -- scoring -----------------------------------------------------------

    def sequence_log_prob(self, token_ids) -> float:
        """Eval-mode log-probability of tokens[1:] given the leading token.

        The sequence must start with the conditioning (begin-of-sequence)
        id; windows longer than bptt_len are processed with carried state.
        """
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size < 2:
            raise ShapeMismatchError("sequence_log_prob", ids.shape)
        total = 0.0
        state = self.init_state(1)
        window = self.config.bptt_len
        with ad.no_grad():
            for start in range(0, ids.size - 1, window):
                stop = min(start + window, ids.size - 1)
                logits, _, state = self.forward(ids[None, start:stop],
                                                state, mode="eval")
                logp = ad.log_softmax(logits, axis=-1)
                picked = ad.take_along_last(logp, ids[None, start + 1:stop + 1])
                total += float(picked.data.sum())
        return total

    def step_log_probs_batch(self, tokens: np.ndarray, bos_id: int) -> Tensor:
        """Differentiable per-step log-probs of sampled tokens, teacher-forced.

        tokens: [B, T] ids; the model is conditioned on `bos_id`. Dropout
        stays off so the scored policy is the same one that sampled. Returns
        a [B, T] Tensor; mask out positions past each row's length yourself.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        batch = tokens.shape[0]
        inputs = np.concatenate(
            [np.full((batch, 1), bos_id, dtype=np.int64), tokens[:, :-1]], axis=1)
        logits, _, _ = self.forward(inputs, mode="eval")
        logp = ad.log_softmax(logits, axis=-1)
        return ad.take_along_last(logp, tokens)

    def sequence_log_probs_batch(self, tokens: np.ndarray, lengths: np.ndarray,
                                 bos_id: int) -> Tensor:
        """Differentiable per-sequence sum of log-probs over valid positions."""
        tokens = np.asarray(tokens, dtype=np.int64)
        picked = self.step_log_probs_batch(tokens, bos_id)
        mask = (np.arange(tokens.shape[1])[None, :]
                < np.asarray(lengths)[:, None])
        return ad.tsum(ad.mul(picked, Tensor(mask.astype(np.float64))), axis=1)

    # -- sampling ----------------------------------------------------------

    def _embed_rows(self, ids: np.ndarray) -> Tensor:
        return ad.embedding(self.embedding, ids)

    def sample_batch(self, count: int, max_lens, temperature: float,
                     rng: np.random.Generator, bos_id: int,
                     eos_id: int | None = None,
                     prefix: list[int] | None = None
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Draw `count` continuations in parallel (eval mode, no graph).

        Each token comes from softmax(logits / temperature); the recorded
        log-probs are those of the untempered distribution at the sampled
        tokens. Rows stop at `eos_id` (the eos itself is kept) or at their
        length cap. Returns (tokens [count, L] zero-padded, lengths, logps).
        """
        if temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {temperature}")
        caps = np.broadcast_to(np.asarray(max_lens, dtype=np.int64), (count,)).copy()
        if caps.min() < 1:
            raise ConfigError("sample length cap must be >= 1")
        horizon = int(caps.max())
        tokens = np.zeros((count, horizon), dtype=np.int64)
        logps = np.zeros((count, horizon))
        lengths = np.zeros(count, dtype=np.int64)
        done = np.zeros(count, dtype=bool)
        with ad.no_grad():
            state = self.init_state(count)
            feed = [bos_id] + list(prefix or [])
            current = np.full(count, feed[0], dtype=np.int64)
            for extra in feed[1:]:
                _, state = self._sample_step(current, state)
                current = np.full(count, extra, dtype=np.int64)
            for t in range(horizon):
                logits, state = self._sample_step(current, state)
                if temperature < ARGMAX_TEMPERATURE:
                    chosen = logits.argmax(axis=1)
                else:
                    probs = _softmax_rows(logits / temperature)
                    chosen = _categorical_rows(probs, rng)
                steplogp = _log_softmax_rows(logits)[np.arange(count), chosen]
                active = ~done
                tokens[active, t] = chosen[active]
                logps[active, t] = steplogp[active]
                lengths[active] += 1
                if eos_id is not None:
                    done |= active & (chosen == eos_id)
                done |= lengths >= caps
                if done.all():
                    break
                current = chosen
        width = int(lengths.max())
        return tokens[:, :width], lengths, logps[:, :width]

    def _sample_step(self, ids: np.ndarray, state: HiddenState
                     ) -> tuple[np.ndarray, HiddenState]:
        x = self._embed_rows(ids)
        hs = [h for h, _ in state.pairs]
        cs = [c for _, c in state.pairs]
        for li, layer in enumerate(self.layers):
            hs[li], cs[li] = layer.step(x, hs[li], cs[li])
            x = hs[li]
        logits = self.decode(hs[-1])
        return logits.data, HiddenState(list(zip(hs, cs)))

    def sample(self, prefix: list[int], max_len: int, temperature: float,
               rng: np.random.Generator, eos_id: int | None = None) -> Trajectory:
        """Single multinomial continuation of `prefix` (which starts at bos)."""
        if not prefix:
            raise ConfigError("sample needs a nonempty prefix (begin-of-sequence)")
        if max_len < 1:
            raise ConfigError("max_len must be >= 1")
        tokens, lengths, logps = self.sample_batch(
            1, max_len, temperature, rng, bos_id=prefix[0],
            eos_id=eos_id, prefix=list(prefix[1:]))
        n = int(lengths[0])
        return Trajectory(tokens=[int(t) for t in tokens[0, :n]],
                          step_log_probs=logps[0, :n].copy())


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _categorical_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row from row-wise categorical distributions."""
    cdf = probs.cumsum(axis=1)
    u = rng.random((probs.shape[0], 1))
    return np.minimum((cdf < u).sum(axis=1), probs.shape[1] - 1)
