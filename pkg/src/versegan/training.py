"""Training regimes: MLE pretraining/fine-tuning, policy-gradient adversarial
fine-tuning, and the relaxed (Gumbel-softmax) adversarial variant.

Adversarial schedule: the discriminator takes `disc_steps_per_gen_step`
updates for every generator update. Generator rewards are raw discriminator
scores in (0,1); the policy-gradient estimator is REINFORCE with an
exponential-moving-average baseline, with optional Monte-Carlo rollouts for
per-step rewards. A divergence guard halts adversarial training if held-out
perplexity climbs past five times its starting value.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import evaluation
from .autodiff import Tensor
from .corpus import SplitCorpus, Vocabulary, make_bptt_batches, stream_ids
from .discriminator import DiscriminatorModel
from .errors import ConfigError, GradientError, TrainingDiverged, VerseganError
from .generator import GeneratorModel, _categorical_rows, _softmax_rows
from .optim import Adam, clip_grad_norm
from .runs import RunContext

GAN_REGIMES = ("creative_gan", "gumbel_gan")
DIVERGENCE_FACTOR = 5.0


@dataclass
class TrainConfig:
    regime: str = "mle"
    epochs: int = 1
    learning_rate: float = 3e-3
    batch_size: int = 50
    disc_steps_per_gen_step: int = 3
    rollout_count: int = 0
    gumbel_temperature: float = 1.0
    gumbel_anneal: float = 0.9
    gumbel_floor: float = 0.1
    baseline_momentum: float = 0.9
    seed: int = 0
    adam_beta1: float = 0.7
    adam_beta2: float = 0.8
    clip_mle: float = 0.25
    clip_gan: float = 1.0
    lm_interleave: int = 0

    def validate(self) -> None:
        if self.regime not in ("mle",) + GAN_REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.regime in GAN_REGIMES and self.disc_steps_per_gen_step < 1:
            raise ConfigError("disc_steps_per_gen_step must be >= 1 in GAN regimes")
        if self.gumbel_temperature <= 0 or self.gumbel_floor <= 0:
            raise ConfigError("gumbel temperature must be positive")
        if not 0.0 < self.gumbel_anneal <= 1.0:
            raise ConfigError("gumbel_anneal must be in (0,1]")
        if not 0.0 <= self.baseline_momentum < 1.0:
            raise ConfigError("baseline_momentum must be in [0,1)")
        if self.rollout_count < 0:
            raise ConfigError("rollout_count must be >= 0")


@dataclass
class RewardBaseline:
    """EMA of mean batch reward; read for the advantage, then updated."""

    momentum: float = 0.9
    value: float = 0.0

    def update(self, mean_reward: float) -> None:
        self.value = self.momentum * self.value + (1.0 - self.momentum) * mean_reward


# ---------------------------------------------------------------------------
# maximum-likelihood training


def train_language_model(gen: GeneratorModel, split: SplitCorpus,
                         vocab: Vocabulary, config: TrainConfig,
                         run: RunContext | None = None,
                         phase: str = "pretrain") -> list[dict]:
    """BPTT cross-entropy training with carried, detached hidden state.

    Logs train cross-entropy and held-out perplexity per epoch; the model
    ends at its best-validation snapshot, which (when a run directory is
    given) is also kept on disk. A NaN loss aborts with the last good
    snapshot restored.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    opt = Adam(gen.param_tensors(), config.learning_rate,
               config.adam_beta1, config.adam_beta2)
    train_ids = stream_ids(split.train, vocab)
    valid_ids = stream_ids(split.valid, vocab) if split.valid else None
    batches = make_bptt_batches(train_ids, config.batch_size, gen.config.bptt_len)
    phase_tag = "pretrained" if phase == "pretrain" else "finetuned"

    history: list[dict] = []
    best = (float("inf"), gen.snapshot())
    step = 0
    for epoch in range(config.epochs):
        state = gen.init_state(config.batch_size)
        epoch_nll = 0.0
        epoch_tokens = 0
        for batch in batches:
            try:
                logits, _, state = gen.forward(batch.inputs, state,
                                               mode="train", rng=rng)
                loss = ad.cross_entropy(logits, batch.targets)
                opt.zero_grad()
                loss.backward()
                clip_grad_norm(opt.params, config.clip_mle)
                opt.step()
            except (ad.NonFiniteError, GradientError) as exc:
                gen.restore(best[1])
                if run is not None:
                    _save_lm_checkpoint(run, "rescued", phase_tag, gen, vocab,
                                        opt, config, rng)
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step}; "
                    f"last good snapshot restored") from exc
            epoch_nll += float(loss.data) * batch.targets.size
            epoch_tokens += batch.targets.size
            step += 1
            if run is not None:
                run.metrics.log(phase=f"{phase}_step", epoch=epoch, step=step,
                                loss=float(loss.data), seed=config.seed)
        train_ce = epoch_nll / max(epoch_tokens, 1)
        record = {"phase": f"{phase}_epoch", "epoch": epoch, "step": step,
                  "loss": train_ce,
                  "train_perplexity": float(np.exp(train_ce))}
        if valid_ids is not None:
            total, count = evaluation.stream_nll(gen, valid_ids)
            valid_ppl = float(np.exp(total / count))
            record["perplexity"] = valid_ppl
            if valid_ppl < best[0]:
                best = (valid_ppl, gen.snapshot())
                if run is not None:
                    _save_lm_checkpoint(run, "best", phase_tag, gen, vocab,
                                        opt, config, rng)
        else:
            if train_ce < best[0]:
                best = (train_ce, gen.snapshot())
        history.append(record)
        if run is not None:
            run.metrics.log(phase=record["phase"], epoch=epoch, step=step,
                            loss=train_ce, perplexity=record.get("perplexity"),
                            seed=config.seed)
    gen.restore(best[1])
    if run is not None:
        _save_lm_checkpoint(run, "final", phase_tag, gen, vocab, opt, config, rng)
    return history


def pretrain_mle(gen, split, vocab, config, run=None) -> list[dict]:
    return train_language_model(gen, split, vocab, config, run, phase="pretrain")


def finetune_lm(gen, split, vocab, config, run=None) -> list[dict]:
    return train_language_model(gen, split, vocab, config, run, phase="finetune")


def _save_lm_checkpoint(run, tag, phase_tag, gen, vocab, opt, config, rng):
    ckpt.save_checkpoint(run.checkpoint_path(tag), phase=phase_tag,
                         generator=gen, vocab=vocab, gen_opt_state=opt.state,
                         train_config=_config_dict(config),
                         rng_state=ckpt.rng_state_to_json(rng))


def _config_dict(config: TrainConfig) -> dict:
    return asdict(config)


# ---------------------------------------------------------------------------
# discriminator updates


def binary_batch_step(disc: DiscriminatorModel, opt: Adam, tokens: np.ndarray,
                      lengths: np.ndarray, labels: np.ndarray,
                      clip: float = 1.0) -> tuple[float, float]:
    """One BCE step on a labeled batch; returns (loss, accuracy@0.5)."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.min() == labels.max():
        raise VerseganError("degenerate discriminator batch: all labels equal")
    logits = disc.score_logits(tokens, lengths, mode="train")
    loss = ad.bce_with_logits(logits, labels)
    opt.zero_grad()
    loss.backward()
    clip_grad_norm(opt.params, clip)
    opt.step()
    accuracy = float(((logits.data > 0.0) == (labels > 0.5)).mean())
    return float(loss.data), accuracy


def train_discriminator_step(disc: DiscriminatorModel, opt: Adam,
                             real_tokens: np.ndarray, real_lengths: np.ndarray,
                             gen, bos_id: int, rng: np.random.Generator,
                             clip: float = 1.0) -> tuple[float, float]:
    """Real batch vs a freshly sampled fake batch of matching lengths.

    `gen` only needs a `sample_batch` method and is not updated (sampling
    records no graph). Labels: real=1, fake=0.
    """
    real_tokens = np.asarray(real_tokens)
    real_lengths = np.asarray(real_lengths)
    n = real_tokens.shape[0]
    if n < 1:
        raise VerseganError("empty real batch")
    fake_tokens, fake_lengths, _ = gen.sample_batch(
        n, real_lengths, 1.0, rng, bos_id=bos_id, eos_id=None)
    width = max(real_tokens.shape[1], fake_tokens.shape[1])
    combined = np.zeros((2 * n, width), dtype=np.int64)
    combined[:n, :real_tokens.shape[1]] = real_tokens
    combined[n:, :fake_tokens.shape[1]] = fake_tokens
    lengths = np.concatenate([real_lengths, fake_lengths])
    labels = np.concatenate([np.ones(n), np.zeros(n)])
    return binary_batch_step(disc, opt, combined, lengths, labels, clip)


# ---------------------------------------------------------------------------
# policy-gradient generator updates


def reinforce_loss(gen: GeneratorModel, tokens: np.ndarray, lengths: np.ndarray,
                   step_weights: np.ndarray, bos_id: int) -> Tensor:
    """-mean over the batch of sum_t weights[b,t] * log p(token_t | prefix).

    `step_weights` already carries the advantage (reward minus baseline) and
    zeros for positions past each row's length.
    """
    picked = gen.step_log_probs_batch(tokens, bos_id)
    weighted = ad.mul(picked, Tensor(np.asarray(step_weights, dtype=np.float64)))
    return ad.mul(ad.tmean(ad.tsum(weighted, axis=1)), -1.0)


def rollout_returns(gen: GeneratorModel, scorer, tokens: np.ndarray,
                    lengths: np.ndarray, rewards: np.ndarray,
                    rollout_count: int, rng: np.random.Generator,
                    bos_id: int, eos_id: int | None, cap: int) -> np.ndarray:
    """Per-step Monte-Carlo returns, SeqGAN style.

    Each prefix tokens[:, :t+1] is completed `rollout_count` times by the
    current policy and scored; the per-step return is the mean completion
    score. The final step of each row keeps the actual sequence reward.
    """
    batch, width = tokens.shape
    returns = np.zeros((batch, width))
    for t in range(width):
        active = lengths > t + 1  # final position keeps the real reward
        if not active.any():
            continue
        remaining = cap - (t + 1)
        scores = np.zeros(batch)
        for _ in range(rollout_count):
            if remaining > 0:
                cont, cont_len, _ = _continue_batch(
                    gen, tokens[:, :t + 1], rng, remaining, eos_id, bos_id)
                full = np.concatenate([tokens[:, :t + 1], cont], axis=1)
                full_len = t + 1 + cont_len
            else:
                full, full_len = tokens[:, :t + 1], np.full(batch, t + 1)
            scores += scorer.score_values(full, full_len)
        returns[:, t] = np.where(active, scores / rollout_count, 0.0)
    rows = np.arange(batch)
    returns[rows, lengths - 1] = rewards
    return returns


def _continue_batch(gen: GeneratorModel, prefixes: np.ndarray,
                    rng: np.random.Generator, max_new: int,
                    eos_id: int | None, bos_id: int):
    """Sample continuations after feeding per-row prefixes (no graph)."""
    batch, plen = prefixes.shape
    with ad.no_grad():
        state = gen.init_state(batch)
        current = np.full(batch, bos_id, dtype=np.int64)
        for t in range(plen):
            _, state = gen._sample_step(current, state)
            current = prefixes[:, t]
        tokens = np.zeros((batch, max_new), dtype=np.int64)
        lengths = np.zeros(batch, dtype=np.int64)
        done = np.zeros(batch, dtype=bool)
        for t in range(max_new):
            logits, state = gen._sample_step(current, state)
            probs = _softmax_rows(logits)
            chosen = _categorical_rows(probs, rng)
            active = ~done
            tokens[active, t] = chosen[active]
            lengths[active] += 1
            if eos_id is not None:
                done |= active & (chosen == eos_id)
            done |= lengths >= max_new
            if done.all():
                break
            current = chosen
    return tokens, lengths, None


def creative_gan_generator_step(gen: GeneratorModel, opt: Adam, scorer,
                                config: TrainConfig, baseline: RewardBaseline,
                                rng: np.random.Generator, bos_id: int,
                                eos_id: int | None, sample_lengths) -> dict:
    """One REINFORCE step on rewards from the (frozen) discriminator.

    Samples a trajectory batch, scores completed sequences in eval mode,
    subtracts the EMA baseline, and ascends expected reward through the
    log-probabilities of the sampled tokens. With rollout_count > 0 the
    terminal reward is replaced by per-step Monte-Carlo returns.
    """
    batch = config.batch_size
    caps = np.broadcast_to(np.asarray(sample_lengths, dtype=np.int64),
                           (batch,)).copy()
    tokens, lengths, _ = gen.sample_batch(batch, caps, 1.0, rng,
                                          bos_id=bos_id, eos_id=eos_id)
    rewards = scorer.score_values(tokens, lengths)
    if not np.isfinite(rewards).all():
        raise GradientError("non-finite reward, generator step aborted")
    b = baseline.value
    mask = (np.arange(tokens.shape[1])[None, :] < lengths[:, None])
    if config.rollout_count > 0:
        returns = rollout_returns(gen, scorer, tokens, lengths, rewards,
                                  config.rollout_count, rng, bos_id, eos_id,
                                  int(caps.max()))
        weights = (returns - b) * mask
    else:
        weights = (rewards[:, None] - b) * mask
    loss = reinforce_loss(gen, tokens, lengths, weights, bos_id)
    opt.zero_grad()
    loss.backward()
    clip_grad_norm(opt.params, config.clip_gan)
    opt.step()
    mean_reward = float(rewards.mean())
    baseline.update(mean_reward)
    return {"loss": float(loss.data), "mean_reward": mean_reward,
            "baseline": b}


# ---------------------------------------------------------------------------
# relaxed (Gumbel-softmax) generator updates


def gumbel_noise(shape, rng: np.random.Generator, eps: float = 1e-20) -> np.ndarray:
    """Standard Gumbel draws: -log(-log U)."""
    u = rng.random(shape)
    return -np.log(-np.log(u + eps) + eps)


def relaxed_sample(log_probs: Tensor, tau: float,
                   rng: np.random.Generator) -> Tensor:
    """Differentiable surrogate for a categorical draw.

    y = softmax((log pi + g) / tau) with Gumbel noise g: rows sum to 1, all
    entries positive, and argmax(y) is distributed exactly as Categorical(pi)
    for any tau (the max of log pi + g is a Gumbel-max draw).
    """
    if tau <= 0:
        raise ConfigError(f"relaxation temperature must be positive, got {tau}")
    g = Tensor(gumbel_noise(log_probs.shape, rng))
    return ad.softmax(ad.mul(ad.add(log_probs, g), 1.0 / tau))


def gumbel_generator_step(gen: GeneratorModel, opt: Adam,
                          disc: DiscriminatorModel, config: TrainConfig,
                          tau: float, rng: np.random.Generator, bos_id: int,
                          length: int) -> dict:
    """End-to-end differentiable generator step through relaxed samples.

    The generator autoregresses on soft tokens (relaxed sample times the
    embedding matrix); the discriminator consumes the same soft sequence and
    the loss is the negated mean score. The discriminator is not updated
    (its gradients are discarded).
    """
    if length < 1:
        raise ConfigError("gumbel step needs length >= 1")
    batch = config.batch_size
    hs = [Tensor(np.zeros((batch, out))) for _, out in gen.config.layer_sizes()]
    cs = [Tensor(np.zeros((batch, out))) for _, out in gen.config.layer_sizes()]
    x = ad.embedding(gen.embedding, np.full(batch, bos_id, dtype=np.int64))
    ys: list[Tensor] = []
    for _ in range(length):
        h = x
        for li, layer in enumerate(gen.layers):
            hs[li], cs[li] = layer.step(h, hs[li], cs[li])
            h = hs[li]
        logits = gen.decode(hs[-1])
        y = relaxed_sample(ad.log_softmax(logits, axis=-1), tau, rng)
        ys.append(y)
        x = ad.matmul(y, gen.embedding)
    scores = disc.score_soft(ys, mode="eval")
    loss = ad.mul(ad.tmean(scores), -1.0)
    opt.zero_grad()
    loss.backward()
    clip_grad_norm(opt.params, config.clip_gan)
    opt.step()
    ad.zero_grads(disc.param_tensors())  # gradients flowed through, not used
    return {"loss": float(loss.data), "mean_reward": float(scores.data.mean())}


# ---------------------------------------------------------------------------
# the adversarial loop


def adversarial_train(gen: GeneratorModel, disc: DiscriminatorModel,
                      split: SplitCorpus, vocab: Vocabulary,
                      config: TrainConfig, run: RunContext | None = None
                      ) -> list[dict]:
    """Alternating schedule: disc_steps_per_gen_step D steps, then one G step.

    Per epoch the discriminator sees each real-document batch once; logs
    discriminator accuracy, mean generator reward, and held-out perplexity.
    If perplexity exceeds five times its starting value, training halts and
    the best snapshot is restored.
    """
    config.validate()
    if config.regime not in GAN_REGIMES:
        raise ConfigError(f"adversarial_train needs a GAN regime, got {config.regime!r}")
    rng = np.random.default_rng(config.seed)
    gen_opt = Adam(gen.param_tensors(), config.learning_rate,
                   config.adam_beta1, config.adam_beta2)
    disc_opt = Adam(disc.trainable_parameters(), config.learning_rate,
                    config.adam_beta1, config.adam_beta2)
    baseline = RewardBaseline(momentum=config.baseline_momentum)

    cap = gen.config.bptt_len
    real_docs = [np.asarray(d[:cap], dtype=np.int64)
                 for d in split.train if len(d) >= 1]
    if len(real_docs) < config.batch_size:
        raise VerseganError(
            f"need at least batch_size={config.batch_size} training documents, "
            f"got {len(real_docs)}")
    length_pool = np.array([len(d) for d in real_docs])

    valid_ids = stream_ids(split.valid if split.valid else split.train, vocab)
    start_ppl = evaluation.perplexity(gen, valid_ids)
    best = (start_ppl, gen.snapshot(), disc.snapshot())

    mle_batches = None
    if config.lm_interleave > 0:
        train_ids = stream_ids(split.train, vocab)
        mle_batches = make_bptt_batches(train_ids, config.batch_size,
                                        gen.config.bptt_len)

    history: list[dict] = []
    step = 0
    gen_steps = 0
    halted = False
    for epoch in range(config.epochs):
        tau = max(config.gumbel_floor,
                  config.gumbel_temperature * config.gumbel_anneal ** epoch)
        order = rng.permutation(len(real_docs))
        accs: list[float] = []
        rewards: list[float] = []
        pending = 0
        for lo in range(0, len(order) - config.batch_size + 1, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            real_lengths = length_pool[idx]
            width = int(real_lengths.max())
            real = np.zeros((len(idx), width), dtype=np.int64)
            for row, doc_i in enumerate(idx):
                real[row, :len(real_docs[doc_i])] = real_docs[doc_i]
            gen_before = gen.embedding.data.copy()
            loss, acc = train_discriminator_step(
                disc, disc_opt, real, real_lengths, gen, vocab.bos_id, rng,
                clip=config.clip_gan)
            assert np.array_equal(gen.embedding.data, gen_before)
            step += 1
            pending += 1
            accs.append(acc)
            if run is not None:
                run.metrics.log(phase="disc_step", epoch=epoch, step=step,
                                loss=loss, disc_accuracy=acc, seed=config.seed)
            if pending < config.disc_steps_per_gen_step:
                continue
            pending = 0
            disc_before = disc.head_out.weight.data.copy()
            if config.regime == "creative_gan":
                lengths = np.minimum(
                    length_pool[rng.integers(0, len(length_pool),
                                             config.batch_size)], cap)
                info = creative_gan_generator_step(
                    gen, gen_opt, disc, config, baseline, rng,
                    vocab.bos_id, vocab.eos_id, lengths)
            else:
                length = int(min(length_pool[rng.integers(0, len(length_pool))],
                                 cap))
                info = gumbel_generator_step(gen, gen_opt, disc, config, tau,
                                             rng, vocab.bos_id, length)
            assert np.array_equal(disc.head_out.weight.data, disc_before)
            step += 1
            gen_steps += 1
            rewards.append(info["mean_reward"])
            if run is not None:
                run.metrics.log(phase="gen_step", epoch=epoch, step=step,
                                loss=info["loss"],
                                mean_reward=info["mean_reward"],
                                seed=config.seed)
            if mle_batches is not None and gen_steps % config.lm_interleave == 0:
                _interleaved_mle_step(gen, gen_opt, mle_batches, config, rng,
                                      gen_steps)

        ppl = evaluation.perplexity(gen, valid_ids)
        record = {"phase": "gan_epoch", "epoch": epoch, "step": step,
                  "perplexity": ppl,
                  "disc_accuracy": float(np.mean(accs)) if accs else None,
                  "mean_reward": float(np.mean(rewards)) if rewards else None}
        history.append(record)
        if run is not None:
            run.metrics.log(phase="gan_epoch", epoch=epoch, step=step,
                            perplexity=ppl, disc_accuracy=record["disc_accuracy"],
                            mean_reward=record["mean_reward"], seed=config.seed)
            _save_gan_checkpoint(run, f"gan-epoch{epoch + 1}", gen, disc,
                                 vocab, gen_opt, disc_opt, config, rng)
        if ppl < best[0]:
            best = (ppl, gen.snapshot(), disc.snapshot())
        if ppl > DIVERGENCE_FACTOR * start_ppl:
            gen.restore(best[1])
            disc.restore(best[2])
            halted = True
            if run is not None:
                run.metrics.log(phase="gan_halt", epoch=epoch, step=step,
                                perplexity=best[0], seed=config.seed)
                _save_gan_checkpoint(run, "best", gen, disc, vocab, gen_opt,
                                     disc_opt, config, rng)
            break
    if run is not None and not halted:
        _save_gan_checkpoint(run, "final", gen, disc, vocab, gen_opt,
                             disc_opt, config, rng)
    return history


def _interleaved_mle_step(gen, opt, batches, config, rng, counter) -> None:
    batch = batches[(counter // config.lm_interleave - 1) % len(batches)]
    logits, _, _ = gen.forward(batch.inputs, mode="train", rng=rng)
    loss = ad.cross_entropy(logits, batch.targets)
    opt.zero_grad()
    loss.backward()
    clip_grad_norm(opt.params, config.clip_mle)
    opt.step()


def _save_gan_checkpoint(run, tag, gen, disc, vocab, gen_opt, disc_opt,
                         config, rng) -> None:
    ckpt.save_checkpoint(run.checkpoint_path(tag), phase="gan", generator=gen,
                         vocab=vocab, gen_opt_state=gen_opt.state,
                         discriminator=disc, disc_opt_state=disc_opt.state,
                         train_config=_config_dict(config),
                         rng_state=ckpt.rng_state_to_json(rng))
