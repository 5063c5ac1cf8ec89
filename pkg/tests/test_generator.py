"""Language-model generator: forward contracts, tying, dropout, sampling."""

import numpy as np
import pytest

from conftest import tiny_config, tiny_generator, uniform_generator
from versegan import autodiff as ad
from versegan.errors import ConfigError, ShapeMismatchError
from versegan.generator import GeneratorConfig, GeneratorModel


class TestForward:
    def test_logits_shape(self):
        gen = tiny_generator(vocab_size=7)
        logits, states, _ = gen.forward(np.zeros((2, 3), dtype=int))
        assert logits.shape == (2, 3, 7)
        assert states.shape == (2, 3, gen.config.embedding_size)

    def test_dropout_zero_makes_train_equal_eval(self, rng):
        gen = tiny_generator(vocab_size=5)
        inputs = rng.integers(0, 5, size=(2, 4))
        eval_logits, _, _ = gen.forward(inputs, mode="eval")
        train_logits, _, _ = gen.forward(inputs, mode="train",
                                         rng=np.random.default_rng(0))
        assert np.array_equal(eval_logits.data, train_logits.data)

    def test_out_of_range_id_rejected(self):
        gen = tiny_generator(vocab_size=5)
        with pytest.raises(ShapeMismatchError):
            gen.forward(np.array([[5]]))

    def test_full_model_gradcheck_eval(self, rng):
        gen = tiny_generator(vocab_size=7)
        inputs = rng.integers(0, 7, size=(2, 3))
        targets = rng.integers(0, 7, size=(2, 3))

        def f():
            logits, _, _ = gen.forward(inputs, mode="eval")
            return ad.cross_entropy(logits, targets)

        assert ad.grad_check(f, gen.param_tensors()) < 1e-4

    def test_full_model_gradcheck_train_with_frozen_masks(self, rng):
        gen = tiny_generator(vocab_size=7, dropout_embedding=0.2,
                             dropout_input=0.3, dropout_hidden=0.3,
                             dropout_output=0.3, weight_drop=0.3)
        masks = gen.draw_masks(2, np.random.default_rng(5))
        inputs = rng.integers(0, 7, size=(2, 3))
        targets = rng.integers(0, 7, size=(2, 3))

        def f():
            logits, _, _ = gen.forward(inputs, mode="train", masks=masks)
            return ad.cross_entropy(logits, targets)

        assert ad.grad_check(f, gen.param_tensors()) < 1e-4

    def test_hidden_state_carry_matches_single_window(self, rng):
        gen = tiny_generator(vocab_size=9)
        stream = rng.integers(0, 9, size=(1, 8))
        whole, _, _ = gen.forward(stream, mode="eval")
        first, _, carried = gen.forward(stream[:, :5], mode="eval")
        second, _, _ = gen.forward(stream[:, 5:], carried, mode="eval")
        rejoined = np.concatenate([first.data, second.data], axis=1)
        assert np.array_equal(whole.data, rejoined)

    def test_state_detached_between_windows(self):
        gen = tiny_generator()
        _, _, state = gen.forward(np.zeros((1, 3), dtype=int))
        for h, c in state.pairs:
            assert not h.requires_grad and h._backward is None
            assert not c.requires_grad and c._backward is None


class TestWeightTying:
    def test_decoder_is_embedding_storage(self):
        gen = tiny_generator()
        logits = gen.decode(ad.Tensor(np.ones((1, gen.config.embedding_size))))
        expected = np.ones(gen.config.embedding_size) @ gen.embedding.data.T
        assert np.allclose(logits.data, expected + gen.decoder_bias.data)

    def test_perturbing_one_row_moves_both_paths(self):
        # finite differences on each path of the shared matrix
        gen = tiny_generator(vocab_size=6)
        token = 2
        inputs = np.array([[token]])
        base_logits, _, _ = gen.forward(inputs, mode="eval")

        eps = 1e-6
        gen.embedding.data[token, 0] += eps
        bumped, _, _ = gen.forward(inputs, mode="eval")
        gen.embedding.data[token, 0] -= eps

        delta = np.abs(bumped.data - base_logits.data)[0, 0]
        # input path: every logit shifts because the input representation moved
        assert delta[(np.arange(6) != token)].max() > 0
        # output path: scoring a *different* input still moves logit column 2
        other = np.array([[4]])
        base_other, _, _ = gen.forward(other, mode="eval")
        gen.embedding.data[token, 0] += eps
        bumped_other, _, _ = gen.forward(other, mode="eval")
        gen.embedding.data[token, 0] -= eps
        col_delta = np.abs(bumped_other.data - base_other.data)[0, 0]
        assert col_delta[token] > 0
        assert col_delta[(np.arange(6) != token)].max() == pytest.approx(0.0)

    def test_top_layer_must_match_embedding_size(self):
        cfg = tiny_config()
        assert cfg.layer_sizes()[-1][1] == cfg.embedding_size


class TestVariationalDropout:
    def test_one_mask_per_site_per_window(self, monkeypatch):
        # variational = a single mask drawn per site, regardless of window length
        gen = tiny_generator(dropout_input=0.5, dropout_hidden=0.5,
                             dropout_output=0.5, weight_drop=0.5,
                             dropout_embedding=0.5)
        calls = []
        real = ad.dropout_mask

        def spy(shape, p, rng):
            calls.append(shape)
            return real(shape, p, rng)

        monkeypatch.setattr("versegan.generator.ad.dropout_mask", spy)
        for time in (1, 6):
            calls.clear()
            gen.forward(np.zeros((3, time), dtype=int), mode="train",
                        rng=np.random.default_rng(0))
            # embedding rows + input + (layers-1) hidden + output + per-layer weight
            assert len(calls) == 1 + 1 + (gen.config.num_layers - 1) + 1 \
                + gen.config.num_layers

    def test_embedding_dropout_zeroes_whole_rows(self):
        gen = tiny_generator(dropout_embedding=0.5, vocab_size=40)
        masks = gen.draw_masks(1, np.random.default_rng(3))
        rows = masks["embedding_rows"]
        assert rows.shape == (40, 1)
        assert set(np.unique(rows)) <= {0.0, 2.0}
        assert (rows == 0).any()


class TestSequenceLogProb:
    def test_uniform_single_continuation(self):
        gen = uniform_generator(vocab_size=10)
        lp = gen.sequence_log_prob([0, 3])
        assert lp == pytest.approx(-np.log(10.0), abs=1e-12)

    def test_windowed_equals_whole(self):
        gen = tiny_generator(vocab_size=6, bptt_len=3)
        seq = [0, 1, 2, 3, 4, 5, 1, 2, 3]
        whole = GeneratorModel(
            GeneratorConfig(**{**gen.config.__dict__, "bptt_len": 64}),
            np.random.default_rng(0))
        whole.restore(gen.snapshot())
        assert gen.sequence_log_prob(seq) == pytest.approx(
            whole.sequence_log_prob(seq), abs=1e-12)

    @pytest.mark.parametrize("length", [1, 2, 3])
    def test_fixed_length_probabilities_sum_to_one(self, length):
        gen = tiny_generator(vocab_size=3, num_layers=1)
        total = 0.0
        for seq in np.ndindex(*(3,) * length):
            total += np.exp(gen.sequence_log_prob([0, *seq]))
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_batch_version_matches_single(self, rng):
        gen = tiny_generator(vocab_size=6)
        tokens = np.array([[1, 2, 3], [4, 5, 0]])
        lengths = np.array([3, 2])
        batch = gen.sequence_log_probs_batch(tokens, lengths, bos_id=0)
        singles = [gen.sequence_log_prob([0, 1, 2, 3]),
                   gen.sequence_log_prob([0, 4, 5])]
        assert np.allclose(batch.data, singles, atol=1e-12)


class TestSampling:
    def test_same_seed_same_tokens(self):
        gen = tiny_generator(vocab_size=8)
        a = gen.sample([2], 10, 1.0, np.random.default_rng(11), eos_id=3)
        b = gen.sample([2], 10, 1.0, np.random.default_rng(11), eos_id=3)
        assert a.tokens == b.tokens
        assert np.array_equal(a.step_log_probs, b.step_log_probs)

    def test_near_zero_temperature_is_greedy(self):
        gen = tiny_generator(vocab_size=8)
        greedy = gen.sample([2], 6, 1e-9, np.random.default_rng(0))
        by_hand = []
        state = gen.init_state(1)
        current = np.array([2])
        for _ in range(6):
            logits, state = gen._sample_step(current, state)
            current = logits.argmax(axis=1)
            by_hand.append(int(current[0]))
        assert greedy.tokens == by_hand

    def test_recorded_log_probs_are_untempered(self):
        gen = tiny_generator(vocab_size=5)
        traj = gen.sample([1], 4, 3.0, np.random.default_rng(4))
        lp = gen.sequence_log_prob([1, *traj.tokens])
        assert lp == pytest.approx(traj.step_log_probs.sum(), abs=1e-9)

    def test_stops_at_eos(self):
        gen = uniform_generator(vocab_size=4)
        for seed in range(20):
            traj = gen.sample([0], 30, 1.0, np.random.default_rng(seed), eos_id=2)
            if 2 in traj.tokens:
                assert traj.tokens.index(2) == len(traj.tokens) - 1

    def test_single_step_frequencies_match_softmax(self):
        # brute-force counting oracle over 1e5 draws, vocab 5
        gen = tiny_generator(vocab_size=5, seed=3)
        with ad.no_grad():
            logits, _ = gen._sample_step(np.array([1]), gen.init_state(1))
        probs = np.exp(logits[0] - logits[0].max())
        probs /= probs.sum()
        n = 100_000
        rng = np.random.default_rng(123)
        tokens, _, _ = gen.sample_batch(n, 1, 1.0, rng, bos_id=1)
        counts = np.bincount(tokens[:, 0], minlength=5) / n
        tv = 0.5 * np.abs(counts - probs).sum()
        assert tv < 0.01

    def test_invalid_temperature_rejected(self):
        gen = tiny_generator()
        with pytest.raises(ConfigError):
            gen.sample([0], 5, 0.0, np.random.default_rng(0))

    def test_lengths_match_caps(self):
        gen = tiny_generator(vocab_size=6)
        caps = np.array([2, 5, 3])
        tokens, lengths, logps = gen.sample_batch(
            3, caps, 1.0, np.random.default_rng(8), bos_id=0, eos_id=None)
        assert np.array_equal(lengths, caps)
        assert tokens.shape[1] == 5
        assert logps.shape == tokens.shape


class TestConfig:
    def test_transformer_xl_not_implemented(self):
        cfg = tiny_config(encoder_type="transformer_xl")
        with pytest.raises(ConfigError):
            GeneratorModel(cfg, np.random.default_rng(0))

    def test_bad_dropout_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(dropout_input=1.0).validate()
