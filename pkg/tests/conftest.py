import numpy as np
import pytest

from versegan.generator import GeneratorConfig, GeneratorModel


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def tiny_config(vocab_size=7, **overrides):
    """Small sizes keep finite-difference suites fast."""
    defaults = dict(vocab_size=vocab_size, embedding_size=6, hidden_size=8,
                    num_layers=2, bptt_len=4, dropout_embedding=0.0,
                    dropout_input=0.0, dropout_hidden=0.0, dropout_output=0.0,
                    weight_drop=0.0)
    defaults.update(overrides)
    return GeneratorConfig(**defaults)


def tiny_generator(seed=1, **overrides) -> GeneratorModel:
    return GeneratorModel(tiny_config(**overrides), np.random.default_rng(seed))


def uniform_generator(vocab_size=10, seed=0) -> GeneratorModel:
    """All-zero weights emit exactly uniform logits at every step."""
    gen = tiny_generator(seed=seed, vocab_size=vocab_size)
    for _, t in gen.parameters():
        t.data[...] = 0.0
    return gen
