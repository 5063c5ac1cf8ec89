"""Bundled desk-scale corpora, generated deterministically from a seed.

The real poetry/metaphor/lyrics datasets are not redistributable, so tests,
demos and smoke runs use these instead: a templated "verse" grammar with a
Zipf-flavored word choice (structured enough for a small LSTM to model), and
a repeating pattern corpus for memorization checks.
"""

from __future__ import annotations

import numpy as np

_DETERMINERS = ["the", "a"]
_ADJECTIVES = ["silver", "quiet", "burning", "hollow", "ancient", "pale",
               "bitter", "golden", "restless", "small"]
_NOUNS = ["river", "moon", "garden", "sparrow", "mountain", "shadow", "sea",
          "window", "stone", "fire", "road", "winter"]
_VERBS = ["sleeps", "wanders", "remembers", "burns", "falls", "sings",
          "waits", "turns", "breaks", "dreams"]
_ADVERBS = ["slowly", "alone", "again", "forever", "softly"]

_LINE_TEMPLATES = [
    ("D", "A", "N", "V"),
    ("D", "N", "V", "ADV"),
    ("D", "A", "N", "V", "ADV"),
    ("N", "and", "N", "V"),
    ("D", "N", "V", "like", "D", "N"),
    ("ADV", ",", "D", "N", "V"),
]

_POOLS = {"D": _DETERMINERS, "A": _ADJECTIVES, "N": _NOUNS, "V": _VERBS,
          "ADV": _ADVERBS}


def _zipf_pick(pool: list[str], rng: np.random.Generator) -> str:
    weights = 1.0 / np.arange(1, len(pool) + 1)
    weights /= weights.sum()
    return pool[rng.choice(len(pool), p=weights)]


def _line(rng: np.random.Generator) -> str:
    template = _LINE_TEMPLATES[rng.integers(len(_LINE_TEMPLATES))]
    words = [_zipf_pick(_POOLS[slot], rng) if slot in _POOLS else slot
             for slot in template]
    text = " ".join(words).replace(" ,", ",")
    return text + (" ." if rng.random() < 0.8 else "")


def grammar_corpus(n_tokens: int = 50_000, seed: int = 0) -> list[str]:
    """Short multi-line 'verses' totalling roughly n_tokens tokenizer tokens."""
    rng = np.random.default_rng(seed)
    docs: list[str] = []
    budget = 0
    while budget < n_tokens:
        lines = [_line(rng) for _ in range(int(rng.integers(2, 5)))]
        doc = "\n".join(lines)
        docs.append(doc)
        # words + punctuation + newline tokens, close enough for budgeting
        budget += sum(len(line.split()) for line in lines) + len(lines) - 1
    return docs


def repeat_corpus(pattern: str = "a b c", n_tokens: int = 1000,
                  doc_len: int = 60) -> list[str]:
    """A deterministic repeating stream, chopped into documents.

    An order-1 lookup table predicts it perfectly, so a trained LM should
    approach perplexity 1 on it.
    """
    words = pattern.split()
    stream = [words[i % len(words)] for i in range(n_tokens)]
    docs = []
    for start in range(0, len(stream), doc_len):
        chunk = stream[start:start + doc_len]
        if chunk:
            docs.append(" ".join(chunk))
    return docs
