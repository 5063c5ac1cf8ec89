"""Plain-text ingestion: tokenizer, vocabulary, splits, truncated-BPTT batches.

Ingest files are UTF-8 with a blank line between documents. Tokenization is
word-level and line-aware: text is lowercased with a `<maj>` marker emitted
before any word that carried uppercase, punctuation is split into its own
tokens, and newlines survive as `<nl>` tokens (line structure matters for
poems and lyrics).
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorpusError

UNK, PAD, BOS, EOS = "<unk>", "<pad>", "<bos>", "<eos>"
SPECIALS = (UNK, PAD, BOS, EOS)
MAJ = "<maj>"  # uppercase marker, an ordinary (non-special) token
NEWLINE = "<nl>"

VOCAB_FORMAT_VERSION = 1

_TOKEN_RE = re.compile(r"\n|[A-Za-z]+(?:'[A-Za-z]+)*|[0-9]+|[^\sA-Za-z0-9]")


def tokenize(text: str) -> list[str]:
    """Deterministic word-level token stream for one piece of text."""
    if not isinstance(text, str):
        raise CorpusError("tokenize expects a str; decode bytes first")
    tokens: list[str] = []
    for piece in _TOKEN_RE.findall(text.replace("\r\n", "\n")):
        if piece == "\n":
            tokens.append(NEWLINE)
        elif any(ch.isupper() for ch in piece):
            tokens.append(MAJ)
            tokens.append(piece.lower())
        else:
            tokens.append(piece)
    return tokens


def render_tokens(tokens: list[str]) -> str:
    """Best-effort inverse of `tokenize` for human-readable samples."""
    out: list[str] = []
    capitalize_next = False
    for tok in tokens:
        if tok == MAJ:
            capitalize_next = True
            continue
        if tok == NEWLINE:
            out.append("\n")
            continue
        word = tok.capitalize() if capitalize_next else tok
        capitalize_next = False
        if out and out[-1] != "\n" and (word.isalnum() or word.startswith("'")):
            out.append(" ")
        out.append(word)
    return "".join(out)


def decode_utf8(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(
            f"invalid UTF-8 at byte offset {exc.start}: {exc.reason}") from None


class Vocabulary:
    """Bijection between token strings and dense ids; specials sit lowest."""

    def __init__(self, tokens_in_order: list[str]):
        self.id_to_token = list(SPECIALS) + [t for t in tokens_in_order
                                             if t not in SPECIALS]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    def encode(self, tokens: list[str]) -> list[int]:
        unk = self.unk_id
        return [self.token_to_id.get(t, unk) for t in tokens]

    def decode(self, ids) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.id_to_token):
                raise CorpusError(f"token id {i} out of range (vocab {len(self)})")
            out.append(self.id_to_token[i])
        return out

    def save(self, path) -> None:
        lines = [f"versegan-vocab {VOCAB_FORMAT_VERSION} "
                 f"unk={self.unk_id} pad={self.pad_id} "
                 f"bos={self.bos_id} eos={self.eos_id}"]
        lines += [f"{tok}\t{i}" for i, tok in enumerate(self.id_to_token)]
        Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_bytes(Path(path).read_bytes())

    def to_bytes(self) -> bytes:
        header = (f"versegan-vocab {VOCAB_FORMAT_VERSION} "
                  f"unk={self.unk_id} pad={self.pad_id} "
                  f"bos={self.bos_id} eos={self.eos_id}")
        body = "\n".join(f"{tok}\t{i}" for i, tok in enumerate(self.id_to_token))
        return (header + "\n" + body + "\n").encode("utf-8")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Vocabulary":
        text = decode_utf8(raw)
        lines = text.splitlines()
        if not lines or not lines[0].startswith("versegan-vocab "):
            raise CorpusError("not a vocabulary file (missing header)")
        fields = lines[0].split()
        if int(fields[1]) != VOCAB_FORMAT_VERSION:
            raise CorpusError(f"unsupported vocabulary format version {fields[1]}")
        entries: list[tuple[str, int]] = []
        for line in lines[1:]:
            if not line:
                continue
            tok, _, idx = line.partition("\t")
            entries.append((tok, int(idx)))
        entries.sort(key=lambda e: e[1])
        if [i for _, i in entries] != list(range(len(entries))):
            raise CorpusError("vocabulary ids are not dense from 0")
        ordered = [tok for tok, _ in entries]
        if ordered[:len(SPECIALS)] != list(SPECIALS):
            raise CorpusError("vocabulary specials are missing or reordered")
        return cls(ordered[len(SPECIALS):])


def build_vocab(tokens, min_freq: int = 2, max_size: int = 30000) -> Vocabulary:
    """Frequency-ordered vocabulary; ties break by first occurrence.

    Tokens below `min_freq` or past `max_size` (which counts the specials)
    fall back to `<unk>` at encode time.
    """
    if min_freq < 1:
        raise CorpusError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    for i, tok in enumerate(tokens):
        counts[tok] += 1
        if tok not in first_seen:
            first_seen[tok] = i
    candidates = [t for t in counts if t not in SPECIALS and counts[t] >= min_freq]
    candidates.sort(key=lambda t: (-counts[t], first_seen[t]))
    room = max(max_size - len(SPECIALS), 0)
    return Vocabulary(candidates[:room])


@dataclass
class SplitCorpus:
    """Document-level 80/10/10 partition of a corpus."""

    train: list[list[int]]
    valid: list[list[int]]
    test: list[list[int]]
    split_seed: int


def split_corpus(docs: list[list[int]], seed: int) -> SplitCorpus:
    """Shuffle documents with a seeded RNG, then carve off 10% test, 10% valid."""
    n = len(docs)
    if n < 10:
        raise CorpusError(f"need at least 10 documents to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_test = n // 10
    n_valid = n // 10
    test = [docs[i] for i in order[:n_test]]
    valid = [docs[i] for i in order[n_test:n_test + n_valid]]
    train = [docs[i] for i in order[n_test + n_valid:]]
    return SplitCorpus(train=train, valid=valid, test=test, split_seed=seed)


@dataclass
class BpttBatch:
    """One training window; targets are inputs shifted one step forward."""

    inputs: np.ndarray   # int matrix [batch_size, window]
    targets: np.ndarray  # same shape


def make_bptt_batches(ids, batch_size: int, bptt_len: int) -> list[BpttBatch]:
    """Reshape a token stream into batch_size parallel streams and window it.

    Consecutive windows stay contiguous per row so recurrent state can carry
    over. A final partial window survives if it is at least 2 steps long.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if batch_size < 1 or bptt_len < 1:
        raise CorpusError("batch_size and bptt_len must be positive")
    if len(ids) <= batch_size * (bptt_len + 1):
        raise CorpusError(
            f"stream of {len(ids)} tokens is too short for "
            f"batch_size={batch_size}, bptt_len={bptt_len}")
    cols = len(ids) // batch_size
    grid = ids[:batch_size * cols].reshape(batch_size, cols)
    batches = []
    for start in range(0, cols - 1, bptt_len):
        width = min(bptt_len, cols - 1 - start)
        if width < bptt_len and width < 2:
            break
        batches.append(BpttBatch(inputs=grid[:, start:start + width].copy(),
                                 targets=grid[:, start + 1:start + 1 + width].copy()))
    return batches


def stream_ids(docs: list[list[int]], vocab: Vocabulary) -> np.ndarray:
    """Concatenate documents as <bos> tokens... <eos> for LM training/eval."""
    parts = []
    for doc in docs:
        parts.append([vocab.bos_id])
        parts.append(list(doc))
        parts.append([vocab.eos_id])
    if not parts:
        raise CorpusError("no documents to stream")
    return np.concatenate([np.asarray(p, dtype=np.int64) for p in parts])


def load_documents(path) -> list[list[str]]:
    """Read one ingest file into tokenized documents (blank-line separated)."""
    text = decode_utf8(Path(path).read_bytes())
    docs = []
    for block in re.split(r"\n\s*\n", text):
        # boundary newlines are file formatting, not document content
        toks = tokenize(block.strip("\n"))
        if toks:
            docs.append(toks)
    return docs


def write_documents(docs: list[list[str]], path) -> None:
    """Inverse of `load_documents`: blank-line separated rendered documents."""
    blocks = [render_tokens(doc).strip("\n") for doc in docs]
    Path(path).write_bytes(("\n\n".join(blocks) + "\n").encode("utf-8"))
