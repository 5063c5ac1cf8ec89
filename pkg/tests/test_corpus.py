"""Tokenizer, vocabulary, split, and BPTT batching contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from versegan import corpus
from versegan.corpus import (BpttBatch, Vocabulary, build_vocab,
                             load_documents, make_bptt_batches, split_corpus,
                             stream_ids, tokenize)
from versegan.errors import CorpusError

# reference hand-tokenization of a small fixture
FIXTURE = "The cat sat.\nA dog, it ran!\n\nShe said don't."
FIXTURE_TOKENS = [
    "<maj>", "the", "cat", "sat", ".", "<nl>",
    "<maj>", "a", "dog", ",", "it", "ran", "!", "<nl>", "<nl>",
    "<maj>", "she", "said", "don't", ".",
]


class TestTokenize:
    def test_uppercase_marker_and_punctuation(self):
        assert tokenize("The cat.") == ["<maj>", "the", "cat", "."]

    def test_empty(self):
        assert tokenize("") == []

    def test_repeats(self):
        assert tokenize("a a a") == ["a", "a", "a"]

    def test_fixture_matches_hand_tokenization(self):
        assert tokenize(FIXTURE) == FIXTURE_TOKENS

    def test_deterministic(self):
        assert tokenize(FIXTURE) == tokenize(FIXTURE)

    def test_invalid_utf8_reports_byte_offset(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_bytes(b"fine until \xff\xfe here")
        with pytest.raises(CorpusError) as err:
            load_documents(path)
        assert "byte offset 11" in str(err.value)

    @settings(max_examples=50, deadline=None)
    @given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=600),
                   max_size=80))
    def test_tokens_never_contain_whitespace(self, text):
        for tok in tokenize(text):
            assert tok == "<nl>" or not any(ch.isspace() for ch in tok)


class TestVocabulary:
    def test_min_freq_filters(self):
        vocab = build_vocab(["a"] * 3 + ["b"], min_freq=2)
        assert "a" in vocab.token_to_id
        assert "b" not in vocab.token_to_id

    def test_max_size_keeps_most_frequent(self):
        vocab = build_vocab(["a", "a", "b"], min_freq=1,
                            max_size=len(corpus.SPECIALS) + 1)
        assert "a" in vocab.token_to_id
        assert "b" not in vocab.token_to_id

    def test_specials_occupy_lowest_ids(self):
        vocab = build_vocab(["x", "x"], min_freq=1)
        assert vocab.unk_id == 0 and vocab.pad_id == 1
        assert vocab.bos_id == 2 and vocab.eos_id == 3
        assert vocab.token_to_id["x"] == 4

    def test_two_builds_identical(self):
        stream = ["b", "a", "a", "c", "b", "a"]
        v1, v2 = build_vocab(stream, 1), build_vocab(stream, 1)
        assert v1.id_to_token == v2.id_to_token

    def test_frequency_then_first_occurrence_order(self):
        vocab = build_vocab(["z", "y", "y", "z", "w"], min_freq=1)
        # z and y tie on frequency; z appeared first
        assert vocab.token_to_id["z"] < vocab.token_to_id["y"]
        assert vocab.token_to_id["y"] < vocab.token_to_id["w"]

    def test_encode_decode_identity_in_vocab(self):
        vocab = build_vocab(FIXTURE_TOKENS, min_freq=1)
        ids = vocab.encode(FIXTURE_TOKENS)
        assert vocab.decode(ids) == FIXTURE_TOKENS
        assert vocab.encode(vocab.decode(ids)) == ids

    def test_oov_round_trips_to_unk(self):
        vocab = build_vocab(["a", "a"], min_freq=2)
        ids = vocab.encode(["a", "never-seen"])
        assert ids[1] == vocab.unk_id
        assert vocab.decode(ids) == ["a", "<unk>"]

    def test_save_load_round_trip(self, tmp_path):
        vocab = build_vocab(FIXTURE_TOKENS, min_freq=1)
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.id_to_token == vocab.id_to_token
        assert loaded.to_bytes() == vocab.to_bytes()

    def test_header_carries_version_and_specials(self, tmp_path):
        vocab = build_vocab(["a", "a"], min_freq=1)
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        header = path.read_text().splitlines()[0]
        assert header == "versegan-vocab 1 unk=0 pad=1 bos=2 eos=3"

    def test_bad_version_rejected(self):
        raw = b"versegan-vocab 99 unk=0 pad=1 bos=2 eos=3\n<unk>\t0\n"
        with pytest.raises(CorpusError):
            Vocabulary.from_bytes(raw)

    def test_decode_out_of_range(self):
        vocab = build_vocab(["a", "a"], min_freq=1)
        with pytest.raises(CorpusError):
            vocab.decode([99])


class TestSplit:
    def test_hundred_docs_is_80_10_10(self):
        docs = [[i] for i in range(100)]
        split = split_corpus(docs, seed=0)
        assert (len(split.train), len(split.valid), len(split.test)) == (80, 10, 10)

    def test_ten_docs_is_8_1_1(self):
        split = split_corpus([[i] for i in range(10)], seed=0)
        assert (len(split.train), len(split.valid), len(split.test)) == (8, 1, 1)

    def test_fewer_than_ten_rejected(self):
        with pytest.raises(CorpusError):
            split_corpus([[i] for i in range(9)], seed=0)

    def test_same_seed_identical(self):
        docs = [[i] for i in range(57)]
        a, b = split_corpus(docs, seed=9), split_corpus(docs, seed=9)
        assert a.train == b.train and a.valid == b.valid and a.test == b.test

    def test_disjoint_and_exhaustive(self):
        docs = [[i] for i in range(43)]
        split = split_corpus(docs, seed=3)
        seen = [d[0] for part in (split.train, split.valid, split.test)
                for d in part]
        assert sorted(seen) == list(range(43))


class TestBptt:
    def test_141_tokens_two_windows_of_70(self):
        batches = make_bptt_batches(np.arange(141), batch_size=1, bptt_len=70)
        assert [b.inputs.shape for b in batches] == [(1, 70), (1, 70)]
        assert np.array_equal(batches[0].inputs[0], np.arange(70))
        assert np.array_equal(batches[0].targets[0], np.arange(1, 71))

    def test_targets_shift_inputs_by_one(self):
        for batch in make_bptt_batches(np.arange(200), 2, 7):
            assert np.array_equal(batch.targets[:, :-1], batch.inputs[:, 1:])

    def test_batch_two_splits_stream_into_halves(self):
        batches = make_bptt_batches(np.arange(100), batch_size=2, bptt_len=10)
        assert batches[0].inputs[0, 0] == 0
        assert batches[0].inputs[1, 0] == 50

    def test_row_concat_reproduces_stream_prefix(self):
        ids = np.arange(157)
        batch_size, bptt = 3, 9
        batches = make_bptt_batches(ids, batch_size, bptt)
        cols = len(ids) // batch_size
        for row in range(batch_size):
            rebuilt = np.concatenate([b.inputs[row] for b in batches])
            expected = ids[row * cols:(row + 1) * cols][:len(rebuilt)]
            assert np.array_equal(rebuilt, expected)

    def test_final_partial_window_kept_if_two_long(self):
        # 1 row, 14 usable positions: windows 5, 5, then a 4-wide remainder
        batches = make_bptt_batches(np.arange(15), 1, 5)
        assert [b.inputs.shape[1] for b in batches] == [5, 5, 4]

    def test_final_one_wide_window_dropped(self):
        batches = make_bptt_batches(np.arange(12), 1, 5)
        assert [b.inputs.shape[1] for b in batches] == [5, 5]

    def test_too_short_stream_rejected(self):
        with pytest.raises(CorpusError):
            make_bptt_batches(np.arange(20), batch_size=2, bptt_len=10)


def test_stream_ids_brackets_documents():
    vocab = build_vocab(["a", "b", "a", "b"], min_freq=1)
    docs = [vocab.encode(["a"]), vocab.encode(["b", "a"])]
    ids = stream_ids(docs, vocab)
    a, b = vocab.token_to_id["a"], vocab.token_to_id["b"]
    assert ids.tolist() == [vocab.bos_id, a, vocab.eos_id,
                            vocab.bos_id, b, a, vocab.eos_id]


def test_documents_split_on_blank_lines(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("one two\n\nthree\nfour\n\n\nfive\n")
    docs = load_documents(path)
    assert len(docs) == 3
    assert docs[0] == ["one", "two"]
    assert docs[1] == ["three", "<nl>", "four"]


def test_write_then_load_round_trips_tokens(tmp_path):
    docs = [["<maj>", "the", "cat", ".", "<nl>", "it", "sat"],
            ["don't", "stop", "!"]]
    path = tmp_path / "out.txt"
    corpus.write_documents(docs, path)
    assert load_documents(path) == docs
