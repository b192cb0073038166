#!/usr/bin/env python3
"""
Tests for ngram_lm module.

Run with: pytest tests/test_ngram_lm.py -v
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from errors import DataError
from ngram_lm import BOS, EOS, UNK, TrigramLM, perplexity, train_trigram, vocab


@pytest.fixture
def toy_lm(toy_sentences):
    return train_trigram(toy_sentences)


class TestWittenBell:
    """Hand-derived probabilities on the 'a b' / 'a c' corpus (|V| = 5)."""

    def test_vocabulary(self, toy_lm):
        assert vocab(toy_lm) == {"a", "b", "c", EOS, UNK}
        assert BOS not in toy_lm.vocab

    def test_unigram(self, toy_lm):
        # c(a)=2, c(b)=1, c(</s>)=2 over 6 events, T=4, uniform base 1/5
        assert toy_lm.prob("a") == pytest.approx(0.28)
        assert toy_lm.prob("b") == pytest.approx(0.18)
        assert toy_lm.prob(EOS) == pytest.approx(0.28)

    def test_bigram(self, toy_lm):
        assert toy_lm.prob("b", ["a"]) == pytest.approx(0.34)
        assert toy_lm.prob("a", [BOS]) == pytest.approx(0.76)
        assert toy_lm.prob(EOS, ["b"]) == pytest.approx(0.64)

    def test_trigram(self, toy_lm):
        assert toy_lm.prob("a", [BOS, BOS]) == pytest.approx(0.92)
        assert toy_lm.prob("b", [BOS, "a"]) == pytest.approx(0.42)
        assert toy_lm.prob(EOS, ["a", "b"]) == pytest.approx(0.82)

    def test_unseen_word_has_mass(self, toy_lm):
        for context in ([], ["a"], [BOS, "a"], ["zz", "yy"]):
            assert toy_lm.prob("unseen", context) > 0

    @pytest.mark.parametrize("context", [[], [BOS], ["a"], [BOS, BOS], [BOS, "a"], ["a", "b"], ["q", "r"]])
    def test_distribution_sums_to_one(self, toy_lm, context):
        total = sum(toy_lm.prob(w, context) for w in toy_lm.vocab)
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_continuation_types(self, toy_lm):
        assert toy_lm.continuation_types(()) == 4
        assert toy_lm.continuation_types(("a",)) == 2
        assert toy_lm.count(("a",), "b") == 1


class TestPerplexity:
    """Tests for perplexity function."""

    def test_hand_computed(self, toy_lm):
        expected = (0.92 * 0.42 * 0.82) ** (-1 / 3)
        assert perplexity(toy_lm, ["a", "b"]) == pytest.approx(expected)

    def test_own_training_sentence(self):
        lm = train_trigram([["ka", "nga", "def"]])
        ppl = perplexity(lm, ["ka", "nga", "def"])
        assert ppl is not None
        assert 1.0 <= ppl < float("inf")

    def test_uniform_model(self):
        lm = TrigramLM.uniform(["x", "y", "z"])
        # 3 types plus </s> and <unk>
        assert len(lm.vocab) == 5
        assert perplexity(lm, ["x", "z", "y", "x"]) == pytest.approx(5.0)

    def test_oov_tokens_skipped(self, toy_lm):
        with_oov = toy_lm.score(["a", "zzz", "b"])
        assert with_oov.n_oov == 1
        assert with_oov.n_events == 3
        assert with_oov.n_word_events == 2

    def test_all_oov_is_undefined(self, toy_lm):
        assert perplexity(toy_lm, ["qq", "rr"]) is None

    def test_empty_tokens_raise(self, toy_lm):
        with pytest.raises(DataError):
            perplexity(toy_lm, [])


class TestTraining:
    """Tests for train_trigram and serialization."""

    def test_vocab_size_is_types_plus_two(self):
        sentences = [["ka", "nga"], ["def", "ka", "ghi"], ["nga"]]
        lm = train_trigram(sentences)
        assert len(lm.vocab) == len({t for s in sentences for t in s}) + 2

    def test_vocab_is_stable(self, toy_lm):
        assert vocab(toy_lm) == vocab(toy_lm)

    def test_empty_stream_raises(self):
        with pytest.raises(DataError):
            train_trigram([[], []])

    def test_save_load_preserves_probabilities(self, toy_lm, tmp_path):
        path = tmp_path / "lm" / "counts.tsv"
        toy_lm.save(path)
        loaded = TrigramLM.load(path)
        assert loaded.vocab == toy_lm.vocab
        for context in ([], ["a"], [BOS, "a"]):
            for word in toy_lm.vocab:
                assert loaded.prob(word, context) == pytest.approx(toy_lm.prob(word, context))

    def test_retraining_is_byte_identical(self, toy_sentences, tmp_path):
        first, second = tmp_path / "a.tsv", tmp_path / "b.tsv"
        train_trigram(toy_sentences).save(first)
        train_trigram(list(reversed(toy_sentences))).save(second)
        assert first.read_bytes() == second.read_bytes()

    def test_malformed_count_file(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("1\ta\n")
        with pytest.raises(DataError):
            TrigramLM.load(path)


@pytest.fixture(scope="module")
def zipf_lm():
    """Trigram LM on 10k sentences drawn from a Zipf-like 800-word vocabulary."""
    rng = np.random.default_rng(0)
    words = np.array([f"w{i}" for i in range(800)])
    weights = 1.0 / np.arange(1, 801) ** 1.1
    weights /= weights.sum()
    sentences = [
        [str(w) for w in rng.choice(words, size=int(rng.integers(3, 13)), p=weights)]
        for _ in range(10_000)
    ]
    return train_trigram(sentences)


class TestInvariants:
    """Normalization, smoothing and order sensitivity on larger models."""

    @pytest.mark.slow
    def test_sampled_contexts_normalize(self, zipf_lm):
        contexts = zipf_lm.contexts
        rng = np.random.default_rng(1)
        for k in rng.choice(len(contexts), size=100, replace=False):
            context = contexts[k]
            total = sum(zipf_lm.prob(w, context) for w in zipf_lm.vocab)
            assert abs(total - 1.0) <= 1e-9, context

    @pytest.mark.slow
    def test_seen_trigram_beats_backoff_share(self, zipf_lm):
        trigram_contexts = [c for c in zipf_lm.contexts if len(c) == 2]
        rng = np.random.default_rng(2)
        for k in rng.choice(len(trigram_contexts), size=200, replace=False):
            context = trigram_contexts[k]
            types = zipf_lm.continuation_types(context)
            total = sum(zipf_lm.count(context, w) for w in zipf_lm.vocab)
            for word in zipf_lm.vocab:
                if zipf_lm.count(context, word) == 0:
                    continue
                backoff_share = types * zipf_lm.prob(word, context[1:]) / (total + types)
                assert zipf_lm.prob(word, context) > backoff_share

    def test_perplexity_depends_on_order(self):
        lm = train_trigram([["the", "cat", "sat"]] * 5 + [["a", "dog", "ran"]])
        forward = perplexity(lm, ["the", "cat", "sat"])
        backward = perplexity(lm, ["sat", "cat", "the"])
        assert forward < backward



if __name__ == "__main__":
    pytest.main([__file__, "-v"])
