#!/usr/bin/env python3
"""
Tests for splitters module.

Run with: pytest tests/test_splitters.py -v
"""

import itertools
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from errors import DataError, SplitError
from simkit import SimConfig, generate_corpus
from splitters import (
    ADVERSARIAL_BAND,
    Split,
    TokenDistribution,
    child_seed,
    load_split,
    overlap_ratio,
    save_split,
    split_adversarial,
    split_heuristic,
    split_held_out_group,
    split_random,
    token_distribution,
    token_tv_distance,
    validate_split,
)


def _split(name, train, test, excluded=()):
    return Split(
        name=name, strategy="random", method="random", params={}, seed=0,
        train_ids=tuple(train), test_ids=tuple(test), excluded=tuple(excluded),
    )


class TestChildSeed:
    """Tests for per-split seed derivation."""

    def test_stable(self):
        assert child_seed(1234, "random", 3) == child_seed(1234, "random", 3)

    def test_streams_differ(self):
        seeds = {child_seed(1234, "random", i) for i in range(20)}
        seeds.add(child_seed(1234, "adversarial", 0))
        seeds.add(child_seed(4321, "random", 0))
        assert len(seeds) == 22


class TestHeldOutGroup:
    """Tests for split_held_out_group function."""

    def test_one_split_per_speaker(self, build_corpus):
        corpus = build_corpus([(f"u{i:02d}", "a b", 1.0, f"spk{i:02d}") for i in range(27)])
        splits = split_held_out_group(corpus, "speaker")
        assert len(splits) == 27
        assert all(s.method == "held_out_group" for s in splits)

    def test_two_groups_are_complementary(self, build_corpus):
        corpus = build_corpus([("u1", "a", 1.0, "x"), ("u2", "b", 2.0, "y"), ("u3", "c", 1.0, "x")])
        first, second = split_held_out_group(corpus, "speaker")
        assert set(first.test_ids) == set(second.train_ids)
        assert set(first.test_ids) | set(second.test_ids) == set(corpus.ids)
        assert first.test_fraction == pytest.approx(0.5)

    def test_each_utterance_tested_once(self, build_corpus):
        rng = np.random.default_rng(0)
        specs = [(f"u{i}", "w", float(rng.uniform(1, 3)), None, f"sess{i % 5}") for i in range(23)]
        corpus = build_corpus(specs)
        splits = split_held_out_group(corpus, "session")
        assert len(splits) == 5
        tested = [utt_id for s in splits for utt_id in s.test_ids]
        assert sorted(tested) == sorted(corpus.ids)
        for split in splits:
            assert validate_split(split, corpus) == []

    def test_single_group_rejected(self, build_corpus):
        corpus = build_corpus([("u1", "a", 1.0, "x"), ("u2", "b", 1.0, "x")])
        with pytest.raises(SplitError, match="at least 2"):
            split_held_out_group(corpus, "speaker")

    def test_missing_key_rejected(self, build_corpus):
        corpus = build_corpus([("u1", "a", 1.0, "x"), ("u2", "b", 1.0)])
        with pytest.raises(DataError):
            split_held_out_group(corpus, "speaker")


class TestRandom:
    """Tests for split_random function."""

    def test_deterministic(self, small_corpus):
        first = [s.to_dict() for s in split_random(small_corpus, 5, seed=9)]
        second = [s.to_dict() for s in split_random(small_corpus, 5, seed=9)]
        assert first == second

    def test_adding_splits_keeps_earlier_ones(self, small_corpus):
        three = split_random(small_corpus, 3, seed=9)
        five = split_random(small_corpus, 5, seed=9)
        assert [s.test_ids for s in three] == [s.test_ids for s in five[:3]]

    def test_equal_durations(self, build_corpus):
        corpus = build_corpus([(f"u{i:03d}", "a", 1.0) for i in range(100)])
        for split in split_random(corpus, 10, seed=1):
            assert 20 <= len(split.test_ids) <= 25
            assert validate_split(split, corpus) == []

    @pytest.mark.slow
    def test_mean_fraction_over_many_splits(self):
        corpus = generate_corpus(SimConfig(seed=5)).corpus
        fractions = [s.test_fraction for s in split_random(corpus, 50, seed=3)]
        assert np.mean(fractions) == pytest.approx(0.20, abs=0.015)

    def test_oversized_utterance_warns(self, build_corpus):
        corpus = build_corpus([("big", "a", 50.0)] + [(f"u{i}", "b", 1.0) for i in range(50)])
        warned = [s for s in split_random(corpus, 20, seed=2) if "big" in s.test_ids]
        assert warned
        assert all(any("big" in w for w in s.warnings) for s in warned)

    def test_single_utterance_rejected(self, build_corpus):
        with pytest.raises(SplitError):
            split_random(build_corpus([("u1", "a", 1.0)]), 1, seed=0)


class TestHeuristic:
    """Tests for split_heuristic function."""

    def test_hand_accumulation(self, build_corpus):
        corpus = build_corpus([(f"d{d}", "a", float(d)) for d in (5, 4, 3, 2, 1)])
        values = {utt.id: utt.duration_s for utt in corpus.utterances}
        split = split_heuristic(corpus, "duration", values)
        assert split.test_ids == ("d5",)
        assert split.threshold == 5.0
        assert split.test_fraction == pytest.approx(5 / 15)
        assert split.name == "heuristic_duration"
        # 0.33 is outside the validity band: recorded, not fatal
        assert any("outside" in w for w in split.warnings)

    def test_whole_corpus_in_test_rejected(self, build_corpus):
        corpus = build_corpus([(f"d{d}", "a", float(d)) for d in (5, 4, 3, 2, 1)])
        values = {utt.id: utt.duration_s for utt in corpus.utterances}
        with pytest.raises(SplitError, match="every utterance"):
            split_heuristic(corpus, "duration", values, target_fraction=1.0)

    def test_ties_go_to_test(self, build_corpus):
        corpus = build_corpus([(f"u{i}", "a", 1.0) for i in range(5)])
        values = {"u0": 3.0, "u1": 3.0, "u2": 2.0, "u3": 1.0, "u4": 1.0}
        split = split_heuristic(corpus, "pitch", values)
        assert set(split.test_ids) == {"u0", "u1"}
        assert split.threshold == 3.0

    def test_missing_values_excluded(self, build_corpus):
        corpus = build_corpus([(f"u{i}", "a", 1.0) for i in range(6)])
        values = {"u0": None, "u1": 5.0, "u2": 4.0, "u3": 3.0, "u4": 2.0, "u5": 1.0}
        split = split_heuristic(corpus, "pitch", values)
        assert split.excluded == ("u0",)
        assert split.params["n_excluded"] == 1
        assert split.test_ids == ("u1",)
        assert split.test_fraction == pytest.approx(0.2)
        assert validate_split(split, corpus, band=(0.17, 0.25)) == []

    def test_constant_feature_rejected(self, build_corpus):
        corpus = build_corpus([(f"u{i}", "a", 1.0) for i in range(4)])
        with pytest.raises(SplitError, match="constant"):
            split_heuristic(corpus, "n_tokens", {f"u{i}": 1 for i in range(4)})

    def test_threshold_rule(self, small_corpus):
        """Test side is exactly the utterances at or above the threshold."""
        values = {utt.id: float(len(utt.transcript)) for utt in small_corpus.utterances}
        split = split_heuristic(small_corpus, "n_tokens", values)
        for utt_id in small_corpus.ids:
            assert (utt_id in split.test_ids) == (values[utt_id] >= split.threshold)


class TestTokenDistance:
    """Tests for token_tv_distance function."""

    def test_identity(self):
        p = TokenDistribution({"a": 0.5, "b": 0.5})
        assert token_tv_distance(p, p) == 0.0

    def test_disjoint_supports(self):
        assert token_tv_distance(TokenDistribution({"a": 1.0}), TokenDistribution({"b": 1.0})) == 1.0

    def test_hand_value(self):
        p = TokenDistribution({"a": 0.8, "b": 0.2})
        q = TokenDistribution({"a": 0.5, "b": 0.5})
        assert token_tv_distance(p, q) == pytest.approx(0.3)

    def test_distribution_must_sum_to_one(self):
        with pytest.raises(SplitError):
            TokenDistribution({"a": 0.5})

    def test_from_corpus(self, small_corpus):
        dist = token_distribution(small_corpus, ["u01", "u02"])
        assert dist.probs["ka"] == pytest.approx(3 / 6)


def _planted_corpus(build_corpus):
    """Eight vocab-A and two vocab-B utterances of one second each."""
    specs = [(f"a{i}", "a a", 1.0) for i in range(8)] + [(f"b{i}", "b b", 1.0) for i in range(2)]
    return build_corpus(specs)


def _brute_force_optimum(corpus, band=ADVERSARIAL_BAND) -> float | None:
    ids = list(corpus.ids)
    total = corpus.total_duration
    best = None
    for size in range(1, len(ids)):
        for test in itertools.combinations(ids, size):
            fraction = math.fsum(corpus.by_id[i].duration_s for i in test) / total
            if not band[0] <= fraction <= band[1]:
                continue
            train = [i for i in ids if i not in test]
            value = token_tv_distance(token_distribution(corpus, train), token_distribution(corpus, test))
            best = value if best is None else max(best, value)
    return best


class TestAdversarial:
    """Tests for split_adversarial function."""

    def test_planted_separation_found(self, build_corpus):
        corpus = _planted_corpus(build_corpus)
        splits = split_adversarial(corpus, n_splits=5, seed=3, max_stall=200)
        assert len(splits) == 5
        for split in splits:
            assert split.achieved_distance == pytest.approx(1.0)
            assert set(split.test_ids) == {"b0", "b1"}
            assert split.test_fraction == pytest.approx(0.2)

    def test_history_strictly_increasing(self, build_corpus):
        corpus = _planted_corpus(build_corpus)
        for split in split_adversarial(corpus, n_splits=5, seed=8, max_stall=200):
            history = list(split.history)
            assert all(b > a for a, b in zip(history, history[1:]))
            assert split.achieved_distance >= split.params["initial_distance"]

    def test_achieved_matches_final_partition(self):
        corpus = generate_corpus(SimConfig(n_speakers=4, utterances_per_speaker=10, seed=2)).corpus
        for split in split_adversarial(corpus, n_splits=2, seed=1, max_stall=600):
            value = token_tv_distance(
                token_distribution(corpus, split.train_ids),
                token_distribution(corpus, split.test_ids),
            )
            assert value == pytest.approx(split.achieved_distance, abs=1e-9)
            assert ADVERSARIAL_BAND[0] - 1e-9 <= split.test_fraction <= ADVERSARIAL_BAND[1] + 1e-9
            assert validate_split(split, corpus) == []

    def test_deterministic(self, build_corpus):
        corpus = _planted_corpus(build_corpus)
        first = [s.to_dict() for s in split_adversarial(corpus, n_splits=3, seed=4, max_stall=100)]
        second = [s.to_dict() for s in split_adversarial(corpus, n_splits=3, seed=4, max_stall=100)]
        assert first == second

    def test_too_small_corpus(self, build_corpus):
        corpus = build_corpus([(f"u{i}", "a", 1.0) for i in range(9)])
        with pytest.raises(SplitError, match="at least 10"):
            split_adversarial(corpus)

    @pytest.mark.slow
    def test_close_to_exhaustive_optimum(self, build_corpus):
        """Best restart reaches 95% of the brute-force optimum on 12-utterance corpora."""
        vocab = ["a", "b", "c", "d", "e"]
        successes = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            specs = []
            for k in range(12):
                weights = rng.dirichlet(np.full(len(vocab), 0.5))
                n_tokens = int(rng.integers(1, 7))
                tokens = rng.choice(vocab, size=n_tokens, p=weights)
                specs.append((f"u{k:02d}", " ".join(tokens), 0.5 * n_tokens + float(rng.uniform(0, 0.2))))
            corpus = build_corpus(specs)

            optimum = _brute_force_optimum(corpus)
            splits = split_adversarial(corpus, n_splits=10, seed=seed, max_stall=500)
            for split in splits:
                history = list(split.history)
                assert all(b > a for a, b in zip(history, history[1:]))
            if optimum is None:
                successes += 1
                continue
            achieved = max(s.achieved_distance for s in splits)
            if achieved >= 0.95 * optimum - 1e-12:
                successes += 1
        assert successes >= 18


class TestOverlap:
    """Tests for overlap_ratio function."""

    def test_identical(self):
        split = _split("a", ["1", "2"], ["3", "4"])
        assert overlap_ratio(split, split) == 1.0

    def test_half_shared(self):
        ids = [str(i) for i in range(1, 9)]
        ref = _split("ref", [i for i in ids if i not in "1234"], ["1", "2", "3", "4"])
        other = _split("other", [i for i in ids if i not in "3456"], ["3", "4", "5", "6"])
        assert overlap_ratio(ref, other) == 0.5

    def test_different_corpora_rejected(self):
        with pytest.raises(SplitError):
            overlap_ratio(_split("a", ["1"], ["2"]), _split("b", ["1"], ["3"]))


class TestSplitRecord:
    """Tests for Split invariants and persistence."""

    def test_overlapping_sets_rejected(self):
        with pytest.raises(SplitError):
            _split("bad", ["1", "2"], ["2", "3"])

    def test_validate_reports_uncovered_ids(self, small_corpus):
        split = _split("partial", ["u01"], ["u02"])
        assert validate_split(split, small_corpus)

    def test_save_and_load(self, small_corpus, tmp_path):
        original = split_random(small_corpus, 1, seed=0)[0]
        path = tmp_path / "splits" / "random-000.json"
        save_split(original, path)
        assert load_split(path) == original


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
