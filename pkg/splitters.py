#!/usr/bin/env python3
"""
Train/test partitioning strategies.

- held-out group: one split per speaker (or session), that group is the test set
- random: seeded shuffles filled to ~20% test duration
- heuristic: one split; test = utterances whose feature value is >= a
  threshold chosen so the test side holds ~20% of the duration
- adversarial: local search that maximizes the total variation distance
  between train and test token distributions (Wasserstein-1 under the
  0/1 ground metric) while keeping the test duration near 20%

Every splitter is a pure function of (corpus, parameters, seed). Seeds for
individual splits are derived from the master seed and a (name, index) key,
so adding a strategy or a split never changes the others.
"""

import json
import logging
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field, fields
from multiprocessing import Pool
from pathlib import Path
from typing import Literal

import numpy as np

from corpus import Corpus, FeatureVector, GroupKey
from errors import SplitError

logger = logging.getLogger(__name__)

Method = Literal["held_out_group", "random", "heuristic", "adversarial"]

TARGET_FRACTION = 0.20
VALIDITY_BAND = (0.17, 0.25)
ADVERSARIAL_BAND = (0.18, 0.22)
ADVERSARIAL_BATCH = 512
ADVERSARIAL_MAX_ITERATIONS = 100_000
MIN_ADVERSARIAL_UTTERANCES = 10

# heuristic feature -> FeatureVector attribute
HEURISTIC_FEATURES = {
    "duration": "duration_s",
    "pitch": "avg_pitch_hz",
    "intensity": "avg_intensity_db",
    "n_tokens": "n_tokens",
    "n_types": "n_types",
    "perplexity": "perplexity",
}


def child_seed(master_seed: int, name: str, index: int = 0) -> int:
    """Stable 63-bit seed for the (name, index) stream under master_seed."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(zlib.crc32(name.encode("utf-8")), index))
    return int(seq.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def child_rng(master_seed: int, name: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(child_seed(master_seed, name, index))


@dataclass(frozen=True)
class Split:
    """A named train/test partition over a corpus."""

    name: str
    strategy: str
    method: str
    params: dict
    seed: int | None
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    excluded: tuple[str, ...] = ()
    test_fraction: float = 0.0
    threshold: float | None = None
    achieved_distance: float | None = None
    history: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        train, test, excl = set(self.train_ids), set(self.test_ids), set(self.excluded)
        if train & test or (train | test) & excl:
            raise SplitError(f"split {self.name}: train, test and excluded sets overlap")

    @property
    def universe(self) -> frozenset[str]:
        return frozenset(self.train_ids) | frozenset(self.test_ids) | frozenset(self.excluded)

    def to_dict(self) -> dict:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["train"] = list(data.pop("train_ids"))
        data["test"] = list(data.pop("test_ids"))
        for key in ("excluded", "history", "warnings", "flags"):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "Split":
        data = dict(data)
        data["train_ids"] = tuple(data.pop("train"))
        data["test_ids"] = tuple(data.pop("test"))
        for key in ("excluded", "history", "warnings", "flags"):
            data[key] = tuple(data.get(key, ()))
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def save_split(split: Split, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(split.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_split(path: Path) -> Split:
    return Split.from_dict(json.loads(path.read_text(encoding="utf-8")))


def validate_split(split: Split, corpus: Corpus, band: tuple[float, float] | None = None) -> list[str]:
    """
    Check the partition invariants against a corpus.

    Returns a list of problems (empty when the split is valid).
    """
    problems = []
    if split.universe != frozenset(corpus.ids):
        problems.append("train, test and excluded ids do not cover the corpus exactly")
    if band is not None:
        low, high = band
        if not low <= split.test_fraction <= high:
            problems.append(f"test fraction {split.test_fraction:.4f} outside [{low}, {high}]")
    return problems


def _ordered(corpus: Corpus, ids: set[str]) -> tuple[str, ...]:
    return tuple(i for i in corpus.ids if i in ids)


def _fraction(corpus: Corpus, test: set[str], pool_duration: float | None = None) -> float:
    total = corpus.total_duration if pool_duration is None else pool_duration
    return corpus.duration_of(test) / total


def _fill_to_target(corpus: Corpus, order: list[str], target: float) -> set[str]:
    """Take ids in order until their duration first reaches target * total."""
    goal = target * corpus.total_duration
    test: set[str] = set()
    acc = 0.0
    for utt_id in order:
        if acc >= goal:
            break
        test.add(utt_id)
        acc += corpus.by_id[utt_id].duration_s
    return test


def _fill_into_band(corpus: Corpus, order: list[str], band: tuple[float, float]) -> set[str] | None:
    """Take ids in order, skipping any that would overshoot band; None if band is never reached."""
    low, high = band[0] * corpus.total_duration, band[1] * corpus.total_duration
    test: set[str] = set()
    acc = 0.0
    for utt_id in order:
        duration = corpus.by_id[utt_id].duration_s
        if acc + duration > high:
            continue
        test.add(utt_id)
        acc += duration
        if acc >= low:
            return test
    return None


def split_held_out_group(corpus: Corpus, group_by: GroupKey) -> list[Split]:
    """One split per speaker/session with that group as the test set."""
    groups = corpus.groups(group_by)
    if len(groups) < 2:
        raise SplitError(f"held-out {group_by} needs at least 2 groups, corpus has {len(groups)}")
    splits = []
    for group, ids in groups.items():
        test = set(ids)
        train = set(corpus.ids) - test
        splits.append(Split(
            name=f"held_out_{group_by}-{group}",
            strategy=f"held_out_{group_by}",
            method="held_out_group",
            params={"group_by": group_by, "group": group},
            seed=None,
            train_ids=_ordered(corpus, train),
            test_ids=_ordered(corpus, test),
            test_fraction=_fraction(corpus, test),
        ))
    return splits


def split_random(
    corpus: Corpus,
    n_splits: int,
    seed: int,
    target_fraction: float = TARGET_FRACTION,
    max_fraction: float = VALIDITY_BAND[1],
) -> list[Split]:
    """
    Seeded random splits.

    Each split shuffles the utterances with its own child seed and moves
    them to the test side until the test duration first reaches
    target_fraction of the total.
    """
    if len(corpus) < 2:
        raise SplitError("random splits need at least 2 utterances")
    splits = []
    for index in range(n_splits):
        rng = child_rng(seed, "random", index)
        order = [corpus.ids[i] for i in rng.permutation(len(corpus))]
        test = _fill_to_target(corpus, order, target_fraction)
        if len(test) == len(corpus):
            raise SplitError("random split left the train side empty")
        warnings = []
        for utt_id in sorted(test):
            share = corpus.by_id[utt_id].duration_s / corpus.total_duration
            if share > max_fraction:
                warnings.append(
                    f"utterance {utt_id} alone holds {share:.1%} of the duration and was forced into test"
                )
        for message in warnings:
            logger.warning("random-%03d: %s", index, message)
        splits.append(Split(
            name=f"random-{index:03d}",
            strategy="random",
            method="random",
            params={"index": index, "target_fraction": target_fraction,
                    "child_seed": child_seed(seed, "random", index)},
            seed=seed,
            train_ids=_ordered(corpus, set(corpus.ids) - test),
            test_ids=_ordered(corpus, test),
            test_fraction=_fraction(corpus, test),
            warnings=tuple(warnings),
        ))
    return splits


def feature_values(features: dict[str, FeatureVector], feature: str) -> dict[str, float | None]:
    """Pull one heuristic feature out of a FeatureVector map."""
    if feature not in HEURISTIC_FEATURES:
        raise SplitError(f"unknown heuristic feature {feature!r}")
    attr = HEURISTIC_FEATURES[feature]
    return {utt_id: getattr(vec, attr) for utt_id, vec in features.items()}


def split_heuristic(
    corpus: Corpus,
    feature: str,
    values: dict[str, float | None],
    target_fraction: float = TARGET_FRACTION,
    band: tuple[float, float] = VALIDITY_BAND,
) -> Split:
    """
    Threshold split on one feature.

    Utterances are sorted by feature value, highest first, and accumulated
    until their duration first reaches target_fraction of the (non-excluded)
    total. The value of the last one taken is the threshold; every
    utterance at or above it goes to test, ties included. Utterances with
    no value (e.g. unvoiced, so no pitch) are excluded and counted.
    """
    missing = [i for i in corpus.ids if i not in values]
    if missing:
        raise SplitError(f"no {feature} value for {len(missing)} utterance(s): {', '.join(missing[:20])}")
    excluded = {i for i in corpus.ids if values[i] is None}
    pool = [i for i in corpus.ids if i not in excluded]
    if not pool:
        raise SplitError(f"no utterance has a {feature} value")
    distinct = {values[i] for i in pool}
    if len(distinct) < 2:
        raise SplitError(f"feature {feature} is constant across the corpus; no threshold separates it")

    pool_duration = corpus.duration_of(pool)
    goal = target_fraction * pool_duration
    ranked = sorted(pool, key=lambda i: (-values[i], i))
    acc = 0.0
    threshold = values[ranked[0]]
    for utt_id in ranked:
        acc += corpus.by_id[utt_id].duration_s
        threshold = values[utt_id]
        if acc >= goal:
            break

    test = {i for i in pool if values[i] >= threshold}
    train = set(pool) - test
    if not train:
        raise SplitError(f"heuristic {feature} split put every utterance in test")

    fraction = _fraction(corpus, test, pool_duration)
    warnings = []
    if excluded:
        warnings.append(f"{len(excluded)} utterance(s) without a {feature} value excluded")
    low, high = band
    if not low <= fraction <= high:
        warnings.append(f"realized test fraction {fraction:.3f} outside [{low}, {high}]")
    for message in warnings:
        logger.warning("heuristic_%s: %s", feature, message)
    return Split(
        name=f"heuristic_{feature}",
        strategy=f"heuristic_{feature}",
        method="heuristic",
        params={"feature": feature, "target_fraction": target_fraction, "n_excluded": len(excluded)},
        seed=None,
        train_ids=_ordered(corpus, train),
        test_ids=_ordered(corpus, test),
        excluded=_ordered(corpus, excluded),
        test_fraction=fraction,
        threshold=float(threshold),
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class TokenDistribution:
    """Relative token frequencies."""

    probs: dict = field(hash=False)

    def __post_init__(self):
        if any(p < 0 for p in self.probs.values()):
            raise SplitError("token distribution has negative mass")
        total = math.fsum(self.probs.values())
        if abs(total - 1.0) > 1e-12:
            raise SplitError(f"token distribution sums to {total!r}, not 1")

    @classmethod
    def from_counts(cls, counts: Counter) -> "TokenDistribution":
        total = sum(counts.values())
        if total == 0:
            raise SplitError("cannot build a distribution from zero tokens")
        return cls({tok: n / total for tok, n in counts.items() if n > 0})


def token_distribution(corpus: Corpus, ids) -> TokenDistribution:
    counts: Counter = Counter()
    for utt_id in ids:
        counts.update(corpus.by_id[utt_id].transcript)
    return TokenDistribution.from_counts(counts)


def token_tv_distance(p: TokenDistribution, q: TokenDistribution) -> float:
    """Total variation 0.5 * sum |p - q|, i.e. Wasserstein-1 under the 0/1 metric."""
    support = set(p.probs) | set(q.probs)
    tv = 0.5 * math.fsum(abs(p.probs.get(t, 0.0) - q.probs.get(t, 0.0)) for t in support)
    return min(1.0, max(0.0, tv))


class _AdversarialSearch:
    """Steepest-ascent TV maximization over moves and swaps for one restart."""

    def __init__(
        self,
        corpus: Corpus,
        band: tuple[float, float],
        batch_size: int,
    ):
        self.corpus = corpus
        self.band = band
        self.batch_size = batch_size
        vocab = {tok: k for k, tok in enumerate(sorted({t for u in corpus.utterances for t in u.transcript}))}
        self.tokens = []
        for utt in corpus.utterances:
            counts = Counter(utt.transcript)
            idx = np.array([vocab[t] for t in counts], dtype=np.int64)
            self.tokens.append((idx, np.array(list(counts.values()), dtype=float)))
        self.durations = np.array([u.duration_s for u in corpus.utterances])
        self.total = corpus.total_duration
        self.vocab_size = len(vocab)

    def _counts(self, in_test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        train = np.zeros(self.vocab_size)
        test = np.zeros(self.vocab_size)
        for k, (idx, cnt) in enumerate(self.tokens):
            (test if in_test[k] else train)[idx] += cnt
        return train, test

    @staticmethod
    def _tv(train: np.ndarray, test: np.ndarray) -> float:
        a, b = train.sum(), test.sum()
        if a == 0 or b == 0:
            return -1.0
        return float(0.5 * np.abs(train / a - test / b).sum())

    def _evaluate(self, train, test, test_dur, in_test, moves) -> tuple[float, float, list[int]] | None:
        """TV and duration after moving the given utterances across, or None if infeasible."""
        new_dur = test_dur
        for k in moves:
            new_dur += -self.durations[k] if in_test[k] else self.durations[k]
        fraction = new_dur / self.total
        if not self.band[0] <= fraction <= self.band[1]:
            return None
        tr, te = train.copy(), test.copy()
        for k in moves:
            idx, cnt = self.tokens[k]
            if in_test[k]:
                te[idx] -= cnt
                tr[idx] += cnt
            else:
                tr[idx] -= cnt
                te[idx] += cnt
        value = self._tv(tr, te)
        if value < 0:
            return None
        return value, new_dur, moves

    def run(self, in_test: np.ndarray, rng: np.random.Generator, max_stall: int) -> dict:
        n = len(in_test)
        train, test = self._counts(in_test)
        test_dur = float(self.durations[in_test].sum())
        current = self._tv(train, test)
        history = [current]
        stall = 0
        seen_feasible = False
        iterations = 0
        while stall < max_stall and iterations < ADVERSARIAL_MAX_ITERATIONS:
            iterations += 1
            train_idx = np.flatnonzero(~in_test)
            test_idx = np.flatnonzero(in_test)
            n_swaps = train_idx.size * test_idx.size
            size = n + n_swaps
            exhaustive = size <= self.batch_size
            picks = np.arange(size) if exhaustive else rng.integers(0, size, size=self.batch_size)

            best = None
            for p in picks:
                if p < n:
                    moves = [int(p)]
                else:
                    q = int(p) - n
                    moves = [int(train_idx[q // test_idx.size]), int(test_idx[q % test_idx.size])]
                result = self._evaluate(train, test, test_dur, in_test, moves)
                if result is None:
                    continue
                seen_feasible = True
                if result[0] > current and (best is None or result[0] > best[0]):
                    best = result

            if best is None:
                stall += len(picks)
                if exhaustive:
                    break
                continue

            value, test_dur, moves = best
            for k in moves:
                idx, cnt = self.tokens[k]
                if in_test[k]:
                    test[idx] -= cnt
                    train[idx] += cnt
                else:
                    train[idx] -= cnt
                    test[idx] += cnt
                in_test[k] = not in_test[k]
            current = value
            history.append(current)
            stall = 0

        return {
            "in_test": in_test,
            "history": history,
            "iterations": iterations,
            "no_feasible_move": not seen_feasible,
        }


def _adversarial_restart(args) -> Split:
    corpus, restart, seed, max_stall, band, batch_size, target_fraction, validity = args
    rng = child_rng(seed, "adversarial", restart)
    order = [corpus.ids[i] for i in rng.permutation(len(corpus))]
    initial = _fill_into_band(corpus, order, band) or _fill_to_target(corpus, order, target_fraction)
    in_test = np.array([i in initial for i in corpus.ids])

    search = _AdversarialSearch(corpus, band, batch_size)
    outcome = search.run(in_test.copy(), rng, max_stall)
    test = {corpus.ids[k] for k in np.flatnonzero(outcome["in_test"])}
    history = outcome["history"]

    flags = []
    warnings = []
    if outcome["no_feasible_move"]:
        flags.append("no_feasible_move")
        warnings.append("no duration-feasible move from the initial split; returned it unchanged")
    fraction = _fraction(corpus, test)
    if not validity[0] <= fraction <= validity[1]:
        warnings.append(f"test fraction {fraction:.3f} outside [{validity[0]}, {validity[1]}]")

    return Split(
        name=f"adversarial-{restart:03d}",
        strategy="adversarial",
        method="adversarial",
        params={
            "restart": restart,
            "max_stall": max_stall,
            "band": list(band),
            "initial_distance": history[0],
            "iterations": outcome["iterations"],
            "child_seed": child_seed(seed, "adversarial", restart),
        },
        seed=seed,
        train_ids=_ordered(corpus, set(corpus.ids) - test),
        test_ids=_ordered(corpus, test),
        test_fraction=fraction,
        achieved_distance=history[-1],
        history=tuple(history),
        warnings=tuple(warnings),
        flags=tuple(flags),
    )


def split_adversarial(
    corpus: Corpus,
    n_splits: int = 5,
    seed: int = 0,
    max_stall: int = 2000,
    band: tuple[float, float] = ADVERSARIAL_BAND,
    target_fraction: float = TARGET_FRACTION,
    validity_band: tuple[float, float] = VALIDITY_BAND,
    batch_size: int = ADVERSARIAL_BATCH,
    workers: int = 1,
) -> list[Split]:
    """
    Adversarial splits maximizing train/test token-distribution distance.

    Each restart starts from its own seeded random ~20% split and applies
    the best strictly improving single-utterance move or train/test swap
    that keeps the test duration fraction inside band. When the
    neighborhood is larger than batch_size, a seeded sample of batch_size
    proposals is scored per step instead. A restart stops after max_stall
    proposals without improvement, or at a local optimum.
    """
    if len(corpus) < MIN_ADVERSARIAL_UTTERANCES:
        raise SplitError(
            f"adversarial splits need at least {MIN_ADVERSARIAL_UTTERANCES} utterances, corpus has {len(corpus)}"
        )
    jobs = [
        (corpus, r, seed, max_stall, tuple(band), batch_size, target_fraction, tuple(validity_band))
        for r in range(n_splits)
    ]
    if workers > 1 and n_splits > 1:
        with Pool(min(workers, n_splits)) as pool:
            splits = pool.map(_adversarial_restart, jobs)
    else:
        splits = [_adversarial_restart(job) for job in jobs]
    for split in splits:
        logger.info(
            "%s: distance %.4f -> %.4f after %d steps",
            split.name, split.params["initial_distance"], split.achieved_distance, split.params["iterations"],
        )
    return splits


def overlap_ratio(reference: Split, other: Split) -> float:
    """Share of the reference test set that also appears in the other test set."""
    if reference.universe != other.universe:
        raise SplitError(f"splits {reference.name} and {other.name} are over different corpora")
    if not reference.test_ids:
        raise SplitError(f"reference split {reference.name} has an empty test set")
    shared = set(reference.test_ids) & set(other.test_ids)
    return len(shared) / len(reference.test_ids)
