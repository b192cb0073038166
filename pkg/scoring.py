#!/usr/bin/env python3
"""
Word error rate scoring and per-strategy aggregation.

Hypotheses come from an external recognizer as JSON Lines:

    {"id": "u1", "hypothesis": "ka nga def"}

They go through the same tokenizer as the references. Split-level WER
pools edit counts over the test set, 100 * sum(S + D + I) / sum(ref_len);
per-utterance WERs are kept for the regression rows.
"""

import json
import math
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from errors import DataError, MissingHypothesisError
from splitters import Split
from text_features import tokenize

SUMMARY_COLUMNS = ["strategy", "method", "threshold", "n_splits", "wer", "wer_std", "wer_range"]


@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer_percent(self) -> float:
        return 100.0 * self.errors / self.ref_len


@dataclass(frozen=True)
class SplitScore:
    """Pooled WER of one split and the per-utterance breakdowns behind it."""

    split_name: str
    strategy: str
    method: str
    wer_percent: float
    errors: int
    ref_len: int
    per_utterance: dict = field(hash=False)

    def utterance_wers(self) -> dict[str, float]:
        return {utt_id: b.wer_percent for utt_id, b in self.per_utterance.items()}


@dataclass(frozen=True)
class StrategySummary:
    """One row of the per-strategy WER table."""

    strategy: str
    method: str
    n_splits: int
    wer_mean: float
    wer_std: float | None
    wer_range: float
    threshold: float | None = None

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "method": self.method,
            "threshold": self.threshold,
            "n_splits": self.n_splits,
            "wer": self.wer_mean,
            "wer_std": self.wer_std,
            "wer_range": self.wer_range,
        }


def wer(reference: list[str], hypothesis: list[str]) -> WerBreakdown:
    """
    Minimal-edit alignment with unit costs.

    On the backtrace, a match is taken first, then substitution, then
    insertion, then deletion.

    Raises:
        DataError: If the reference is empty.
    """
    n, m = len(reference), len(hypothesis)
    if n == 0:
        raise DataError("WER is undefined for an empty reference")

    trellis = np.zeros((n + 1, m + 1), dtype=np.int64)
    trellis[:, 0] = np.arange(n + 1)
    trellis[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = trellis[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1])
            trellis[i, j] = min(diag, trellis[i, j - 1] + 1, trellis[i - 1, j] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = trellis[i, j]
        if i > 0 and j > 0:
            if reference[i - 1] == hypothesis[j - 1] and here == trellis[i - 1, j - 1]:
                i, j = i - 1, j - 1
                continue
            if here == trellis[i - 1, j - 1] + 1:
                subs += 1
                i, j = i - 1, j - 1
                continue
        if j > 0 and here == trellis[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return WerBreakdown(substitutions=subs, deletions=dels, insertions=ins, ref_len=n)


def split_wer(
    split: Split,
    refs: dict[str, list[str]],
    hyps: dict[str, list[str]],
) -> SplitScore:
    """
    Pooled WER over a split's test set.

    Raises:
        MissingHypothesisError: Listing test ids without a hypothesis.
    """
    missing = [utt_id for utt_id in split.test_ids if utt_id not in hyps]
    if missing:
        raise MissingHypothesisError(missing)
    per_utterance = {utt_id: wer(list(refs[utt_id]), list(hyps[utt_id])) for utt_id in split.test_ids}
    errors = sum(b.errors for b in per_utterance.values())
    ref_len = sum(b.ref_len for b in per_utterance.values())
    return SplitScore(
        split_name=split.name,
        strategy=split.strategy,
        method=split.method,
        wer_percent=100.0 * errors / ref_len,
        errors=errors,
        ref_len=ref_len,
        per_utterance=per_utterance,
    )


def summarize_strategy(
    wers: list[float],
    strategy: str = "",
    method: str = "",
    threshold: float | None = None,
) -> StrategySummary:
    """Mean, sample std (None for a single split) and range of split WERs."""
    if not wers:
        raise DataError("cannot summarize an empty list of WERs")
    values = np.asarray(wers, dtype=float)
    return StrategySummary(
        strategy=strategy,
        method=method,
        n_splits=len(values),
        wer_mean=float(values.mean()),
        wer_std=float(values.std(ddof=1)) if len(values) > 1 else None,
        wer_range=float(values.max() - values.min()),
        threshold=threshold,
    )


def read_hypotheses(path: Path) -> dict[str, list[str]]:
    """Load an {id, hypothesis} JSON Lines file; empty hypotheses are allowed."""
    hyps: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                hyps[record["id"]] = tokenize(record.get("hypothesis") or "", allow_empty=True)
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DataError(f"{path}:{line_no}: bad hypothesis record ({e})") from e
    return hyps


def write_hypotheses(hyps: dict[str, list[str]], path: Path, order: Iterable[str] | None = None):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for utt_id in (order if order is not None else sorted(hyps)):
            record = {"id": utt_id, "hypothesis": " ".join(hyps[utt_id])}
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def scores_frame(splits: list[Split], scores: list[SplitScore]) -> pd.DataFrame:
    """One row per split: strategy, name, threshold, test fraction, pooled WER."""
    by_name = {s.name: s for s in splits}
    rows = []
    for score in scores:
        split = by_name[score.split_name]
        rows.append({
            "strategy": split.strategy,
            "method": split.method,
            "split": split.name,
            "params": json.dumps(split.params, sort_keys=True),
            "threshold": split.threshold,
            "test_fraction": split.test_fraction,
            "ref_len": score.ref_len,
            "errors": score.errors,
            "wer": score.wer_percent,
        })
    return pd.DataFrame(rows)


def summary_frame(summaries: list[StrategySummary]) -> pd.DataFrame:
    return pd.DataFrame([s.to_dict() for s in summaries], columns=SUMMARY_COLUMNS)


def _fmt(value: float | None, digits: int = 2) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.{digits}f}"


def format_summary_table(summaries: list[StrategySummary]) -> str:
    """Plain-text WER table: strategy, threshold, splits, WER, std, range."""
    header = f"{'split method':<24}{'threshold':>12}{'N':>6}{'WER':>9}{'std':>9}{'range':>9}"
    lines = [header, "-" * len(header)]
    for s in summaries:
        lines.append(
            f"{s.strategy:<24}{_fmt(s.threshold):>12}{s.n_splits:>6}"
            f"{_fmt(s.wer_mean):>9}{_fmt(s.wer_std):>9}"
            f"{_fmt(s.wer_range if s.n_splits > 1 else None):>9}"
        )
    return "\n".join(lines)
