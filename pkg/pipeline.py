#!/usr/bin/env python3
"""
Experiment pipeline: ingest, features, lm, split, score, summaries,
overlap, regression, report.

Every stage writes its artifacts under the output directory and the next
stage reads them back, so each stage can also run on its own:

    corpus/manifest.jsonl    normalized manifest
    corpus/stats.json        descriptive statistics per grouping key
    acoustic.jsonl           duration, pitch and intensity per utterance
    lm/counts.tsv            trigram counts of the external LM text
    features.jsonl           complete feature vectors (acoustic + lexical + LM)
    splits/index.json        split names in order, plus skipped strategies
    splits/<name>.json       one file per split
    hyps/<name>.jsonl        mock-ASR hypotheses (simulated corpora only)
    scores.csv               pooled WER per split
    utterance_wers.csv       per-utterance edit counts
    summary.csv              per-strategy WER table
    regression.json/.csv     stepwise regression of utterance WER
    report.json              everything above that the plots and tables need

The LM is trained once per corpus, before any split. The same inputs,
config and seed reproduce every file byte for byte.
"""

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from audio_features import extract_acoustic
from config import ALL_STRATEGIES, Config
from corpus import Corpus, FeatureVector, corpus_stats, group_durations, load_manifest, save_manifest
from errors import ConfigError, DataError, RankDeficiencyError, SplitError, StageError
from ngram_lm import TrigramLM, perplexity, train_trigram
from regression import (
    CATEGORICAL_CONTROLS,
    DEFAULT_CONTROLS,
    PREDICTORS,
    RegressionResult,
    backward_stepwise,
    build_rows,
    format_result,
    group_duration_regression,
    result_frame,
)
from scoring import (
    SplitScore,
    StrategySummary,
    WerBreakdown,
    format_summary_table,
    read_hypotheses,
    scores_frame,
    split_wer,
    summarize_strategy,
    summary_frame,
    write_hypotheses,
)
from simkit import mock_asr, read_truth
from splitters import (
    HEURISTIC_FEATURES,
    Split,
    feature_values,
    load_split,
    overlap_ratio,
    save_split,
    split_adversarial,
    split_heuristic,
    split_held_out_group,
    split_random,
    validate_split,
)
from text_features import lexical_profile, read_sentences, text_stats

logger = logging.getLogger(__name__)

STAGES = ["ingest", "features", "lm", "split", "score", "summaries", "overlap", "regression", "report"]
DEFAULT_RANDOM_SPLITS = 10
ACOUSTIC_FIELDS = ("duration_s", "avg_pitch_hz", "avg_intensity_db")


@dataclass
class ExperimentConfig:
    """Everything one experiment run depends on."""

    manifest: Path
    lm_text: Path
    output_dir: Path
    strategies: list[str] = field(default_factory=lambda: list(ALL_STRATEGIES))
    hyp_dir: Path | None = None
    mock_asr: Path | None = None
    seed: int = 1234
    target_fraction: float = 0.20
    random_splits: int | None = None
    adversarial_restarts: int = 5
    adversarial_max_stall: int = 2000
    adversarial_band: tuple[float, float] = (0.18, 0.22)
    validity_band: tuple[float, float] = (0.17, 0.25)
    audio: dict = field(default_factory=dict)
    alpha: float = 0.05
    wer_cap: float = 500.0
    workers: int = 1
    plot: bool = True

    def validate(self):
        """
        Raises:
            ConfigError: Missing input, no strategy, or not exactly one
                hypothesis source.
        """
        if not self.strategies:
            raise ConfigError("at least one strategy must be enabled")
        unknown = set(self.strategies) - set(ALL_STRATEGIES)
        if unknown:
            raise ConfigError(f"unknown strategies: {', '.join(sorted(unknown))}")
        for label, path in (("manifest", self.manifest), ("LM text", self.lm_text)):
            if path is None or not Path(path).exists():
                raise ConfigError(f"{label} not found: {path}")
        if (self.hyp_dir is None) == (self.mock_asr is None):
            raise ConfigError("exactly one of a hypothesis directory or a mock-ASR truth file is required")
        if self.hyp_dir is not None and not Path(self.hyp_dir).is_dir():
            raise ConfigError(f"hypothesis directory not found: {self.hyp_dir}")
        if self.mock_asr is not None and not Path(self.mock_asr).exists():
            raise ConfigError(f"mock-ASR truth file not found: {self.mock_asr}")

    @classmethod
    def from_config(cls, config: Config, validate: bool = True) -> "ExperimentConfig":
        """Build from a Config; standalone stages skip validation and check their own inputs."""
        if validate:
            config.validate()
        experiment = cls(
            manifest=config.manifest,
            lm_text=config.lm_text,
            output_dir=config.output_dir,
            strategies=config.strategies,
            hyp_dir=config.hyp_dir,
            mock_asr=config.mock_asr,
            seed=config.seed,
            target_fraction=config.target_fraction,
            random_splits=config.random_splits,
            adversarial_restarts=config.adversarial_restarts,
            adversarial_max_stall=config.adversarial_max_stall,
            adversarial_band=config.adversarial_band,
            validity_band=config.validity_band,
            audio=config.audio,
            alpha=config.regression_alpha,
            wer_cap=config.wer_cap,
            workers=config.workers,
            plot=config.plot,
        )
        if validate:
            experiment.validate()
        return experiment

    def digest(self) -> str:
        """Hash of the inputs and parameters; output location is not part of it."""
        h = hashlib.sha256()
        for path in (self.manifest, self.lm_text, self.mock_asr):
            if path is not None:
                h.update(Path(path).read_bytes())
        if self.hyp_dir is not None:
            for path in sorted(Path(self.hyp_dir).glob("*.jsonl")):
                h.update(path.name.encode("utf-8"))
                h.update(path.read_bytes())
        params = {
            "strategies": list(self.strategies),
            "hypotheses": "mock" if self.mock_asr is not None else "files",
            "seed": self.seed,
            "target_fraction": self.target_fraction,
            "random_splits": self.random_splits,
            "adversarial_restarts": self.adversarial_restarts,
            "adversarial_max_stall": self.adversarial_max_stall,
            "adversarial_band": list(self.adversarial_band),
            "validity_band": list(self.validity_band),
            "audio": dict(sorted(self.audio.items())),
            "alpha": self.alpha,
            "wer_cap": self.wer_cap,
        }
        h.update(json.dumps(params, sort_keys=True).encode("utf-8"))
        return h.hexdigest()


@dataclass
class ExperimentReport:
    """Per-corpus results: WER table, per-split WERs, regression, diagnostics."""

    corpus_name: str
    seed: int
    summaries: list[StrategySummary]
    split_wers: dict[str, list[float]]
    splits: list[dict] = field(default_factory=list)
    corpus: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    lm_text: dict | None = None
    durations: dict | None = None
    overlap: dict | None = None
    regression: dict | None = None
    group_regression: dict = field(default_factory=dict)
    adequacy: dict | None = None
    skipped: dict = field(default_factory=dict)
    stages: list[str] = field(default_factory=list)
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "corpus_name": self.corpus_name,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "stages": list(self.stages),
            "corpus": self.corpus,
            "stats": self.stats,
            "lm_text": self.lm_text,
            "durations": self.durations,
            "summaries": [s.to_dict() for s in self.summaries],
            "split_wers": self.split_wers,
            "splits": self.splits,
            "skipped": self.skipped,
            "overlap": self.overlap,
            "adequacy": self.adequacy,
            "regression": self.regression,
            "group_regression": self.group_regression,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentReport":
        summaries = [
            StrategySummary(
                strategy=s["strategy"],
                method=s["method"],
                n_splits=s["n_splits"],
                wer_mean=s["wer"],
                wer_std=s["wer_std"],
                wer_range=s["wer_range"],
                threshold=s["threshold"],
            )
            for s in data.get("summaries", [])
        ]
        return cls(
            corpus_name=data["corpus_name"],
            seed=data["seed"],
            summaries=summaries,
            split_wers={k: list(v) for k, v in data.get("split_wers", {}).items()},
            splits=data.get("splits", []),
            corpus=data.get("corpus", {}),
            stats=data.get("stats", {}),
            lm_text=data.get("lm_text"),
            durations=data.get("durations"),
            overlap=data.get("overlap"),
            regression=data.get("regression"),
            group_regression=data.get("group_regression", {}),
            adequacy=data.get("adequacy"),
            skipped=data.get("skipped", {}),
            stages=data.get("stages", []),
            config_digest=data.get("config_digest", ""),
        )


def write_json(data, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8", newline="\n")


def write_report(report: ExperimentReport, path: Path):
    write_json(report.to_dict(), path)


def read_report(path: Path) -> ExperimentReport:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read report {path}: {e}") from e
    return ExperimentReport.from_dict(data)


def _write_jsonl(records: list[dict], path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_feature_sidecar(features: dict[str, FeatureVector], path: Path, order: list[str] | None = None):
    """Persist feature vectors so audio is read only once."""
    ids = order if order is not None else sorted(features)
    _write_jsonl([{"id": i, **features[i].to_dict()} for i in ids], path)


def read_feature_sidecar(path: Path) -> dict[str, FeatureVector]:
    try:
        return {r["id"]: FeatureVector.from_dict(r) for r in _read_jsonl(path)}
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read feature sidecar {path}: {e}") from e


def split_filename(name: str) -> str:
    """File stem for a split; group values may hold path-unsafe characters."""
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


def _acoustic_job(job) -> tuple[str, dict]:
    utt_id, audio_ref, duration_s, precomputed, audio_params = job
    if audio_ref is not None and Path(audio_ref).exists():
        feats = extract_acoustic(Path(audio_ref), audio_params).to_dict()
    else:
        feats = {"avg_pitch_hz": None, "avg_intensity_db": None}
    feats["duration_s"] = duration_s
    for key in ACOUSTIC_FIELDS:
        if key in precomputed:
            feats[key] = precomputed[key]
    return utt_id, {key: feats[key] for key in ACOUSTIC_FIELDS}


def extract_acoustic_table(corpus: Corpus, audio_params: dict | None = None, workers: int = 1) -> dict[str, dict]:
    """
    Duration, pitch and intensity per utterance, in corpus order.

    Durations are the manifest durations. Utterances without audio keep
    whatever pitch/intensity the manifest precomputed, else None.
    """
    jobs = [
        (utt.id, utt.audio_ref, utt.duration_s, utt.precomputed, audio_params or {})
        for utt in corpus.utterances
    ]
    if workers > 1:
        with Pool(workers) as pool:
            results = list(tqdm(pool.imap(_acoustic_job, jobs, chunksize=8),
                                total=len(jobs), desc="features", disable=None))
    else:
        results = [_acoustic_job(job) for job in tqdm(jobs, desc="features", disable=None)]
    return dict(results)


def build_features(corpus: Corpus, acoustic: dict[str, dict], lm: TrigramLM) -> dict[str, FeatureVector]:
    """Combine acoustic values with token counts, OOV rate and perplexity."""
    features = {}
    for utt in corpus.utterances:
        tokens = list(utt.transcript)
        profile = lexical_profile(tokens, lm.vocab)
        values = {
            **acoustic[utt.id],
            "n_tokens": profile.n_tokens,
            "n_types": profile.n_types,
            "perplexity": perplexity(lm, tokens),
            "oov_rate": profile.oov_rate,
        }
        values.update({k: v for k, v in utt.precomputed.items() if k not in ACOUSTIC_FIELDS})
        features[utt.id] = FeatureVector.from_dict(values)
    return features


def _random_split_count(corpus: Corpus, requested: int | None) -> int:
    if requested is not None:
        return requested
    for key in ("speaker", "session"):
        if key in corpus.grouping:
            return len(corpus.groups(key))
    return DEFAULT_RANDOM_SPLITS


def build_splits(
    corpus: Corpus,
    features: dict[str, FeatureVector],
    config: ExperimentConfig,
) -> tuple[list[Split], dict[str, str]]:
    """
    Run every enabled strategy in canonical order.

    Strategies the corpus cannot support (no speaker/session key, a single
    group, a feature undefined for every utterance) are skipped with a
    reason; any other failure propagates.
    """
    splits: list[Split] = []
    skipped: dict[str, str] = {}
    for strategy in [s for s in ALL_STRATEGIES if s in config.strategies]:
        if strategy.startswith("held_out_"):
            key = strategy.removeprefix("held_out_")
            if key not in corpus.grouping:
                skipped[strategy] = f"not every utterance has a {key} id"
                continue
            if len(corpus.groups(key)) < 2:
                skipped[strategy] = f"corpus has a single {key}"
                continue
            splits.extend(split_held_out_group(corpus, key))
        elif strategy == "random":
            splits.extend(split_random(
                corpus,
                _random_split_count(corpus, config.random_splits),
                config.seed,
                target_fraction=config.target_fraction,
                max_fraction=config.validity_band[1],
            ))
        elif strategy.startswith("heuristic_"):
            feature = strategy.removeprefix("heuristic_")
            values = feature_values(features, feature)
            if all(v is None for v in values.values()):
                skipped[strategy] = f"no utterance has a {HEURISTIC_FEATURES[feature]} value"
                continue
            splits.append(split_heuristic(
                corpus, feature, values,
                target_fraction=config.target_fraction,
                band=config.validity_band,
            ))
        elif strategy == "adversarial":
            splits.extend(split_adversarial(
                corpus,
                n_splits=config.adversarial_restarts,
                seed=config.seed,
                max_stall=config.adversarial_max_stall,
                band=config.adversarial_band,
                target_fraction=config.target_fraction,
                validity_band=config.validity_band,
                workers=config.workers,
            ))
    for split in splits:
        problems = validate_split(split, corpus)
        if problems:
            raise SplitError(f"{split.name}: {'; '.join(problems)}")
    for strategy, reason in skipped.items():
        logger.warning("skipping %s: %s", strategy, reason)
    return splits, skipped


def summarize_scores(splits: list[Split], scores: list[SplitScore]) -> list[StrategySummary]:
    """One summary per strategy, in canonical strategy order."""
    by_strategy: dict[str, list[tuple[Split, SplitScore]]] = {}
    split_by_name = {s.name: s for s in splits}
    for score in scores:
        by_strategy.setdefault(score.strategy, []).append((split_by_name[score.split_name], score))
    summaries = []
    for strategy in [s for s in ALL_STRATEGIES if s in by_strategy]:
        pairs = by_strategy[strategy]
        first = pairs[0][0]
        summaries.append(summarize_strategy(
            [score.wer_percent for _, score in pairs],
            strategy=strategy,
            method=first.method,
            threshold=first.threshold if first.method == "heuristic" else None,
        ))
    return summaries


def overlap_report(splits: list[Split]) -> dict | None:
    """Test-set overlap of every non-held-out split with the first random split."""
    randoms = [s for s in splits if s.strategy == "random"]
    if not randoms:
        return None
    reference = randoms[0]
    ratios = {
        s.name: overlap_ratio(reference, s)
        for s in splits
        if s.method != "held_out_group" and s.name != reference.name
    }
    return {
        "reference": reference.name,
        "ratios": ratios,
        "max": max(ratios.values()) if ratios else None,
    }


def duration_block(corpus: Corpus, splits: list[Split]) -> dict:
    """Total corpus duration and mean train/test duration over random splits."""
    randoms = [s for s in splits if s.strategy == "random"]
    block = {"total_s": corpus.total_duration, "mean_train_s": None, "mean_test_s": None}
    if randoms:
        block["mean_train_s"] = float(np.mean([corpus.duration_of(s.train_ids) for s in randoms]))
        block["mean_test_s"] = float(np.mean([corpus.duration_of(s.test_ids) for s in randoms]))
    return block


def adequacy_block(split_wers: dict[str, list[float]]) -> dict | None:
    """How far the random splits, alone or averaged, sit from the held-out mean."""
    held_out = next((s for s in ("held_out_speaker", "held_out_session") if split_wers.get(s)), None)
    randoms = split_wers.get("random")
    if held_out is None or not randoms:
        return None
    held_mean = float(np.mean(split_wers[held_out]))
    random_mean = float(np.mean(randoms))
    return {
        "held_out": held_out,
        "held_out_mean": held_mean,
        "random_mean": random_mean,
        "mean_difference": held_mean - random_mean,
        "max_single_random_deviation": float(max(abs(w - held_mean) for w in randoms)),
    }


def run_regression(
    splits: list[Split],
    features: dict[str, FeatureVector],
    utterance_wers: dict[str, dict[str, float]],
    corpus: Corpus,
    alpha: float = 0.05,
    wer_cap: float = 500.0,
) -> tuple[dict, pd.DataFrame]:
    """
    Backward stepwise regression of utterance WER on feature ratios.

    Ratio columns that are undefined or constant across all rows are left
    out. When the design is rank deficient, the terms the error names are
    removed (never the intercept) and the fit is redone.
    """
    scored = [s for s in splits if s.name in utterance_wers]
    speakers = {utt.id: utt.speaker_id for utt in corpus.utterances}
    table = build_rows(scored, features, utterance_wers, speakers=speakers, wer_cap=wer_cap)
    predictors = [
        p for p in PREDICTORS
        if len({getattr(r, p) for r in table.rows if getattr(r, p) is not None}) > 1
    ]
    dropped = [p for p in PREDICTORS if p not in predictors]
    if not predictors:
        raise DataError("no feature ratio varies across the regression rows")

    notes = []
    controls = list(DEFAULT_CONTROLS)
    while True:
        try:
            result = backward_stepwise(table.rows, predictors, alpha=alpha, controls=controls)
            break
        except RankDeficiencyError as e:
            # dummy columns are named "<control>=<level>"
            named = {column.split("=")[0] for column in e.columns}
            removable = [p for p in predictors if p in named] + [c for c in controls if c in named]
            if not removable or len(removable) == len(predictors) + len(controls):
                raise
            logger.warning("%s; refitting without %s", e, ", ".join(removable))
            notes.append(f"removed for collinearity: {', '.join(removable)}")
            predictors = [p for p in predictors if p not in removable]
            controls = [c for c in controls if c not in removable]
            if not predictors:
                raise

    summary = result.to_dict()
    summary.update({
        "absent_columns": table.absent_columns,
        "dropped_predictors": dropped,
        "n_winsorized": table.n_winsorized,
        "n_incomplete_rows": table.n_incomplete,
        "categorical_controls": [c for c in result.controls if c in CATEGORICAL_CONTROLS],
        "notes": notes,
    })
    return summary, result_frame(result)


class Pipeline:
    """
    Stage runner over one output directory.

    Each stage reads what it needs from memory when an earlier stage ran in
    this process, else from the artifacts on disk.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.completed: list[str] = []
        self._corpus: Corpus | None = None
        self._acoustic: dict[str, dict] | None = None
        self._lm: TrigramLM | None = None
        self._features: dict[str, FeatureVector] | None = None
        self._splits: list[Split] | None = None
        self.skipped: dict[str, str] = {}
        self._scores: list[SplitScore] | None = None
        self._summaries: list[StrategySummary] | None = None
        self._overlap: dict | None = None
        self._regression: dict | None = None
        self._group_regression: dict = {}
        self.stats: dict = {}
        self.lm_stats: dict | None = None

    def path(self, *parts: str) -> Path:
        return self.out.joinpath(*parts)

    def _run(self, stage: str, artifact: Path | None, fn):
        logger.info("stage %s", stage)
        try:
            result = fn()
        except StageError:
            raise
        except Exception as e:
            raise StageError(stage, e, artifact=artifact, completed=self.completed) from e
        self.completed.append(stage)
        return result

    # --- lazy inputs -------------------------------------------------------

    def _artifact(self, stage: str, *parts: str) -> Path:
        path = self.path(*parts)
        if not path.exists():
            raise DataError(f"{path} not found; run the '{stage}' stage first")
        return path

    @property
    def corpus(self) -> Corpus:
        if self._corpus is None:
            self._corpus = load_manifest(self._artifact("ingest", "corpus", "manifest.jsonl"), check_audio=False)
        return self._corpus

    @property
    def features(self) -> dict[str, FeatureVector]:
        if self._features is None:
            self._features = read_feature_sidecar(self._artifact("lm", "features.jsonl"))
        return self._features

    @property
    def splits(self) -> list[Split]:
        if self._splits is None:
            index = json.loads(self._artifact("split", "splits", "index.json").read_text(encoding="utf-8"))
            self.skipped = index.get("skipped", {})
            self._splits = [load_split(self.path("splits", f"{split_filename(n)}.json")) for n in index["splits"]]
        return self._splits

    # --- stages ------------------------------------------------------------

    def ingest(self) -> Corpus:
        def stage():
            lm_text = Path(self.config.lm_text) if self.config.lm_text else None
            corpus = load_manifest(Path(self.config.manifest), lm_text_ref=lm_text)
            save_manifest(corpus, self.path("corpus", "manifest.jsonl"))
            self.stats = {key: corpus_stats(corpus, key).to_dict() for key in corpus.grouping}
            write_json(self.stats, self.path("corpus", "stats.json"))
            self._corpus = corpus
            logger.info("ingested %d utterances, %.1f s", len(corpus), corpus.total_duration)
            return corpus
        return self._run("ingest", Path(self.config.manifest), stage)

    def extract_features(self) -> dict[str, dict]:
        def stage():
            acoustic = extract_acoustic_table(self.corpus, self.config.audio, self.config.workers)
            _write_jsonl([{"id": i, **acoustic[i]} for i in self.corpus.ids], self.path("acoustic.jsonl"))
            self._acoustic = acoustic
            return acoustic
        return self._run("features", self.path("acoustic.jsonl"), stage)

    def train_lm(self) -> TrigramLM:
        def stage():
            sentences = list(read_sentences(Path(self.config.lm_text)))
            lm = train_trigram(sentences)
            lm.save(self.path("lm", "counts.tsv"))
            stats = text_stats(sentences)
            self.lm_stats = {"n_sentences": stats.n_sentences, "n_words": stats.n_words, "n_types": stats.n_types}
            write_json(self.lm_stats, self.path("lm", "text_stats.json"))

            acoustic = self._acoustic
            if acoustic is None:
                acoustic = {r.pop("id"): r for r in _read_jsonl(self._artifact("features", "acoustic.jsonl"))}
            features = build_features(self.corpus, acoustic, lm)
            write_feature_sidecar(features, self.path("features.jsonl"), order=list(self.corpus.ids))
            self._lm = lm
            self._features = features
            return lm
        return self._run("lm", Path(self.config.lm_text), stage)

    def make_splits(self) -> list[Split]:
        def stage():
            splits, skipped = build_splits(self.corpus, self.features, self.config)
            for split in splits:
                save_split(split, self.path("splits", f"{split_filename(split.name)}.json"))
            write_json({"splits": [s.name for s in splits], "skipped": skipped}, self.path("splits", "index.json"))
            self._splits, self.skipped = splits, skipped
            logger.info("%d splits from %d strategies", len(splits), len({s.strategy for s in splits}))
            return splits
        return self._run("split", self.path("splits"), stage)

    def _hypothesis_path(self, split: Split, mock: bool) -> Path:
        name = f"{split_filename(split.name)}.jsonl"
        return self.path("hyps", name) if mock else Path(self.config.hyp_dir) / name

    def score(self) -> list[SplitScore]:
        if (self.config.hyp_dir is None) == (self.config.mock_asr is None):
            raise StageError(
                "score",
                ConfigError("exactly one of a hypothesis directory or a mock-ASR truth file is required"),
                completed=self.completed,
            )
        truth = read_truth(Path(self.config.mock_asr)) if self.config.mock_asr is not None else None
        refs = {utt.id: list(utt.transcript) for utt in self.corpus.utterances}
        scores = []
        for split in tqdm(self.splits, desc="score", disable=None):
            path = self._hypothesis_path(split, mock=truth is not None)
            try:
                if truth is not None:
                    hyps = mock_asr(self.corpus, split, truth.rates, self.config.seed, truth.session_offsets)
                    write_hypotheses(hyps, path, order=list(split.test_ids))
                elif not path.exists():
                    raise DataError(f"no hypothesis file for split {split.name}")
                scores.append(split_wer(split, refs, read_hypotheses(path)))
            except Exception as e:
                raise StageError("score", e, artifact=path, completed=self.completed) from e

        def stage():
            scores_frame(self.splits, scores).to_csv(self.path("scores.csv"), index=False, lineterminator="\n")
            rows = [
                {"split": s.split_name, "id": utt_id, "substitutions": b.substitutions,
                 "deletions": b.deletions, "insertions": b.insertions, "ref_len": b.ref_len,
                 "wer": b.wer_percent}
                for s in scores for utt_id, b in s.per_utterance.items()
            ]
            pd.DataFrame(rows).to_csv(self.path("utterance_wers.csv"), index=False, lineterminator="\n")
            self._scores = scores
            return scores
        return self._run("score", self.path("scores.csv"), stage)

    def _load_scores(self) -> list[SplitScore]:
        frame = pd.read_csv(self.path("utterance_wers.csv"), dtype={"split": str, "id": str})
        by_name = {s.name: s for s in self.splits}
        scores = []
        for name, group in frame.groupby("split", sort=False):
            split = by_name[name]
            per_utterance = {
                row.id: WerBreakdown(int(row.substitutions), int(row.deletions), int(row.insertions), int(row.ref_len))
                for row in group.itertuples(index=False)
            }
            errors = sum(b.errors for b in per_utterance.values())
            ref_len = sum(b.ref_len for b in per_utterance.values())
            scores.append(SplitScore(name, split.strategy, split.method, 100.0 * errors / ref_len,
                                     errors, ref_len, per_utterance))
        order = {s.name: k for k, s in enumerate(self.splits)}
        return sorted(scores, key=lambda s: order[s.split_name])

    @property
    def scores(self) -> list[SplitScore]:
        if self._scores is None:
            self._scores = self._load_scores()
        return self._scores

    def summarize(self) -> list[StrategySummary]:
        def stage():
            summaries = summarize_scores(self.splits, self.scores)
            summary_frame(summaries).to_csv(self.path("summary.csv"), index=False, lineterminator="\n")
            self._summaries = summaries
            return summaries
        return self._run("summaries", self.path("summary.csv"), stage)

    def overlap(self) -> dict | None:
        def stage():
            self._overlap = overlap_report(self.splits)
            return self._overlap
        return self._run("overlap", None, stage)

    def regress(self) -> dict:
        def stage():
            wers = {s.split_name: s.utterance_wers() for s in self.scores}
            summary, table = run_regression(
                self.splits, self.features, wers, self.corpus,
                alpha=self.config.alpha, wer_cap=self.config.wer_cap,
            )
            write_json(summary, self.path("regression.json"))
            table.to_csv(self.path("regression.csv"), index=False, lineterminator="\n")
            self._regression = summary

            split_by_name = {s.name: s for s in self.splits}
            for key in ("speaker", "session"):
                held = [s for s in self.scores if s.strategy == f"held_out_{key}"]
                if len(held) < 3:
                    continue
                totals = group_durations(self.corpus, key)
                group_wers = {split_by_name[s.split_name].params["group"]: s.wer_percent for s in held}
                self._group_regression[key] = group_duration_regression(totals, group_wers).to_dict()
            return summary
        return self._run("regression", self.path("regression.json"), stage)

    def report(self) -> ExperimentReport:
        def stage():
            split_by_name = {s.name: s for s in self.splits}
            split_wers: dict[str, list[float]] = {}
            split_rows = []
            for score in self.scores:
                split = split_by_name[score.split_name]
                split_wers.setdefault(score.strategy, []).append(score.wer_percent)
                split_rows.append({
                    "name": split.name,
                    "strategy": split.strategy,
                    "test_fraction": split.test_fraction,
                    "threshold": split.threshold,
                    "achieved_distance": split.achieved_distance,
                    "wer": score.wer_percent,
                    "warnings": list(split.warnings),
                    "flags": list(split.flags),
                })
            if not self.stats:
                self.stats = {key: corpus_stats(self.corpus, key).to_dict() for key in self.corpus.grouping}
            report = ExperimentReport(
                corpus_name=self.corpus.name,
                seed=self.config.seed,
                summaries=self._summaries if self._summaries is not None else summarize_scores(self.splits, self.scores),
                split_wers=split_wers,
                splits=split_rows,
                corpus={"n_utterances": len(self.corpus), "total_duration_s": self.corpus.total_duration},
                stats=self.stats,
                lm_text=self.lm_stats,
                durations=duration_block(self.corpus, self.splits),
                overlap=self._overlap,
                regression=self._regression,
                group_regression=self._group_regression,
                adequacy=adequacy_block(split_wers),
                skipped=dict(self.skipped),
                stages=self.completed + ["report"],
                config_digest=self.config.digest(),
            )
            write_report(report, self.path("report.json"))
            return report
        return self._run("report", self.path("report.json"), stage)


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """
    Run every stage in order and write all artifacts.

    Raises:
        ConfigError: Invalid configuration (before any stage runs).
        StageError: A stage failed; carries the stage, artifact and the
            stages already completed.
    """
    config.validate()
    pipeline = Pipeline(config)
    pipeline.ingest()
    pipeline.extract_features()
    pipeline.train_lm()
    pipeline.make_splits()
    pipeline.score()
    pipeline.summarize()
    pipeline.overlap()
    pipeline.regress()
    report = pipeline.report()

    if config.plot:
        from plots import emit_plots

        emit_plots(report, Path(config.output_dir))
    logger.info("finished: %d strategies, %d splits", len(report.summaries), len(report.splits))
    return report


def format_report(report: ExperimentReport) -> str:
    """Human-readable digest of a report for the terminal."""
    lines = [f"corpus: {report.corpus_name}  (seed {report.seed})"]
    if report.durations:
        d = report.durations
        parts = [f"total {d['total_s'] / 3600:.2f} h"]
        if d.get("mean_train_s") is not None:
            parts.append(f"train {d['mean_train_s'] / 3600:.2f} h")
            parts.append(f"test {d['mean_test_s'] / 3600:.2f} h")
        lines.append("duration: " + ", ".join(parts))
    lines.append("")
    lines.append(format_summary_table(report.summaries))
    if report.skipped:
        lines.append("")
        for strategy, reason in report.skipped.items():
            lines.append(f"skipped {strategy}: {reason}")
    if report.overlap and report.overlap.get("max") is not None:
        lines.append(f"\nmax test overlap with {report.overlap['reference']}: {report.overlap['max']:.2f}")
    if report.adequacy:
        a = report.adequacy
        lines.append(
            f"{a['held_out']} mean {a['held_out_mean']:.2f} vs random mean {a['random_mean']:.2f} "
            f"(max single random split deviation {a['max_single_random_deviation']:.2f})"
        )
    if report.regression:
        lines.append("\nregression (surviving predictors):")
        lines.append(format_result(RegressionResult.from_dict(report.regression)))
    return "\n".join(lines)

