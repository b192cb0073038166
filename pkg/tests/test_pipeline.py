#!/usr/bin/env python3
"""
Tests for pipeline and pipeline_cli modules.

Run with: pytest tests/test_pipeline.py -v
"""

import json
import sys
from pathlib import Path

import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import pipeline_cli
from config import ALL_STRATEGIES
from corpus import FeatureVector
from errors import ConfigError, StageError
from pipeline import (
    ExperimentConfig,
    ExperimentReport,
    Pipeline,
    adequacy_block,
    build_splits,
    format_report,
    overlap_report,
    read_feature_sidecar,
    read_report,
    run_experiment,
    write_feature_sidecar,
    write_report,
)
from regression import Coefficient, RegressionResult, format_result
from simkit import SimConfig, write_simulation
from splitters import Split, feature_values, validate_split

TEXT_STRATEGIES = [s for s in ALL_STRATEGIES if s not in ("heuristic_pitch", "heuristic_intensity")]


def _experiment(sim_dir, out: Path, **kwargs) -> ExperimentConfig:
    params = {
        "manifest": sim_dir["manifest"],
        "lm_text": sim_dir["lm_text"],
        "output_dir": out,
        "mock_asr": sim_dir["truth"],
        "seed": 7,
        "adversarial_restarts": 2,
        "adversarial_max_stall": 300,
        "plot": False,
    }
    params.update(kwargs)
    return ExperimentConfig(**params)


def _split(name, strategy, method, test_ids, train_ids):
    return Split(name=name, strategy=strategy, method=method, params={}, seed=0,
                 train_ids=tuple(train_ids), test_ids=tuple(test_ids))


class TestExperimentConfig:
    """Tests for ExperimentConfig validation and digest."""

    def test_needs_one_hypothesis_source(self, sim_dir, tmp_path):
        with pytest.raises(ConfigError, match="exactly one"):
            _experiment(sim_dir, tmp_path / "out", mock_asr=None).validate()
        with pytest.raises(ConfigError, match="exactly one"):
            _experiment(sim_dir, tmp_path / "out", hyp_dir=tmp_path).validate()

    def test_missing_manifest(self, sim_dir, tmp_path):
        with pytest.raises(ConfigError, match="manifest"):
            _experiment(sim_dir, tmp_path / "out", manifest=tmp_path / "nope.jsonl").validate()

    def test_unknown_strategy(self, sim_dir, tmp_path):
        with pytest.raises(ConfigError, match="unknown strategies"):
            _experiment(sim_dir, tmp_path / "out", strategies=["random", "coin_flip"]).validate()

    def test_digest_ignores_output_dir(self, sim_dir, tmp_path):
        first = _experiment(sim_dir, tmp_path / "a").digest()
        assert first == _experiment(sim_dir, tmp_path / "b").digest()
        assert first != _experiment(sim_dir, tmp_path / "a", seed=8).digest()

    def test_digest_tracks_hypothesis_files(self, sim_dir, tmp_path):
        hyps = tmp_path / "hyps"
        hyps.mkdir()
        hyp_file = hyps / "random-000.jsonl"
        hyp_file.write_text('{"id": "u1", "hypothesis": "a b"}\n', encoding="utf-8")
        config = _experiment(sim_dir, tmp_path / "out", mock_asr=None, hyp_dir=hyps)
        before = config.digest()
        hyp_file.write_text('{"id": "u1", "hypothesis": "a c"}\n', encoding="utf-8")
        assert config.digest() != before


class TestRunExperiment:
    """End-to-end runs on a simulated corpus with the mock recognizer."""

    @pytest.mark.slow
    def test_every_text_strategy_reported(self, sim_dir, tmp_path):
        out = tmp_path / "out"
        report = run_experiment(_experiment(sim_dir, out))

        assert [s.strategy for s in report.summaries] == TEXT_STRATEGIES
        assert set(report.skipped) == {"heuristic_pitch", "heuristic_intensity"}
        by_strategy = {s.strategy: s for s in report.summaries}
        assert by_strategy["held_out_speaker"].n_splits == 4
        assert by_strategy["held_out_session"].n_splits == 2
        assert by_strategy["random"].n_splits == 4
        assert by_strategy["adversarial"].n_splits == 2
        assert by_strategy["heuristic_duration"].threshold is not None
        assert report.stages[-1] == "report"
        assert report.regression is not None
        assert "speaker" in report.group_regression
        assert report.adequacy["held_out"] == "held_out_speaker"
        for name in ("report.json", "scores.csv", "summary.csv", "regression.json", "features.jsonl"):
            assert (out / name).exists()
        assert read_report(out / "report.json").to_dict() == report.to_dict()

    @pytest.mark.slow
    def test_rerun_is_byte_identical(self, sim_dir, tmp_path):
        for name in ("a", "b"):
            run_experiment(_experiment(sim_dir, tmp_path / name, plot=True))
        for artifact in ("report.json", "scores.csv", "summary.csv", "regression.json",
                         "splits/index.json", "wer_manifest.svg"):
            assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes(), artifact

    @pytest.mark.slow
    def test_random_only(self, sim_dir, tmp_path):
        report = run_experiment(_experiment(sim_dir, tmp_path / "out", strategies=["random"], random_splits=6))
        assert len(report.summaries) == 1
        assert report.summaries[0].n_splits == 6

    @pytest.mark.slow
    def test_every_split_is_valid(self, sim_dir, tmp_path):
        """Every stored split partitions the corpus; thresholds separate test from train."""
        config = _experiment(sim_dir, tmp_path / "out", strategies=TEXT_STRATEGIES)
        report = run_experiment(config)
        stored = Pipeline(config)
        corpus, features = stored.corpus, stored.features
        low, high = config.validity_band

        assert stored.splits
        for split in stored.splits:
            assert validate_split(split, corpus) == [], split.name
            if split.method in ("random", "adversarial"):
                assert low <= split.test_fraction <= high, split.name
            if split.method == "heuristic":
                test = set(split.test_ids)
                values = feature_values(features, split.params["feature"])
                for utt_id, value in values.items():
                    if value is not None:
                        assert (utt_id in test) == (value >= split.threshold), (split.name, utt_id)
        assert report.overlap["reference"] == "random-000"
        assert report.adequacy is None
        assert report.skipped == {}

    @pytest.mark.slow
    def test_audio_corpus_runs_acoustic_heuristics(self, tmp_path):
        config = SimConfig(n_speakers=2, utterances_per_speaker=6, min_tokens=4, max_tokens=8,
                           write_audio=True, lm_sentences=100, seed=3)
        paths = write_simulation(config, tmp_path / "sim")
        report = run_experiment(_experiment(paths, tmp_path / "out", workers=2))
        strategies = [s.strategy for s in report.summaries]
        assert "heuristic_pitch" in strategies
        assert "heuristic_intensity" in strategies
        assert "held_out_session" in report.skipped

    def test_missing_hypothesis_file(self, sim_dir, tmp_path):
        hyps = tmp_path / "hyps"
        hyps.mkdir()
        experiment = _experiment(sim_dir, tmp_path / "out", mock_asr=None, hyp_dir=hyps,
                                 strategies=["held_out_speaker"])
        with pytest.raises(StageError) as excinfo:
            run_experiment(experiment)
        error = excinfo.value
        assert error.stage == "score"
        assert error.completed == ["ingest", "features", "lm", "split"]
        assert error.artifact == hyps / "held_out_speaker-spk001.jsonl"
        assert error.exit_code == 3

    def test_invalid_config_fails_before_any_stage(self, sim_dir, tmp_path):
        out = tmp_path / "out"
        with pytest.raises(ConfigError):
            run_experiment(_experiment(sim_dir, out, strategies=[]))
        assert not out.exists()


class TestStages:
    """Tests for standalone stages and helpers."""

    def test_stage_needs_previous_artifact(self, sim_dir, tmp_path):
        pipeline = Pipeline(_experiment(sim_dir, tmp_path / "out"))
        with pytest.raises(StageError) as excinfo:
            pipeline.make_splits()
        assert "ingest" in str(excinfo.value)
        assert excinfo.value.completed == []

    def test_feature_sidecar_round_trip(self, tmp_path):
        features = {
            "u2": FeatureVector(duration_s=1.5, avg_pitch_hz=None, avg_intensity_db=61.25,
                                n_tokens=3, n_types=2, perplexity=88.5, oov_rate=0.0),
            "u1": FeatureVector(duration_s=2.0, avg_pitch_hz=143.0, avg_intensity_db=58.0,
                                n_tokens=5, n_types=5, perplexity=None, oov_rate=1.0),
        }
        path = tmp_path / "features.jsonl"
        write_feature_sidecar(features, path)
        assert read_feature_sidecar(path) == features
        assert [json.loads(line)["id"] for line in path.read_text().splitlines()] == ["u1", "u2"]

    def test_build_splits_skips_unsupported(self, build_corpus, tmp_path):
        specs = [(f"u{k:02d}", "a b c" if k % 2 else "d e", 1.0 + k) for k in range(12)]
        corpus = build_corpus(specs)
        features = {
            utt.id: FeatureVector(duration_s=utt.duration_s, avg_pitch_hz=None, avg_intensity_db=None,
                                  n_tokens=len(utt.transcript), n_types=len(utt.transcript),
                                  perplexity=10.0 + k, oov_rate=0.0)
            for k, utt in enumerate(corpus.utterances)
        }
        config = ExperimentConfig(manifest=None, lm_text=None, output_dir=tmp_path,
                                  strategies=["held_out_speaker", "random", "heuristic_pitch"], seed=1)
        splits, skipped = build_splits(corpus, features, config)
        assert set(skipped) == {"held_out_speaker", "heuristic_pitch"}
        assert "speaker" in skipped["held_out_speaker"]
        assert len(splits) == 10
        assert all(s.strategy == "random" for s in splits)

    def test_overlap_report(self):
        ids = [f"u{k}" for k in range(6)]
        splits = [
            _split("spk1", "held_out_speaker", "held_out_group", ids[:2], ids[2:]),
            _split("random-000", "random", "random", ids[:2], ids[2:]),
            _split("random-001", "random", "random", ids[1:3], ids[:1] + ids[3:]),
            _split("heuristic_duration", "heuristic_duration", "heuristic", ids[4:], ids[:4]),
        ]
        report = overlap_report(splits)
        assert report["reference"] == "random-000"
        assert report["ratios"] == {"random-001": 0.5, "heuristic_duration": 0.0}
        assert report["max"] == 0.5

    def test_overlap_without_random(self):
        assert overlap_report([_split("spk1", "held_out_speaker", "held_out_group", ["a"], ["b"])]) is None

    def test_adequacy_block(self):
        block = adequacy_block({"held_out_speaker": [40.0, 50.0, 60.0], "random": [30.0, 45.0]})
        assert block["held_out_mean"] == 50.0
        assert block["random_mean"] == 37.5
        assert block["mean_difference"] == 12.5
        assert block["max_single_random_deviation"] == 20.0
        assert adequacy_block({"random": [30.0]}) is None


class TestReport:
    """Tests for ExperimentReport persistence and formatting."""

    def _report(self):
        from scoring import summarize_strategy

        return ExperimentReport(
            corpus_name="sim",
            seed=7,
            summaries=[
                summarize_strategy([30.0, 40.0], strategy="random", method="random"),
                summarize_strategy([55.0], strategy="heuristic_duration", method="heuristic", threshold=3.5),
            ],
            split_wers={"random": [30.0, 40.0], "heuristic_duration": [55.0]},
            durations={"total_s": 7200.0, "mean_train_s": 5760.0, "mean_test_s": 1440.0},
            skipped={"heuristic_pitch": "no utterance has a pitch value"},
            config_digest="abc",
        )

    def test_round_trip(self, tmp_path):
        report = self._report()
        write_report(report, tmp_path / "report.json")
        assert read_report(tmp_path / "report.json").to_dict() == report.to_dict()

    def test_format_report(self):
        text = format_report(self._report())
        assert "corpus: sim" in text
        assert "total 2.00 h" in text
        assert "skipped heuristic_pitch" in text
        assert "heuristic_duration" in text

    def test_format_report_uses_regression_table(self):
        report = self._report()
        result = RegressionResult(
            predictors=["duration_ratio"],
            coefficients={
                "Intercept": Coefficient(coef=30.0, ci_low=28.0, ci_high=32.0, p_value=0.0001),
                "duration_ratio": Coefficient(coef=12.5, ci_low=8.0, ci_high=17.0, p_value=0.002),
            },
            r_squared=0.41,
            n_rows=120,
            n_excluded=3,
        )
        report.regression = result.to_dict()
        text = format_report(report)
        assert format_result(result) in text
        assert "excluded = 3" in text


class TestCli:
    """Tests for pipeline_cli.main exit codes and stages."""

    @pytest.mark.slow
    def test_run_from_config(self, config_file, tmp_path, capsys):
        assert pipeline_cli.main(["run", "--config", str(config_file)]) == 0
        assert (tmp_path / "out" / "report.json").exists()
        assert not (tmp_path / "out" / "wer_manifest.svg").exists()
        assert "corpus: manifest" in capsys.readouterr().out

    def test_missing_config_file(self, tmp_path):
        assert pipeline_cli.main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2

    def test_no_hypothesis_source(self, sim_dir, tmp_path):
        argv = ["run", "--manifest", str(sim_dir["manifest"]), "--lm-text", str(sim_dir["lm_text"]),
                "--out", str(tmp_path / "out")]
        assert pipeline_cli.main(argv) == 2

    def test_bad_manifest_is_data_error(self, sim_dir, tmp_path, manifest_writer):
        manifest = manifest_writer(tmp_path / "bad.jsonl", [{"id": "u1", "transcript": "a", "duration_s": 0}])
        argv = ["run", "--manifest", str(manifest), "--lm-text", str(sim_dir["lm_text"]),
                "--mock-asr", str(sim_dir["truth"]), "--out", str(tmp_path / "out"), "--no-plot"]
        assert pipeline_cli.main(argv) == 3

    def test_internal_error(self, config_file, monkeypatch):
        def boom(config):
            raise RuntimeError("boom")

        monkeypatch.setattr(pipeline_cli, "run_experiment", boom)
        assert pipeline_cli.main(["run", "--config", str(config_file)]) == 4

    def test_simulate(self, tmp_path):
        out = tmp_path / "sim"
        assert pipeline_cli.main(["simulate", "--out", str(out), "--speakers", "3", "--utterances", "5"]) == 0
        assert (out / "manifest.jsonl").exists()
        assert len((out / "manifest.jsonl").read_text().splitlines()) == 15

    @pytest.mark.slow
    def test_stages_match_full_run(self, sim_dir, tmp_path, capsys):
        out = str(tmp_path / "staged")
        strategies = ["held_out_speaker", "random", "heuristic_duration"]
        assert pipeline_cli.main(["ingest", "--manifest", str(sim_dir["manifest"]), "--out", out]) == 0
        assert pipeline_cli.main(["features", "--out", out]) == 0
        assert pipeline_cli.main(["lm", "--lm-text", str(sim_dir["lm_text"]), "--out", out]) == 0
        assert pipeline_cli.main(["split", "--out", out, "--seed", "7", "--strategies", *strategies]) == 0
        assert pipeline_cli.main(["score", "--out", out, "--seed", "7", "--mock-asr", str(sim_dir["truth"])]) == 0
        assert pipeline_cli.main(["regress", "--out", out]) == 0
        assert "excluded =" in capsys.readouterr().out

        full = tmp_path / "full"
        run_experiment(_experiment(sim_dir, full, strategies=strategies))
        for artifact in ("features.jsonl", "splits/index.json", "scores.csv", "summary.csv", "regression.json"):
            assert (tmp_path / "staged" / artifact).read_bytes() == (full / artifact).read_bytes(), artifact

    def test_plot_without_report(self, tmp_path):
        assert pipeline_cli.main(["plot", "--out", str(tmp_path)]) == 3


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
