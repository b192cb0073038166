#!/usr/bin/env python3
"""
split-bench command line: run the partitioning experiment or any stage of it.

Usage:
    # Full experiment on a real corpus with recognizer output per split
    python pipeline_cli.py run --manifest data/manifest.jsonl --lm-text data/lm.txt \\
        --hyp-dir hyps/ --out out/

    # Synthetic corpus, then the full experiment with the mock recognizer
    python pipeline_cli.py simulate --out sim/ --speakers 20
    python pipeline_cli.py run --manifest sim/manifest.jsonl --lm-text sim/lm.txt \\
        --mock-asr sim/truth.json --out out/

    # Stages one at a time (each reads the previous stage's artifacts in --out)
    python pipeline_cli.py ingest --manifest data/manifest.jsonl --out out/
    python pipeline_cli.py features --out out/
    python pipeline_cli.py lm --lm-text data/lm.txt --out out/
    python pipeline_cli.py split --strategies random adversarial --out out/
    python pipeline_cli.py score --hyp-dir hyps/ --out out/
    python pipeline_cli.py regress --out out/
    python pipeline_cli.py plot --out out/

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.
"""

import argparse
import logging
import sys
from pathlib import Path

from config import ALL_STRATEGIES, Config, setup_logging
from errors import ConfigError, SplitBenchError
from pipeline import ExperimentConfig, Pipeline, format_report, read_report, run_experiment
from plots import emit_plots
from regression import RegressionResult, format_result
from scoring import format_summary_table
from simkit import SimConfig, write_simulation

logger = logging.getLogger(__name__)


def _overrides(args: argparse.Namespace) -> dict:
    """Translate command-line flags into config overrides."""
    overrides: dict = {}
    simple = {
        "manifest": "manifest",
        "lm_text": "lm_text",
        "out": "output_dir",
        "seed": "seed",
        "strategies": "strategies",
        "workers": "workers",
        "plot": "plot",
    }
    for flag, key in simple.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    split = {}
    if getattr(args, "target_fraction", None) is not None:
        split["target_fraction"] = args.target_fraction
    if getattr(args, "adversarial_restarts", None) is not None:
        split["adversarial_restarts"] = args.adversarial_restarts
    if getattr(args, "random_splits", None) is not None:
        split["random_splits"] = args.random_splits
    if split:
        overrides["split"] = split
    hyp_dir, mock = getattr(args, "hyp_dir", None), getattr(args, "mock_asr", None)
    if hyp_dir is not None or mock is not None:
        overrides["hypotheses"] = {"hyp_dir": hyp_dir, "mock_asr": mock}
    if getattr(args, "log_level", None):
        overrides["logging"] = {"level": args.log_level}
    return overrides


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required for this command")
    if isinstance(value, Path) and not value.exists():
        raise ConfigError(f"{flag}: {value} not found")


def cmd_ingest(pipeline: Pipeline):
    _require(pipeline.config.manifest, "--manifest")
    corpus = pipeline.ingest()
    print(f"Ingested {len(corpus)} utterances ({corpus.total_duration / 3600:.2f} h) from {pipeline.config.manifest}")
    for key, stats in pipeline.stats.items():
        std = f"{stats['std_duration_per_group']:.1f}" if stats["std_defined"] else "-"
        print(
            f"  {key}: {stats['n_groups']} groups, mean {stats['mean_duration_per_group']:.1f} s, "
            f"std {std} s, range {stats['range_duration_per_group']:.1f} s"
        )
    if corpus.heuristic_only:
        print("  no complete speaker/session key: held-out strategies unavailable")


def cmd_features(pipeline: Pipeline):
    acoustic = pipeline.extract_features()
    voiced = sum(1 for v in acoustic.values() if v["avg_pitch_hz"] is not None)
    print(f"Acoustic features for {len(acoustic)} utterances ({voiced} with a pitch value)")


def cmd_lm(pipeline: Pipeline):
    _require(pipeline.config.lm_text, "--lm-text")
    lm = pipeline.train_lm()
    stats = pipeline.lm_stats
    print(f"Trained trigram LM: {stats['n_sentences']} sentences, {stats['n_words']} words, "
          f"{len(lm.vocab)} vocabulary entries")
    print(f"  counts: {pipeline.path('lm', 'counts.tsv')}")
    print(f"  features: {pipeline.path('features.jsonl')}")


def cmd_split(pipeline: Pipeline):
    splits = pipeline.make_splits()
    by_strategy: dict[str, int] = {}
    for split in splits:
        by_strategy[split.strategy] = by_strategy.get(split.strategy, 0) + 1
    print(f"Wrote {len(splits)} splits to {pipeline.path('splits')}")
    for strategy, n in by_strategy.items():
        print(f"  {strategy}: {n}")
    for strategy, reason in pipeline.skipped.items():
        print(f"  skipped {strategy}: {reason}")
    for split in splits:
        for warning in split.warnings:
            print(f"  warning [{split.name}]: {warning}", file=sys.stderr)


def cmd_score(pipeline: Pipeline):
    pipeline.score()
    summaries = pipeline.summarize()
    print(format_summary_table(summaries))


def cmd_regress(pipeline: Pipeline):
    summary = pipeline.regress()
    print(format_result(RegressionResult.from_dict(summary)))
    for note in summary["notes"]:
        print(note)


def cmd_run(experiment: ExperimentConfig):
    report = run_experiment(experiment)
    print(format_report(report))
    print(f"\nArtifacts in {experiment.output_dir}")


def cmd_plot(out_dir: Path, report_path: Path | None):
    path = report_path or out_dir / "report.json"
    paths = emit_plots(read_report(path), out_dir)
    for p in paths:
        print(f"Wrote {p}")


def cmd_simulate(args: argparse.Namespace, config: Config):
    params = dict(config.get("simulation") or {})
    for flag, key in (
        ("speakers", "n_speakers"),
        ("utterances", "utterances_per_speaker"),
        ("base_error", "base_error_rate"),
        ("error_std", "error_std"),
        ("seed", "seed"),
        ("session_offsets", "session_offsets"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            params[key] = value
    if args.audio:
        params["write_audio"] = True
    sim_config = SimConfig.from_dict(params)
    out_dir = args.out or config.output_dir
    paths = write_simulation(sim_config, out_dir)
    print(f"Simulated {sim_config.n_speakers} speakers into {out_dir}")
    for name, path in paths.items():
        print(f"  {name}: {path}")


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", "-c", type=Path, help="YAML config file")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level")


def _add_experiment(parser: argparse.ArgumentParser, inputs: bool = True, splits: bool = True, hyps: bool = True):
    if inputs:
        parser.add_argument("--manifest", type=Path, help="JSON Lines manifest")
        parser.add_argument("--lm-text", dest="lm_text", type=Path, help="External LM training text")
        parser.add_argument("--workers", type=int, help="Worker processes for per-utterance work")
    if splits:
        parser.add_argument("--strategies", nargs="+", choices=ALL_STRATEGIES, help="Strategies to run")
        parser.add_argument("--seed", type=int, help="Master seed")
        parser.add_argument("--target-fraction", dest="target_fraction", type=float,
                            help="Target test share of the duration")
        parser.add_argument("--adversarial-restarts", dest="adversarial_restarts", type=int,
                            help="Adversarial splits (one restart each)")
        parser.add_argument("--random-splits", dest="random_splits", type=int,
                            help="Random splits (default: one per speaker/session)")
    if hyps:
        source = parser.add_mutually_exclusive_group()
        source.add_argument("--hyp-dir", dest="hyp_dir", type=Path, help="Directory of <split>.jsonl hypotheses")
        source.add_argument("--mock-asr", dest="mock_asr", type=Path, help="Ground-truth JSON for the mock recognizer")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Compare train/test partitioning strategies for small speech corpora",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Simulate a corpus and run every strategy on it
  python pipeline_cli.py simulate --out sim/
  python pipeline_cli.py run --manifest sim/manifest.jsonl --lm-text sim/lm.txt --mock-asr sim/truth.json

  # Only random and held-out-speaker splits, fixed seed
  python pipeline_cli.py run -c config.yaml --strategies held_out_speaker random --seed 7

  # Re-draw the strip plot from an existing report
  python pipeline_cli.py plot --out out/
""",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("ingest", help="Validate a manifest and write corpus statistics")
    _add_common(p)
    _add_experiment(p, splits=False, hyps=False)

    p = subparsers.add_parser("features", help="Extract duration, pitch and intensity")
    _add_common(p)
    _add_experiment(p, splits=False, hyps=False)

    p = subparsers.add_parser("lm", help="Train the trigram LM and complete the feature sidecar")
    _add_common(p)
    _add_experiment(p, splits=False, hyps=False)

    p = subparsers.add_parser("split", help="Generate splits for the enabled strategies")
    _add_common(p)
    _add_experiment(p, inputs=False, hyps=False)

    p = subparsers.add_parser("score", help="Score every split and write the WER table")
    _add_common(p)
    _add_experiment(p, inputs=False, splits=False)
    p.add_argument("--seed", type=int, help="Master seed (mock recognizer)")

    p = subparsers.add_parser("regress", help="Stepwise regression of utterance WER")
    _add_common(p)

    p = subparsers.add_parser("simulate", help="Write a synthetic corpus with planted speaker effects")
    _add_common(p)
    p.add_argument("--speakers", type=int, help="Number of speakers")
    p.add_argument("--utterances", type=int, help="Utterances per speaker")
    p.add_argument("--base-error", dest="base_error", type=float, help="Mean speaker error rate")
    p.add_argument("--error-std", dest="error_std", type=float, help="Std of speaker error rates")
    p.add_argument("--session-offsets", dest="session_offsets", type=float, nargs="+",
                   help="Per-session error-rate offsets (creates sessions)")
    p.add_argument("--seed", type=int, help="Simulation seed")
    p.add_argument("--audio", action="store_true", help="Also write synthetic WAV files")

    p = subparsers.add_parser("run", help="Run every stage and write the report")
    _add_common(p)
    _add_experiment(p)
    plot = p.add_mutually_exclusive_group()
    plot.add_argument("--plot", dest="plot", action="store_true", default=None, help="Write the strip plot")
    plot.add_argument("--no-plot", dest="plot", action="store_false", help="Skip the strip plot")

    p = subparsers.add_parser("plot", help="Draw the strip plot from report.json")
    _add_common(p)
    p.add_argument("--report", type=Path, help="Report to plot (default: <out>/report.json)")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        if args.config is not None and not args.config.exists():
            raise ConfigError(f"config file not found: {args.config}")
        config = Config(args.config, _overrides(args))
        setup_logging(config.log_level, config.log_file)

        if args.command == "simulate":
            cmd_simulate(args, config)
        elif args.command == "plot":
            cmd_plot(config.output_dir, args.report)
        elif args.command == "run":
            cmd_run(ExperimentConfig.from_config(config))
        else:
            pipeline = Pipeline(ExperimentConfig.from_config(config, validate=False))
            {
                "ingest": cmd_ingest,
                "features": cmd_features,
                "lm": cmd_lm,
                "split": cmd_split,
                "score": cmd_score,
                "regress": cmd_regress,
            }[args.command](pipeline)
    except SplitBenchError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("internal error")
        print(f"Internal error: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
