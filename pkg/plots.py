#!/usr/bin/env python3
"""
Strip plots of split WERs per strategy.

One SVG per corpus: strategies on the x axis, one small marker per split
WER, a large black marker for the strategy mean. Points are spread
horizontally by fixed offsets rather than random jitter, and the SVG is
written without a date and with a fixed hash salt, so the same report
always renders to the same bytes.

Each strategy's points and mean live in their own SVG groups with ids
"points-<strategy>" and "mean-<strategy>".
"""

import logging
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from errors import DataError  # noqa: E402

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "split-bench"
POINT_SPREAD = 0.3
STRATEGY_LABELS = {
    "held_out_speaker": "held-out speaker",
    "held_out_session": "held-out session",
    "random": "random",
    "heuristic_duration": "duration",
    "heuristic_pitch": "pitch",
    "heuristic_intensity": "intensity",
    "heuristic_n_tokens": "# tokens",
    "heuristic_n_types": "# types",
    "heuristic_perplexity": "perplexity",
    "adversarial": "adversarial",
}


def _offsets(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return np.linspace(-POINT_SPREAD / 2, POINT_SPREAD / 2, n)


def plot_filename(corpus_name: str) -> str:
    return "wer_" + re.sub(r"[^A-Za-z0-9._-]", "_", corpus_name) + ".svg"


def strip_plot(split_wers: dict[str, list[float]], title: str, path: Path) -> Path:
    """
    Render one strip plot.

    Raises:
        DataError: No strategy has a WER.
    """
    strategies = [s for s, wers in split_wers.items() if wers]
    if not strategies:
        raise DataError("nothing to plot: no strategy has a split WER")

    with plt.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(strategies) + 1.5), 4.0))
        for x, strategy in enumerate(strategies):
            wers = np.asarray(split_wers[strategy], dtype=float)
            ax.plot(
                x + _offsets(len(wers)), wers,
                linestyle="none", marker="o", markersize=4, alpha=0.6, color="tab:blue",
                gid=f"points-{strategy}",
            )
            ax.plot(
                [x], [wers.mean()],
                linestyle="none", marker="o", markersize=10, color="black",
                gid=f"mean-{strategy}",
            )
        ax.set_xticks(range(len(strategies)))
        ax.set_xticklabels([STRATEGY_LABELS.get(s, s) for s in strategies], rotation=30, ha="right")
        ax.set_xlim(-0.6, len(strategies) - 0.4)
        ax.set_ylabel("WER (%)")
        ax.set_title(title)
        ax.grid(axis="y", alpha=0.3)
        fig.tight_layout()

        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    logger.info("wrote %s", path)
    return path


def emit_plots(reports, out_dir: Path) -> list[Path]:
    """
    One SVG strip plot per corpus report.

    Args:
        reports: An ExperimentReport or a list of them.
        out_dir: Directory the SVG files are written to.

    Raises:
        DataError: Empty report (no strategy with a WER).
    """
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    if not reports:
        raise DataError("no report to plot")
    paths = []
    for report in reports:
        path = Path(out_dir) / plot_filename(report.corpus_name)
        paths.append(strip_plot(report.split_wers, report.corpus_name, path))
    return paths
