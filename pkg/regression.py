#!/usr/bin/env python3
"""
Regression of per-utterance WER on train-normalized features.

For every split and every test utterance, each feature is divided by its
mean over that split's training utterances. WER is then regressed on the
ratios with the token count, type count, split method and (when known)
speaker as controls. Backward stepwise selection drops the least
significant ratio until every remaining one has p <= alpha.

The estimator is fixed-effects OLS with method/speaker dummies. It stands
in for a mixed-effects model with per-speaker random intercepts and slopes;
every report states this.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
import statsmodels.api as sm

from corpus import FeatureVector
from errors import DataError, RankDeficiencyError, SplitError
from splitters import Split

logger = logging.getLogger(__name__)

RATIO_FEATURES = {
    "duration_ratio": "duration_s",
    "pitch_ratio": "avg_pitch_hz",
    "intensity_ratio": "avg_intensity_db",
    "perplexity_ratio": "perplexity",
    "oov_ratio": "oov_rate",
}
PREDICTORS = tuple(RATIO_FEATURES)
NUMERIC_CONTROLS = ("n_tokens", "n_types")
CATEGORICAL_CONTROLS = ("method", "speaker_id")
DEFAULT_CONTROLS = NUMERIC_CONTROLS + CATEGORICAL_CONTROLS
WER_CAP = 500.0
ALPHA = 0.05

ESTIMATOR_NOTE = (
    "Estimator: fixed-effects OLS with split-method and speaker dummies, "
    "approximating a mixed-effects model with per-speaker random intercepts and slopes."
)
STARS_LEGEND = "* p < 0.05, ** p < 0.01, *** p < 0.001"


@dataclass(frozen=True)
class RegressionRow:
    utterance_id: str
    split_id: str
    wer: float
    duration_ratio: float | None
    pitch_ratio: float | None
    intensity_ratio: float | None
    perplexity_ratio: float | None
    oov_ratio: float | None
    n_tokens: int
    n_types: int
    method: str
    speaker_id: str | None = None


@dataclass
class RowTable:
    """Regression rows plus what was set aside while building them."""

    rows: list[RegressionRow]
    absent_columns: dict[str, dict[str, str]] = field(default_factory=dict)
    n_winsorized: int = 0
    n_incomplete: int = 0

    def frame(self) -> pd.DataFrame:
        return rows_frame(self.rows)


@dataclass(frozen=True)
class Coefficient:
    coef: float
    ci_low: float
    ci_high: float
    p_value: float

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)


@dataclass
class RegressionResult:
    predictors: list[str]
    coefficients: dict[str, Coefficient]
    r_squared: float
    n_rows: int
    eliminated: list[str] = field(default_factory=list)
    controls: list[str] = field(default_factory=list)
    n_excluded: int = 0
    residuals: np.ndarray = field(default=None, repr=False)
    design: pd.DataFrame = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "predictors": list(self.predictors),
            "coefficients": {
                name: {**asdict(c), "stars": c.stars} for name, c in self.coefficients.items()
            },
            "r_squared": self.r_squared,
            "n_rows": self.n_rows,
            "n_excluded": self.n_excluded,
            "eliminated": list(self.eliminated),
            "controls": list(self.controls),
            "estimator": ESTIMATOR_NOTE,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RegressionResult":
        """Rebuild from to_dict() output; residuals and design are not stored."""
        return cls(
            predictors=list(data["predictors"]),
            coefficients={
                name: Coefficient(coef=c["coef"], ci_low=c["ci_low"], ci_high=c["ci_high"], p_value=c["p_value"])
                for name, c in data["coefficients"].items()
            },
            r_squared=data["r_squared"],
            n_rows=data["n_rows"],
            eliminated=list(data.get("eliminated", [])),
            controls=list(data.get("controls", [])),
            n_excluded=data.get("n_excluded", 0),
        )


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def _train_means(split: Split, features: dict[str, FeatureVector]) -> dict[str, float | None]:
    means = {}
    for column, attr in RATIO_FEATURES.items():
        values = [getattr(features[i], attr) for i in split.train_ids]
        values = [v for v in values if v is not None]
        means[column] = float(np.mean(values)) if values else None
    return means


def _ratio(value: float | None, mean: float | None, allow_zero: bool) -> float | None:
    if value is None or mean is None or mean == 0:
        return None
    ratio = value / mean
    if not math.isfinite(ratio) or ratio < 0 or (ratio == 0 and not allow_zero):
        return None
    return ratio


def build_rows(
    splits: list[Split],
    features: dict[str, FeatureVector],
    wers: dict[str, dict[str, float]],
    speakers: dict[str, str | None] | None = None,
    wer_cap: float = WER_CAP,
) -> RowTable:
    """
    One row per (split, test utterance) with train-mean-normalized features.

    A feature whose train mean is zero (typically the OOV rate) is marked
    absent for that split. A zero OOV ratio is a valid value; every other
    ratio must be finite and positive or the cell is left empty. WERs above
    wer_cap are clipped to it.

    Raises:
        SplitError: A split has an empty train set.
        DataError: Features are missing for a split utterance.
    """
    speakers = speakers or {}
    table = RowTable(rows=[])
    for split in splits:
        if not split.train_ids:
            raise SplitError(f"split {split.name} has an empty train set")
        missing = [i for i in (*split.train_ids, *split.test_ids) if i not in features]
        if missing:
            raise DataError(f"split {split.name}: no features for {', '.join(missing[:20])}")
        split_wers = wers.get(split.name)
        if split_wers is None:
            raise DataError(f"no utterance WERs for split {split.name}")

        means = _train_means(split, features)
        absent = {
            column: ("train mean is zero" if mean == 0 else "no train values")
            for column, mean in means.items() if mean is None or mean == 0
        }
        if absent:
            table.absent_columns[split.name] = absent

        for utt_id in split.test_ids:
            vec = features[utt_id]
            wer = split_wers[utt_id]
            if wer > wer_cap:
                wer = wer_cap
                table.n_winsorized += 1
            ratios = {
                column: _ratio(getattr(vec, attr), means[column], allow_zero=(column == "oov_ratio"))
                for column, attr in RATIO_FEATURES.items()
            }
            if any(v is None for v in ratios.values()):
                table.n_incomplete += 1
            table.rows.append(RegressionRow(
                utterance_id=utt_id,
                split_id=split.name,
                wer=wer,
                n_tokens=vec.n_tokens,
                n_types=vec.n_types,
                method=split.strategy,
                speaker_id=speakers.get(utt_id),
                **ratios,
            ))
    if table.n_winsorized:
        logger.info("winsorized %d row(s) with WER above %.0f%%", table.n_winsorized, wer_cap)
    return table


def rows_frame(rows: list[RegressionRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows])


def _collinear_columns(X: pd.DataFrame) -> list[str]:
    kept: list[str] = []
    collinear = []
    for column in X.columns:
        candidate = X[kept + [column]].to_numpy()
        if np.linalg.matrix_rank(candidate) <= len(kept):
            collinear.append(column)
        else:
            kept.append(column)
    return collinear


def _design(
    frame: pd.DataFrame,
    predictors: list[str],
    controls: list[str],
) -> tuple[pd.Series, pd.DataFrame, list[str]]:
    numeric = [c for c in controls if c not in CATEGORICAL_CONTROLS]
    used_controls = list(numeric)
    parts = [frame[list(predictors) + numeric].astype(float)]
    for column in controls:
        if column not in CATEGORICAL_CONTROLS:
            continue
        levels = frame[column]
        if levels.isna().any() or levels.nunique() < 2:
            continue
        dummies = pd.get_dummies(
            levels.astype(str), prefix=column, prefix_sep="=", drop_first=True, dtype=float
        )
        parts.append(dummies.sort_index(axis=1))
        used_controls.append(column)
    X = pd.concat(parts, axis=1)
    X.insert(0, "Intercept", 1.0)
    return frame["wer"].astype(float), X, used_controls


def fit_frame(
    frame: pd.DataFrame,
    predictors: list[str],
    controls: list[str] | tuple[str, ...] = (),
) -> RegressionResult:
    """
    OLS of the `wer` column on predictors plus controls, solved by QR.

    Rows with a missing predictor are dropped and counted.

    Raises:
        DataError: Too few rows for the number of terms.
        RankDeficiencyError: Naming the columns that add no rank.
    """
    predictors = list(predictors)
    complete = frame.dropna(subset=predictors + [c for c in controls if c in NUMERIC_CONTROLS])
    n_excluded = len(frame) - len(complete)
    complete = complete.reset_index(drop=True)

    y, X, used_controls = _design(complete, predictors, list(controls))
    if len(complete) <= X.shape[1]:
        raise DataError(f"{len(complete)} rows are too few for {X.shape[1]} model terms")
    collinear = _collinear_columns(X)
    if collinear:
        raise RankDeficiencyError(collinear)

    fit = sm.OLS(y, X).fit(method="qr")
    conf = fit.conf_int(alpha=0.05)
    coefficients = {}
    for name in X.columns:
        coef = float(fit.params[name])
        low, high = float(conf.loc[name, 0]), float(conf.loc[name, 1])
        if not (math.isfinite(low) and math.isfinite(high)):
            low = high = coef
        p = float(fit.pvalues[name])
        p = 1.0 if not math.isfinite(p) else min(1.0, max(p, np.finfo(float).tiny))
        coefficients[name] = Coefficient(coef=coef, ci_low=min(low, coef), ci_high=max(high, coef), p_value=p)

    centered = float(np.sum((y - y.mean()) ** 2))
    r_squared = 0.0 if centered == 0 else float(np.clip(fit.rsquared, 0.0, 1.0))
    return RegressionResult(
        predictors=predictors,
        coefficients=coefficients,
        r_squared=r_squared,
        n_rows=len(complete),
        controls=used_controls,
        n_excluded=n_excluded,
        residuals=np.asarray(fit.resid),
        design=X,
    )


def fit_ols(
    rows: list[RegressionRow],
    predictors: list[str] | tuple[str, ...] = PREDICTORS,
    controls: list[str] | tuple[str, ...] = DEFAULT_CONTROLS,
) -> RegressionResult:
    """Fit WER on the chosen ratio predictors with controls."""
    if not rows:
        raise DataError("no regression rows")
    return fit_frame(rows_frame(rows), list(predictors), controls)


def backward_stepwise(
    rows: list[RegressionRow],
    predictors: list[str] | tuple[str, ...] = PREDICTORS,
    alpha: float = ALPHA,
    controls: list[str] | tuple[str, ...] = DEFAULT_CONTROLS,
) -> RegressionResult:
    """
    Backward elimination over the ratio predictors.

    Rows are fixed to the complete cases of the full predictor set so every
    step fits the same data. Controls are never removed.
    """
    if not rows:
        raise DataError("no regression rows")
    frame = rows_frame(rows)
    remaining = list(predictors)
    complete = frame.dropna(subset=remaining)
    n_excluded = len(frame) - len(complete)
    eliminated: list[str] = []

    result = fit_frame(complete, remaining, controls)
    while remaining:
        worst = max(remaining, key=lambda name: result.coefficients[name].p_value)
        if result.coefficients[worst].p_value <= alpha:
            break
        logger.debug("eliminating %s (p=%.4g)", worst, result.coefficients[worst].p_value)
        remaining.remove(worst)
        eliminated.append(worst)
        result = fit_frame(complete, remaining, controls)

    result.eliminated = eliminated
    result.n_excluded = n_excluded
    return result


def group_duration_regression(
    group_durations: dict[str, float],
    group_wers: dict[str, float],
) -> RegressionResult:
    """
    Regress per-group held-out WER on per-group total duration.

    This is the single-predictor check of whether the amount of audio a
    speaker/session contributes explains its held-out WER.
    """
    groups = sorted(set(group_durations) & set(group_wers))
    if len(groups) < 3:
        raise DataError("group-level regression needs at least 3 groups")
    frame = pd.DataFrame({
        "total_duration": [group_durations[g] for g in groups],
        "wer": [group_wers[g] for g in groups],
    })
    return fit_frame(frame, ["total_duration"])


def result_frame(result: RegressionResult) -> pd.DataFrame:
    """Coefficient table for the ratio predictors that survived selection."""
    rows = []
    for name in result.predictors:
        c = result.coefficients[name]
        rows.append({
            "predictor": name,
            "coefficient": c.coef,
            "ci_low": c.ci_low,
            "ci_high": c.ci_high,
            "p": c.p_value,
            "stars": c.stars,
        })
    return pd.DataFrame(rows, columns=["predictor", "coefficient", "ci_low", "ci_high", "p", "stars"])


def format_result(result: RegressionResult) -> str:
    """Coefficient table with R^2, row counts, the star legend and the estimator note."""
    lines = [f"{'predictor':<20}{'coef':>12}{'95% CI':>26}{'p':>12}"]
    for name in result.predictors:
        c = result.coefficients[name]
        ci = f"({c.ci_low:.3g}, {c.ci_high:.3g})"
        lines.append(f"{name:<20}{c.coef:>9.3g}{c.stars:<3}{ci:>26}{c.p_value:>12.3g}")
    if result.eliminated:
        lines.append(f"eliminated: {', '.join(result.eliminated)}")
    lines.append(f"R^2 = {result.r_squared:.3f}   n = {result.n_rows}   excluded = {result.n_excluded}")
    lines.append(STARS_LEGEND)
    lines.append(ESTIMATOR_NOTE)
    return "\n".join(lines)
