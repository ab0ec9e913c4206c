"""Threshold calibration, business metrics, agreement statistics, and the
model comparison report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import CalibrationError, InputError, UndefinedMetricError
from .labels import ClickRecord, JudgeVerdict
from .scorer import RelevanceModel, score, score_features
from .text import featurize_pairs

WEIGHTING_MODES = ("by_clicks", "by_pairs")

SearchOracle = Callable[[str, str], bool]


@dataclass(frozen=True)
class Recommendation:
    """One advertiser keyphrase suggestion for an item."""

    item_id: str
    category: str
    title: str
    keyphrase: str


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    retention_target: float
    achieved_retention: float
    clicked_pairs_seen: int
    weighting: str


@dataclass(frozen=True)
class EvalReport:
    """Per-model evaluation row; deltas are percent changes vs the baseline."""

    model_name: str
    keyphrase_delta_pct: Optional[float]
    sales_delta_pct: Optional[float]
    search_pass_rate: Optional[float]
    clicks_retained: float
    threshold: float
    keyphrases_per_item: float
    sales_retention: Optional[float]
    search_pass_rate_delta_pct: Optional[float]


@dataclass(frozen=True)
class RatioMetrics:
    """Aggregate engagement ratios; a field is None when its denominator is zero."""

    ctr: Optional[float]
    cvr: Optional[float]
    roas: Optional[float]


def select_retention_threshold(
    scores: np.ndarray, masses: np.ndarray, target: float
) -> tuple[float, float]:
    """Largest candidate threshold retaining at least `target` of the mass.

    Candidates are the distinct scores; a pair is retained when its score
    is >= the threshold. Returns (threshold, achieved_retention).
    """
    order = np.argsort(scores)[::-1]
    s = scores[order]
    m = masses[order]
    total = m.sum()
    cum = np.cumsum(m)
    # last index of each distinct-score group, scanning from the top
    boundary = np.nonzero(np.diff(s) != 0)[0]
    group_ends = np.append(boundary, len(s) - 1)
    for end in group_ends:
        achieved = cum[end] / total
        if achieved >= target:
            return float(s[end]), float(achieved)
    # unreachable: retaining everything always meets target <= 1
    return float(s[-1]), float(cum[-1] / total)


def _clicked(click_log: Sequence[ClickRecord]) -> list[ClickRecord]:
    return [r for r in click_log if r.clicks > 0]


def calibrate(
    model: RelevanceModel,
    click_log: Sequence[ClickRecord],
    target: float = 0.95,
    weighting: str = "by_clicks",
) -> CalibrationResult:
    """Pick the highest score threshold that retains `target` of clicks.

    `by_clicks` weights each pair by its click count (a pair with 10 clicks
    counts 10); `by_pairs` weights every clicked pair equally. Records with
    zero clicks carry no click evidence and are ignored.
    """
    if not 0 < target <= 1:
        raise InputError(f"retention target must be in (0, 1], got {target}")
    if weighting not in WEIGHTING_MODES:
        raise InputError(f"weighting must be one of {WEIGHTING_MODES}, got {weighting!r}")
    if not click_log:
        raise CalibrationError("cannot calibrate on an empty click log")
    clicked = _clicked(click_log)
    if not clicked:
        raise CalibrationError("click log contains no clicked pairs")

    scores = np.array([score(model, r.keyphrase, r.category, r.title) for r in clicked])
    if weighting == "by_clicks":
        masses = np.array([float(r.clicks) for r in clicked])
    else:
        masses = np.ones(len(clicked))
    threshold, achieved = select_retention_threshold(scores, masses, target)
    return CalibrationResult(
        threshold=threshold,
        retention_target=target,
        achieved_retention=achieved,
        clicked_pairs_seen=len(clicked),
        weighting=weighting,
    )


def sales_retention(
    model: RelevanceModel, threshold: float, click_log: Sequence[ClickRecord]
) -> Optional[float]:
    """Fraction of clicked-pair merchandise value surviving the threshold.

    Returns None when the log carries no merchandise value at all.
    """
    clicked = _clicked(click_log)
    total = sum(r.gmb for r in clicked)
    if total == 0:
        return None
    kept = sum(
        r.gmb
        for r in clicked
        if score(model, r.keyphrase, r.category, r.title) >= threshold
    )
    return kept / total


def _survivor_counts(
    scores: np.ndarray, threshold: float, item_ids: Sequence[str]
) -> tuple[dict[str, int], int]:
    """Surviving-keyphrase count per item; items with zero survivors count too."""
    counts: dict[str, int] = {}
    for item_id in item_ids:
        counts.setdefault(item_id, 0)
    for item_id, s in zip(item_ids, scores):
        if s >= threshold:
            counts[item_id] += 1
    return counts, len(counts)


def keyphrase_reduction(
    model: RelevanceModel,
    threshold: float,
    recommendations: Sequence[Recommendation],
    baseline: tuple[RelevanceModel, float],
) -> float:
    """Percent change in per-item mean surviving keyphrases vs the baseline."""
    if not recommendations:
        raise InputError("recommendation pool is empty")
    features = featurize_pairs((r.keyphrase, r.category, r.title) for r in recommendations)
    item_ids = [r.item_id for r in recommendations]

    base_model, base_threshold = baseline
    base_counts, n_items = _survivor_counts(
        score_features(base_model, features), base_threshold, item_ids
    )
    cand_counts, _ = _survivor_counts(score_features(model, features), threshold, item_ids)

    base_total = sum(base_counts.values())
    if base_total == 0:
        raise UndefinedMetricError("baseline keeps zero keyphrases; reduction is undefined")
    base_mean = base_total / n_items
    cand_mean = sum(cand_counts.values()) / n_items
    return 100.0 * (cand_mean - base_mean) / base_mean


def search_pass_rate(
    model: RelevanceModel,
    threshold: float,
    recommendations: Sequence[Recommendation],
    search_oracle: SearchOracle,
) -> float:
    """Fraction of advertising-filter survivors that also pass search."""
    survivors = [
        r
        for r in recommendations
        if score(model, r.keyphrase, r.category, r.title) >= threshold
    ]
    if not survivors:
        raise UndefinedMetricError("no recommendations survive the advertising filter")
    passing = sum(1 for r in survivors if search_oracle(r.item_id, r.keyphrase))
    return passing / len(survivors)


def cohen_kappa(a: Sequence, b: Sequence) -> float:
    """Chance-corrected agreement between two aligned label sequences."""
    if len(a) != len(b):
        raise InputError(f"label sequences differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise InputError("label sequences are empty")
    n = len(a)
    labels = sorted(set(a) | set(b), key=str)
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    p_e = sum(
        (sum(1 for x in a if x == lbl) / n) * (sum(1 for y in b if y == lbl) / n)
        for lbl in labels
    )
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        raise UndefinedMetricError("kappa undefined: chance agreement is 1 but raters disagree")
    return (p_o - p_e) / (1.0 - p_e)


def concordance(
    verdicts: Sequence[JudgeVerdict], click_positives: Iterable[tuple[str, str]]
) -> float:
    """Fraction of judged click-positive (title, keyphrase) pairs judged yes.

    Click positives never covered by a verdict are excluded from the
    denominator.
    """
    judged = {(v.title, v.keyphrase): v.verdict for v in verdicts}
    covered = [p for p in set(click_positives) if p in judged]
    if not covered:
        raise UndefinedMetricError("no judged click-positive pairs; concordance is undefined")
    return sum(1 for p in covered if judged[p] == "yes") / len(covered)


def ratio_metrics(log: Sequence[ClickRecord], ad_spend: float) -> RatioMetrics:
    """CTR, CVR, and ROAS over aggregated log totals."""
    if not ad_spend > 0:
        raise InputError("ad_spend must be positive")
    impressions = sum(r.impressions for r in log)
    clicks = sum(r.clicks for r in log)
    purchases = sum(r.purchases for r in log)
    gmb = sum(r.gmb for r in log)
    return RatioMetrics(
        ctr=clicks / impressions if impressions else None,
        cvr=purchases / clicks if clicks else None,
        roas=gmb / ad_spend,
    )


def _pct_delta(value: Optional[float], base: Optional[float]) -> Optional[float]:
    if value is None or base is None or base == 0:
        return None
    return 100.0 * (value - base) / base


def compare(
    models: Sequence[tuple[str, RelevanceModel]],
    click_log: Sequence[ClickRecord],
    recommendations: Sequence[Recommendation],
    search_oracle: SearchOracle,
    target: float = 0.95,
    baseline_name: str = "",
    weighting: str = "by_clicks",
) -> list[EvalReport]:
    """Calibrate every model on the same click log and report all metrics
    relative to the named baseline.

    Reports come back in input order with the baseline's deltas pinned to 0.
    """
    names = [name for name, _ in models]
    if baseline_name not in names:
        raise InputError(f"baseline {baseline_name!r} is not among the models: {names}")
    if len(set(names)) != len(names):
        raise InputError("model names must be unique")

    clicked = _clicked(click_log)
    if not clicked:
        raise CalibrationError("click log contains no clicked pairs")
    click_features = featurize_pairs((r.keyphrase, r.category, r.title) for r in clicked)
    rec_features = featurize_pairs((r.keyphrase, r.category, r.title) for r in recommendations)
    item_ids = [r.item_id for r in recommendations]
    click_masses = (
        np.array([float(r.clicks) for r in clicked])
        if weighting == "by_clicks"
        else np.ones(len(clicked))
    )
    gmb = np.array([r.gmb for r in clicked])
    total_gmb = float(gmb.sum())

    rows: dict[str, dict] = {}
    for name, model in models:
        click_scores = score_features(model, click_features)
        threshold, achieved = select_retention_threshold(click_scores, click_masses, target)
        kept_mask = click_scores >= threshold
        sales = float(gmb[kept_mask].sum() / total_gmb) if total_gmb > 0 else None

        rec_scores = score_features(model, rec_features)
        counts, n_items = _survivor_counts(rec_scores, threshold, item_ids)
        survivors_total = sum(counts.values())
        per_item = survivors_total / n_items if n_items else 0.0
        if survivors_total:
            passing = sum(
                1
                for r, s in zip(recommendations, rec_scores)
                if s >= threshold and search_oracle(r.item_id, r.keyphrase)
            )
            pass_rate: Optional[float] = passing / survivors_total
        else:
            pass_rate = None
        rows[name] = {
            "threshold": threshold,
            "clicks_retained": achieved,
            "sales": sales,
            "per_item": per_item,
            "pass_rate": pass_rate,
        }

    base = rows[baseline_name]
    reports = []
    for name, _ in models:
        row = rows[name]
        is_base = name == baseline_name
        reports.append(
            EvalReport(
                model_name=name,
                keyphrase_delta_pct=0.0 if is_base else _pct_delta(row["per_item"], base["per_item"]),
                sales_delta_pct=0.0 if is_base else _pct_delta(row["sales"], base["sales"]),
                search_pass_rate=row["pass_rate"],
                clicks_retained=row["clicks_retained"],
                threshold=row["threshold"],
                keyphrases_per_item=row["per_item"],
                sales_retention=row["sales"],
                search_pass_rate_delta_pct=0.0
                if is_base
                else _pct_delta(row["pass_rate"], base["pass_rate"]),
            )
        )
    return reports


def _fmt_pct(value: Optional[float]) -> str:
    if value is None:
        return "n/a"
    rounded = round(value)
    if rounded == 0:
        return "0%"
    return f"{rounded:+d}%"


def render_compare_table(reports: Sequence[EvalReport]) -> str:
    """Aligned text table: model rows vs baseline-relative percent columns."""
    headers = ("Model", "# Keyphrases", "Sales", "Search Pass Rate")
    body = [
        (
            r.model_name,
            _fmt_pct(r.keyphrase_delta_pct),
            _fmt_pct(r.sales_delta_pct),
            _fmt_pct(r.search_pass_rate_delta_pct),
        )
        for r in reports
    ]
    widths = [
        max(len(headers[col]), *(len(row[col]) for row in body)) for col in range(len(headers))
    ]
    lines = [
        "  ".join(
            h.ljust(widths[0]) if col == 0 else h.rjust(widths[col])
            for col, h in enumerate(headers)
        )
    ]
    for row in body:
        lines.append(
            "  ".join(
                cell.ljust(widths[0]) if col == 0 else cell.rjust(widths[col])
                for col, cell in enumerate(row)
            )
        )
    return "\n".join(lines) + "\n"


def compare_report_doc(
    reports: Sequence[EvalReport],
    baseline_name: str,
    target: float,
    weighting: str,
) -> dict:
    """Machine-readable report with both absolute values and deltas."""
    return {
        "baseline": baseline_name,
        "retention_target": target,
        "weighting": weighting,
        "models": [
            {
                "model_name": r.model_name,
                "threshold": r.threshold,
                "clicks_retained": r.clicks_retained,
                "keyphrases_per_item": r.keyphrases_per_item,
                "keyphrase_delta_pct": r.keyphrase_delta_pct,
                "sales_retention": r.sales_retention,
                "sales_delta_pct": r.sales_delta_pct,
                "search_pass_rate": r.search_pass_rate,
                "search_pass_rate_delta_pct": r.search_pass_rate_delta_pct,
            }
            for r in reports
        ],
    }


def compare_report_json(
    reports: Sequence[EvalReport], baseline_name: str, target: float, weighting: str
) -> str:
    doc = compare_report_doc(reports, baseline_name, target, weighting)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def compare_report_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        [
            "model_name",
            "threshold",
            "clicks_retained",
            "keyphrases_per_item",
            "keyphrase_delta_pct",
            "sales_retention",
            "sales_delta_pct",
            "search_pass_rate",
            "search_pass_rate_delta_pct",
        ]
    )
    for r in reports:
        writer.writerow(
            [
                r.model_name,
                r.threshold,
                r.clicks_retained,
                r.keyphrases_per_item,
                r.keyphrase_delta_pct,
                r.sales_retention,
                r.sales_delta_pct,
                r.search_pass_rate,
                r.search_pass_rate_delta_pct,
            ]
        )
    return buf.getvalue()
