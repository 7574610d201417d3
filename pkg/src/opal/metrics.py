"""Evaluation quantities reported per round: single-network test accuracy on
inliers, acquisition inlier rate, pseudo-label accuracy, and VR histograms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .model import Classifier, predict_proba
from .pool import Example, Oracle, features_matrix


class MetricsError(ValueError):
    pass


@dataclass
class RoundRecord:
    variant: str
    seed: int
    round_index: int
    test_accuracy: float
    inlier_rate: float | None  # None on rounds without acquisition (the final one)
    pseudo_label_accuracy: float | None  # None when semi-supervision is off or at round 0
    acquired_ids: tuple[int, ...] = ()
    stage_times_ms: dict[str, float] = field(default_factory=dict)

    @property
    def wall_time_ms(self) -> float:
        return sum(self.stage_times_ms.values())


def eval_test_accuracy(
    model: Classifier,
    test_set: Sequence[Example],
    num_inlier_classes: int,
    count_outlier_argmax_as_error: bool = False,
) -> float:
    """Accuracy of one network on the inlier-only test set.

    The argmax runs over the inlier outputs only; set
    count_outlier_argmax_as_error to argmax over all outputs instead, making
    an outlier-class prediction an automatic error.
    """
    if not test_set:
        raise MetricsError("empty test set")
    probs = predict_proba(model, features_matrix(test_set))
    if count_outlier_argmax_as_error:
        pred = probs.argmax(axis=1)
    else:
        pred = probs[:, :num_inlier_classes].argmax(axis=1)
    truth = np.array([ex.true_label for ex in test_set])
    return float(np.mean(pred == truth))


def inlier_rate(acquired_ids: Sequence[int], oracle: Oracle) -> float:
    """Fraction of the acquired batch that is truly inlier."""
    if not acquired_ids:
        raise MetricsError("empty acquired set")
    return float(np.mean([oracle.is_inlier(i) for i in acquired_ids]))


def pseudo_label_accuracy(
    pseudo_map: Mapping[int, tuple[int, float, float]], oracle: Oracle
) -> float:
    """Fraction of pseudo-labels matching true labels (outliers must hit the outlier class)."""
    if not pseudo_map:
        raise MetricsError("empty pseudo-label map")
    hits = [oracle.true_label(i) == lab for i, (lab, _, _) in pseudo_map.items()]
    return float(np.mean(hits))


@dataclass
class VrHistogram:
    """VR counts binned at multiples of 1/M, split by true inlier/outlier and,
    when filtering applies, kept vs filtered-out."""

    edges: np.ndarray  # bin centers k/M for k in 0..M
    counts: dict[tuple[str, str], np.ndarray]  # (inlier|outlier, all|kept|filtered) -> (M+1,)

    @property
    def total(self) -> int:
        return int(sum(c.sum() for key, c in self.counts.items() if key[1] == "all"))


def vr_histogram(
    vr_values: Sequence[float],
    is_outlier: Sequence[bool],
    num_members: int,
    kept: Sequence[bool] | None = None,
) -> VrHistogram:
    vr = np.asarray(vr_values, dtype=np.float64)
    outlier = np.asarray(is_outlier, dtype=bool)
    bins = np.clip(np.rint(vr * num_members).astype(int), 0, num_members)
    counts: dict[tuple[str, str], np.ndarray] = {}

    def tally(mask: np.ndarray) -> np.ndarray:
        return np.bincount(bins[mask], minlength=num_members + 1)

    for name, group_mask in (("inlier", ~outlier), ("outlier", outlier)):
        counts[(name, "all")] = tally(group_mask)
        if kept is not None:
            kept_mask = np.asarray(kept, dtype=bool)
            counts[(name, "kept")] = tally(group_mask & kept_mask)
            counts[(name, "filtered")] = tally(group_mask & ~kept_mask)
    return VrHistogram(edges=np.arange(num_members + 1) / num_members, counts=counts)


# ---------------------------------------------------------------------------
# Serialization of the per-round record stream


METRICS_COLUMNS = ["variant", "seed", "round", "test_accuracy", "inlier_rate", "pseudo_label_accuracy"]
TIMINGS_COLUMNS = ["variant", "seed", "round", "supervised_ms", "semi_ms", "scoring_ms", "total_ms"]


def _fmt(value: float | None) -> str:
    return "" if value is None else format(value, ".10g")


def write_metrics_csv(path: str | Path, records: Sequence[RoundRecord]) -> None:
    """Deterministic metric rows; wall times go to the timings sidecar instead."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for r in records:
            writer.writerow(
                [r.variant, r.seed, r.round_index, _fmt(r.test_accuracy),
                 _fmt(r.inlier_rate), _fmt(r.pseudo_label_accuracy)]
            )


def write_timings_csv(path: str | Path, records: Sequence[RoundRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMINGS_COLUMNS)
        for r in records:
            t = r.stage_times_ms
            writer.writerow(
                [r.variant, r.seed, r.round_index,
                 _fmt(t.get("supervised", 0.0)), _fmt(t.get("semi", 0.0)),
                 _fmt(t.get("scoring", 0.0)), _fmt(r.wall_time_ms)]
            )


def write_acquired_ids(path: str | Path, records: Sequence[RoundRecord]) -> None:
    """Sidecar: acquisition order per (variant, seed, round)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "round", "rank", "id"])
        for r in records:
            for rank, ex_id in enumerate(r.acquired_ids):
                writer.writerow([r.variant, r.seed, r.round_index, rank, ex_id])


def summarize(records: Sequence[RoundRecord]) -> list[dict]:
    """Mean and population std across seeds, per (variant, round)."""
    groups: dict[tuple[str, int], list[RoundRecord]] = {}
    for r in records:
        groups.setdefault((r.variant, r.round_index), []).append(r)
    rows = []
    for (variant, rnd), group in sorted(groups.items()):
        row = {"variant": variant, "round": rnd, "n_seeds": len(group)}
        for name, values in (
            ("test_accuracy", [g.test_accuracy for g in group]),
            ("inlier_rate", [g.inlier_rate for g in group if g.inlier_rate is not None]),
            ("pseudo_label_accuracy",
             [g.pseudo_label_accuracy for g in group if g.pseudo_label_accuracy is not None]),
        ):
            row[f"{name}_mean"] = float(np.mean(values)) if values else None
            row[f"{name}_std"] = float(np.std(values)) if values else None
        rows.append(row)
    return rows


def write_summary_csv(path: str | Path, rows: Sequence[dict]) -> None:
    if not rows:
        return
    columns = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            cells = []
            for c in columns:
                v = row[c]
                cells.append(_fmt(v) if v is None or isinstance(v, float) else v)
            writer.writerow(cells)
