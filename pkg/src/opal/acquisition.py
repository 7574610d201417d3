"""Acquisition: score the unlabeled pool, optionally zero predicted outliers,
select the top-B batch.

All scorers produce "bigger = more worth annotating" values. Ties in the
final ranking break by a seeded per-round permutation rather than id order,
so synthetic generation order cannot leak into selections.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .ensemble import compute_vr, entropy

SCORERS = ("random", "entropy", "max_confidence", "vr", "coreset")


class AcquisitionError(ValueError):
    pass


@dataclass(frozen=True)
class AcquisitionConfig:
    scorer: str = "vr"
    filtering: bool = True
    timing: str = "after_semi"  # "after_semi" | "before_semi"
    coreset_average_features: bool = False

    def __post_init__(self):
        if self.scorer not in SCORERS:
            raise AcquisitionError(f"unknown scorer {self.scorer!r}; choose from {SCORERS}")
        if self.timing not in ("after_semi", "before_semi"):
            raise AcquisitionError(f"unknown timing {self.timing!r}")


@dataclass(frozen=True)
class ScoredExample:
    id: int
    raw_score: float
    predicted_outlier: bool
    final_score: float


def score_random(n: int, seed: int) -> np.ndarray:
    """i.i.d. uniform [0, 1) scores, deterministic per seed."""
    return np.random.default_rng(seed).random(n)


def score_entropy(avg_probs: np.ndarray) -> np.ndarray:
    """Entropy (nats) of the ensemble-average distribution per example."""
    return entropy(avg_probs)


def score_max_confidence(avg_probs: np.ndarray) -> np.ndarray:
    """1 - max class probability; higher means less confident."""
    p = np.atleast_2d(np.asarray(avg_probs, dtype=np.float64))
    return 1.0 - p.max(axis=1)


def score_vr(member_labels: np.ndarray, ensemble_labels: np.ndarray) -> np.ndarray:
    """Variation ratio per example from (M, n) member labels.

    Vectorized form of compute_vr applied column-wise.
    """
    labels = np.atleast_2d(member_labels)
    ensemble_labels = np.asarray(ensemble_labels)
    return 1.0 - (labels == ensemble_labels[None, :]).mean(axis=0)


def select_coreset(
    labeled_features: np.ndarray,
    unlabeled_features: np.ndarray,
    budget: int,
) -> list[int]:
    """Greedy k-center over the unlabeled points, seeded by the labeled set.

    Repeats budget times: pick the point with the largest Euclidean distance
    to its nearest center, then add it to the center set. Returns indices
    into unlabeled_features in pick order. Farthest-first traversal is a
    2-approximation of the optimal covering radius.
    """
    unlabeled = np.atleast_2d(np.asarray(unlabeled_features, dtype=np.float64))
    n = len(unlabeled)
    if budget > n:
        raise AcquisitionError(f"budget {budget} exceeds {n} unlabeled points")
    labeled = np.asarray(labeled_features, dtype=np.float64).reshape(-1, unlabeled.shape[1])
    if len(labeled):
        diffs = unlabeled[:, None, :] - labeled[None, :, :]
        min_dist = np.sqrt((diffs**2).sum(axis=2)).min(axis=1)
    else:
        min_dist = np.full(n, np.inf)

    picks: list[int] = []
    for _ in range(budget):
        pick = int(np.argmax(min_dist))
        picks.append(pick)
        dist_to_pick = np.sqrt(((unlabeled - unlabeled[pick]) ** 2).sum(axis=1))
        min_dist = np.minimum(min_dist, dist_to_pick)
        min_dist[pick] = -np.inf  # never repick
    return picks


def coreset_scores(
    labeled_features: np.ndarray,
    unlabeled_features: np.ndarray,
    budget: int,
    candidate_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Per-example scores encoding greedy pick order (earlier pick = higher).

    candidate_mask restricts the greedy picks (used by outlier filtering);
    non-candidates and unpicked points score 0.
    """
    n = len(unlabeled_features)
    scores = np.zeros(n)
    if candidate_mask is None:
        candidates = np.arange(n)
    else:
        candidates = np.flatnonzero(candidate_mask)
    n_picks = min(budget, len(candidates))
    if n_picks == 0:
        return scores
    picks = select_coreset(labeled_features, unlabeled_features[candidates], n_picks)
    for rank, local in enumerate(picks):
        scores[candidates[local]] = float(n_picks - rank)
    return scores


def apply_filtering(scored: Sequence[ScoredExample], filtering: bool) -> list[ScoredExample]:
    """Zero the final score of predicted outliers when filtering is on."""
    out = []
    for s in scored:
        final = 0.0 if (filtering and s.predicted_outlier) else s.raw_score
        out.append(replace(s, final_score=final))
    return out


def select_top_b(scored: Sequence[ScoredExample], budget: int, seed: int) -> list[int]:
    """Ids of the top-budget final scores, descending; seeded tie-break.

    Always returns exactly budget ids: when filtering zeroes out more than
    n - budget items, the remainder fills from zero-score items in tie-break
    order (budget cardinality is the harder contract).
    """
    if budget > len(scored):
        raise AcquisitionError(f"budget {budget} exceeds {len(scored)} scored examples")
    finals = np.array([s.final_score for s in scored])
    perm = np.random.default_rng(seed).permutation(len(scored))
    order = np.lexsort((perm, -finals))
    return [scored[i].id for i in order[:budget]]
