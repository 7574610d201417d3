"""Ensemble machinery for one acquisition round.

M classifiers are trained independently on the labeled set, their averaged
probabilities define pseudo-labels and confidence weights for the unlabeled
set, and (optionally) training continues semi-supervised on the union of both
sets with half-labeled/half-unlabeled minibatches. Disagreement between
member argmaxes and the ensemble argmax yields the variation-ratio score used
downstream for acquisition.

Conventions fixed here so ports agree:
  - argmax ties break toward the lowest class index;
  - entropies use natural logs (the normalization ratio is base-invariant);
  - pseudo-labels and weights are computed once per round, from the
    supervised-stage ensemble, and held fixed during the semi stage;
  - labeled examples always enter the semi stage with weight exactly 1 and
    their revealed label.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .model import Classifier, ClassifierConfig, fit_batches, init_classifier, predict_proba, train_weighted
from .pool import Example, PoolState, gather_features
from .seeding import STAGE_SEMI, STAGE_SUPERVISED

logger = logging.getLogger("opal")

_BOUNDARY_SNAP = 1e-12  # quantize float noise at the w=0 / w=1 boundaries


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleConfig:
    num_members: int = 5
    semi_enabled: bool = True
    weights_enabled: bool = True
    k_plus_one: bool = True
    labeled_fraction_per_semi_batch: float = 0.5
    shared_init: bool = False

    def __post_init__(self):
        if self.num_members < 1:
            raise EnsembleError("need at least one member")
        if not 0.0 < self.labeled_fraction_per_semi_batch <= 1.0:
            raise EnsembleError("labeled fraction must be in (0, 1]")


@dataclass
class EnsemblePrediction:
    member_probs: np.ndarray  # (M, C)
    avg_probs: np.ndarray  # (C,)
    member_labels: np.ndarray  # (M,)
    pseudo_label: int
    weight: float
    vr: float


@dataclass
class BatchPredictions:
    """Vectorized ensemble outputs over n examples."""

    member_probs: np.ndarray  # (M, n, C)
    avg_probs: np.ndarray  # (n, C)
    member_labels: np.ndarray  # (M, n)
    pseudo_labels: np.ndarray  # (n,)
    weights: np.ndarray  # (n,)
    vr: np.ndarray  # (n,)

    @property
    def num_members(self) -> int:
        return self.member_probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.avg_probs.shape[1]

    def single(self, i: int) -> EnsemblePrediction:
        return EnsemblePrediction(
            member_probs=self.member_probs[:, i, :],
            avg_probs=self.avg_probs[i],
            member_labels=self.member_labels[:, i],
            pseudo_label=int(self.pseudo_labels[i]),
            weight=float(self.weights[i]),
            vr=float(self.vr[i]),
        )


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) per row, with 0*log(0) := 0."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    terms = np.where(p > 0, p * np.log(np.clip(p, 1e-300, None)), 0.0)
    return -terms.sum(axis=1)


def entropy_weight(avg_probs: np.ndarray) -> np.ndarray:
    """Confidence weight 1 - H(p)/log(C), clamped to [0, 1].

    Uniform rows give 0 and one-hot rows give 1; values within float noise of
    the boundaries are snapped onto them, since the bounds are exact
    mathematically.
    """
    p = np.atleast_2d(np.asarray(avg_probs, dtype=np.float64))
    w = 1.0 - entropy(p) / np.log(p.shape[1])
    w = np.clip(w, 0.0, 1.0)
    w[np.abs(w) < _BOUNDARY_SNAP] = 0.0
    w[np.abs(w - 1.0) < _BOUNDARY_SNAP] = 1.0
    return w


def compute_vr(member_labels: Sequence[int], ensemble_label: int) -> float:
    """Fraction of member argmaxes disagreeing with the ensemble argmax."""
    labels = np.asarray(member_labels)
    if labels.size < 1:
        raise EnsembleError("need at least one member label")
    return float(1.0 - np.count_nonzero(labels == ensemble_label) / labels.size)


def ensemble_predict_batch(members: Sequence[Classifier], X: np.ndarray) -> BatchPredictions:
    """Member and averaged predictions plus pseudo-labels, weights, and VR."""
    if not members:
        raise EnsembleError("empty ensemble")
    num_classes = {m.config.num_classes for m in members}
    if len(num_classes) != 1:
        raise EnsembleError("members disagree on num_classes")
    member_probs = np.stack([predict_proba(m, X) for m in members])  # (M, n, C)
    avg = member_probs.mean(axis=0)
    member_labels = member_probs.argmax(axis=2)  # ties -> lowest index
    pseudo = avg.argmax(axis=1)
    vr = 1.0 - (member_labels == pseudo[None, :]).mean(axis=0)
    return BatchPredictions(
        member_probs=member_probs,
        avg_probs=avg,
        member_labels=member_labels,
        pseudo_labels=pseudo,
        weights=entropy_weight(avg),
        vr=vr,
    )


def ensemble_predict(members: Sequence[Classifier], x: np.ndarray) -> EnsemblePrediction:
    """Single-example view of ensemble_predict_batch."""
    return ensemble_predict_batch(members, np.asarray(x, dtype=np.float64).reshape(1, -1)).single(0)


def pseudo_label_pool(
    members: Sequence[Classifier],
    pool: PoolState,
    dataset_index: dict[int, Example],
) -> dict[int, tuple[int, float, float]]:
    """Map id -> (pseudo_label, weight, vr) for every unlabeled example."""
    if not pool.unlabeled_ids:
        return {}
    X = gather_features(dataset_index, pool.unlabeled_ids)
    preds = ensemble_predict_batch(members, X)
    return {
        i: (int(preds.pseudo_labels[j]), float(preds.weights[j]), float(preds.vr[j]))
        for j, i in enumerate(pool.unlabeled_ids)
    }


# ---------------------------------------------------------------------------
# Two-stage round training


@dataclass
class RoundModels:
    supervised: list[Classifier]
    semi: list[Classifier] | None
    pseudo_map: dict[int, tuple[int, float, float]] | None
    stage_times_ms: dict[str, float] = field(default_factory=dict)

    @property
    def acquisition_members(self) -> list[Classifier]:
        """Models the acquisition consumes by default: post-semi when present."""
        return self.semi if self.semi is not None else self.supervised


def _semi_batch_stream(
    XL, yL, XU, yU, wU, batch_size, labeled_fraction, epochs, rng
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Half-labeled/half-unlabeled minibatches; an epoch is one full pass over
    the unlabeled set, while the labeled set cycles (reshuffled on each wrap).
    Labeled rows carry weight 1 by construction."""
    n_lab = max(1, int(round(batch_size * labeled_fraction)))
    n_unl = max(1, batch_size - n_lab)
    wL = np.ones(len(yL))
    lab_order = rng.permutation(len(yL))
    lab_pos = 0

    def take_labeled(count):
        nonlocal lab_order, lab_pos
        out = []
        while count:
            if lab_pos == len(lab_order):
                lab_order = rng.permutation(len(yL))
                lab_pos = 0
            grab = min(count, len(lab_order) - lab_pos)
            out.append(lab_order[lab_pos : lab_pos + grab])
            lab_pos += grab
            count -= grab
        return np.concatenate(out)

    for _ in range(epochs):
        unl_order = rng.permutation(len(yU))
        for start in range(0, len(yU), n_unl):
            u = unl_order[start : start + n_unl]
            l = take_labeled(n_lab)
            yield (
                np.concatenate([XL[l], XU[u]]),
                np.concatenate([yL[l], yU[u]]),
                np.concatenate([wL[l], wU[u]]),
            )


def train_round(
    dataset_index: dict[int, Example],
    pool: PoolState,
    num_inlier_classes: int,
    model_config: ClassifierConfig,
    ens_config: EnsembleConfig,
    round_index: int,
    seed_plan,
    warm_start: Sequence[np.ndarray] | None = None,
) -> RoundModels:
    """Run one round's training: supervised members, then the optional semi stage.

    With k_plus_one disabled, outlier-labeled examples are dropped from the
    labeled training set and the members classify over the inlier classes
    only. Pseudo-labels come from the supervised-stage ensemble; when
    weights_enabled is off all pseudo-label weights are forced to 1.
    """
    K = num_inlier_classes
    if round_index < 1:
        raise EnsembleError("round 0 performs no ensemble training")
    if not pool.labeled_ids:
        raise EnsembleError("empty labeled set")
    expected_classes = K + 1 if ens_config.k_plus_one else K
    if model_config.num_classes != expected_classes:
        raise EnsembleError(
            f"model num_classes {model_config.num_classes} inconsistent with "
            f"k_plus_one={ens_config.k_plus_one} (expected {expected_classes})"
        )

    labeled_ids = list(pool.labeled_ids)
    if not ens_config.k_plus_one:
        labeled_ids = [i for i in labeled_ids if pool.revealed_labels[i] != K]
        if not labeled_ids:
            raise EnsembleError("no inlier labels available for K-way training")
    XL = gather_features(dataset_index, labeled_ids)
    yL = np.array([pool.revealed_labels[i] for i in labeled_ids], dtype=np.int64)

    M = ens_config.num_members
    t0 = time.perf_counter()
    supervised = []
    for m in range(M):
        init_seed = seed_plan.member_init(0 if ens_config.shared_init else m)
        member = init_classifier(model_config, init_seed, warm_start=warm_start)
        member = train_weighted(
            member,
            XL,
            yL,
            epochs=model_config.epochs_supervised,
            shuffle_seed=seed_plan.member_shuffle(round_index, STAGE_SUPERVISED, m),
        )
        supervised.append(member)
    supervised_ms = (time.perf_counter() - t0) * 1e3

    if not ens_config.semi_enabled:
        return RoundModels(
            supervised=supervised, semi=None, pseudo_map=None,
            stage_times_ms={"supervised": supervised_ms},
        )

    t1 = time.perf_counter()
    pseudo_map = pseudo_label_pool(supervised, pool, dataset_index)
    if not ens_config.weights_enabled:
        pseudo_map = {i: (lab, 1.0, vr) for i, (lab, _, vr) in pseudo_map.items()}

    unl_ids = list(pool.unlabeled_ids)
    XU = gather_features(dataset_index, unl_ids) if unl_ids else np.zeros((0, XL.shape[1]))
    yU = np.array([pseudo_map[i][0] for i in unl_ids], dtype=np.int64)
    wU = np.array([pseudo_map[i][1] for i in unl_ids], dtype=np.float64)

    semi = []
    for m in range(M):
        rng = np.random.default_rng(seed_plan.member_shuffle(round_index, STAGE_SEMI, m))
        if unl_ids:
            batches = _semi_batch_stream(
                XL, yL, XU, yU, wU,
                model_config.batch_size,
                ens_config.labeled_fraction_per_semi_batch,
                model_config.epochs_semi,
                rng,
            )
            member = fit_batches(supervised[m], batches)
        else:
            member = train_weighted(
                supervised[m], XL, yL,
                epochs=model_config.epochs_semi,
                shuffle_seed=seed_plan.member_shuffle(round_index, STAGE_SEMI, m),
            )
        semi.append(member)

    return RoundModels(
        supervised=supervised, semi=semi, pseudo_map=pseudo_map,
        stage_times_ms={"supervised": supervised_ms, "semi": (time.perf_counter() - t1) * 1e3},
    )
