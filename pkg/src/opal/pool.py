"""Dataset ownership: labeled/unlabeled partition across rounds, the annotation
oracle, the synthetic cluster benchmark, and the delimited dataset file format.

Labels are integers in [0, K]; label K is the outlier class. The initial
labeled set contains inliers only; outliers enter it through annotation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLIT_LABELED = "labeled"
SPLIT_UNLABELED = "unlabeled"
SPLIT_TEST = "test"


class DatasetError(ValueError):
    pass


@dataclass(eq=False)
class Example:
    """One data point; true_label is visible only to the oracle."""

    id: int
    features: np.ndarray
    true_label: int


@dataclass(frozen=True)
class PoolState:
    """Disjoint labeled/unlabeled partition at one round.

    Immutable between rounds: annotate() returns a new state. labeled_ids
    keeps acquisition order so per-rank breakdowns stay possible.
    """

    labeled_ids: tuple[int, ...]
    unlabeled_ids: tuple[int, ...]
    revealed_labels: dict[int, int]
    round_index: int = 0

    def validate(self) -> None:
        labeled = set(self.labeled_ids)
        unlabeled = set(self.unlabeled_ids)
        if len(labeled) != len(self.labeled_ids) or len(unlabeled) != len(self.unlabeled_ids):
            raise DatasetError("duplicate ids inside a split")
        if labeled & unlabeled:
            raise DatasetError("labeled and unlabeled sets overlap")
        if set(self.revealed_labels) != labeled:
            raise DatasetError("revealed labels do not cover the labeled set")


class Oracle:
    """Annotation oracle: answers true labels, knows which class is the outlier one."""

    def __init__(self, dataset: Sequence[Example], num_inlier_classes: int):
        self.num_inlier_classes = int(num_inlier_classes)
        self._labels = {ex.id: int(ex.true_label) for ex in dataset}

    @property
    def outlier_label(self) -> int:
        return self.num_inlier_classes

    def true_label(self, example_id: int) -> int:
        return self._labels[example_id]

    def is_inlier(self, example_id: int) -> bool:
        return self._labels[example_id] != self.outlier_label


def annotate(
    pool: PoolState,
    acquired_ids: Sequence[int],
    oracle: Oracle,
    budget: int | None = None,
) -> PoolState:
    """Reveal true labels for acquired_ids and move them to the labeled set.

    Acquired outliers are revealed as the outlier class like any other label.
    Order of acquired_ids is preserved in the new labeled set.
    """
    acquired = [int(i) for i in acquired_ids]
    if budget is not None and len(acquired) != budget:
        raise DatasetError(f"acquired {len(acquired)} ids, expected budget {budget}")
    if len(set(acquired)) != len(acquired):
        raise DatasetError("duplicate ids in acquired set")
    unlabeled = set(pool.unlabeled_ids)
    bad = [i for i in acquired if i not in unlabeled]
    if bad:
        raise DatasetError(f"ids not in unlabeled set: {bad[:5]}")

    acquired_set = set(acquired)
    revealed = dict(pool.revealed_labels)
    for i in acquired:
        revealed[i] = oracle.true_label(i)
    return PoolState(
        labeled_ids=pool.labeled_ids + tuple(acquired),
        unlabeled_ids=tuple(i for i in pool.unlabeled_ids if i not in acquired_set),
        revealed_labels=revealed,
        round_index=pool.round_index + 1,
    )


# ---------------------------------------------------------------------------
# Synthetic benchmark


@dataclass(frozen=True)
class BenchmarkSpec:
    """Gaussian-cluster benchmark: K inlier clusters plus heterogeneous outliers.

    Inlier class means sit on a sphere of radius inlier_center_radius (or are
    given explicitly via inlier_means). Outliers come from outlier_clusters
    extra Gaussian clusters whose means sit on a strictly larger radius band,
    or from a uniform box when outlier_mode="uniform". The outlier draws are
    a prefix-stable stream: a spec differing only in n_outlier reuses the
    smaller spec's outliers as a prefix (same for per-class inlier draws).
    """

    num_classes: int
    feature_dim: int
    n_inlier_per_class: int
    n_outlier: int
    initial_labeled_per_class: int
    test_per_class: int
    seed: int = 0
    outlier_ratio: float | None = None
    inlier_center_radius: float = 3.0
    inlier_std: float = 1.0
    inlier_means: tuple[tuple[float, ...], ...] | None = None
    outlier_mode: str = "clusters"
    outlier_clusters: int = 20
    outlier_radius_lo: float = 4.5
    outlier_radius_hi: float = 7.0
    outlier_std: float = 1.0
    uniform_halfwidth: float = 8.0

    def __post_init__(self):
        if self.num_classes <= 0 or self.feature_dim <= 0:
            raise DatasetError("num_classes and feature_dim must be positive")
        if self.n_inlier_per_class <= 0 or self.test_per_class <= 0:
            raise DatasetError("per-class counts must be positive")
        if self.n_outlier < 0 or self.initial_labeled_per_class < 0:
            raise DatasetError("counts must be non-negative")
        if self.initial_labeled_per_class > self.n_inlier_per_class:
            raise DatasetError("initial labeled per class exceeds class size")
        if self.outlier_ratio is not None:
            if not 0.0 <= self.outlier_ratio < 1.0:
                raise DatasetError("outlier_ratio must be in [0, 1)")
            n_total = self.n_outlier + self.num_classes * self.n_inlier_per_class
            if abs(self.outlier_ratio - self.n_outlier / n_total) > 1.0 / n_total:
                raise DatasetError("outlier_ratio inconsistent with counts")
        if self.inlier_means is not None:
            if len(self.inlier_means) != self.num_classes or any(
                len(m) != self.feature_dim for m in self.inlier_means
            ):
                raise DatasetError("inlier_means shape does not match (num_classes, feature_dim)")
        if self.outlier_mode not in ("clusters", "uniform"):
            raise DatasetError(f"unknown outlier_mode {self.outlier_mode!r}")
        if self.outlier_mode == "clusters":
            if self.outlier_clusters <= 0:
                raise DatasetError("outlier_clusters must be positive")
            if self.outlier_radius_lo <= self.inlier_center_radius:
                raise DatasetError("outlier radius band must clear the inlier sphere")

    @property
    def realized_outlier_ratio(self) -> float:
        return self.n_outlier / (self.n_outlier + self.num_classes * self.n_inlier_per_class)

    @classmethod
    def with_ratio(cls, outlier_ratio: float, **kwargs) -> "BenchmarkSpec":
        """Derive n_outlier from the requested ratio and the inlier counts."""
        if not 0.0 <= outlier_ratio < 1.0:
            raise DatasetError("outlier_ratio must be in [0, 1)")
        n_inliers = kwargs["num_classes"] * kwargs["n_inlier_per_class"]
        n_outlier = int(round(outlier_ratio / (1.0 - outlier_ratio) * n_inliers))
        return cls(n_outlier=n_outlier, outlier_ratio=outlier_ratio, **kwargs)


def _unit_rows(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate_benchmark(
    spec: BenchmarkSpec,
) -> tuple[list[Example], PoolState, list[Example]]:
    """Generate (dataset, initial pool, inlier-only test set) from a spec.

    Ids are assigned in generation order: inlier classes block by block, then
    outliers; test ids continue after the dataset. Identical spec and seed
    reproduce identical streams.
    """
    K, d = spec.num_classes, spec.feature_dim
    ss = np.random.SeedSequence(spec.seed)
    # Fixed spawn order: means, L0 selection, outlier stream, per-class train, per-class test.
    children = ss.spawn(3 + 2 * K)
    means_rng = np.random.default_rng(children[0])
    l0_rng = np.random.default_rng(children[1])
    outlier_rng = np.random.default_rng(children[2])
    class_rngs = [np.random.default_rng(c) for c in children[3 : 3 + K]]
    test_rngs = [np.random.default_rng(c) for c in children[3 + K :]]

    if spec.inlier_means is not None:
        inlier_means = np.asarray(spec.inlier_means, dtype=np.float64)
    else:
        inlier_means = _unit_rows(means_rng.standard_normal((K, d))) * spec.inlier_center_radius
    if spec.outlier_mode == "clusters":
        directions = _unit_rows(means_rng.standard_normal((spec.outlier_clusters, d)))
        radii = means_rng.uniform(spec.outlier_radius_lo, spec.outlier_radius_hi, spec.outlier_clusters)
        outlier_means = directions * radii[:, None]

    dataset: list[Example] = []
    next_id = 0
    class_ids: list[list[int]] = []
    for c in range(K):
        feats = inlier_means[c] + spec.inlier_std * class_rngs[c].standard_normal(
            (spec.n_inlier_per_class, d)
        )
        ids = list(range(next_id, next_id + spec.n_inlier_per_class))
        dataset.extend(Example(i, feats[j], c) for j, i in enumerate(ids))
        class_ids.append(ids)
        next_id += spec.n_inlier_per_class

    # One draw pair per outlier keeps the stream prefix-stable across n_outlier.
    for _ in range(spec.n_outlier):
        if spec.outlier_mode == "clusters":
            cluster = int(outlier_rng.integers(spec.outlier_clusters))
            feats = outlier_means[cluster] + spec.outlier_std * outlier_rng.standard_normal(d)
        else:
            feats = outlier_rng.uniform(-spec.uniform_halfwidth, spec.uniform_halfwidth, d)
        dataset.append(Example(next_id, feats, K))
        next_id += 1

    labeled: list[int] = []
    for c in range(K):
        if spec.initial_labeled_per_class:
            picks = l0_rng.choice(class_ids[c], size=spec.initial_labeled_per_class, replace=False)
            labeled.extend(int(p) for p in np.sort(picks))
    labeled_set = set(labeled)
    unlabeled = tuple(ex.id for ex in dataset if ex.id not in labeled_set)
    revealed = {i: dataset[i].true_label for i in labeled}  # ids equal positions here
    pool = PoolState(tuple(labeled), unlabeled, revealed, round_index=0)

    test_set: list[Example] = []
    for c in range(K):
        feats = inlier_means[c] + spec.inlier_std * test_rngs[c].standard_normal(
            (spec.test_per_class, d)
        )
        for j in range(spec.test_per_class):
            test_set.append(Example(next_id, feats[j], c))
            next_id += 1

    return dataset, pool, test_set


# ---------------------------------------------------------------------------
# Delimited dataset files: header `id,split,label,f0..f{d-1}`


@dataclass(frozen=True)
class DatasetSchema:
    """Expectations for a dataset file; label num_inlier_classes is the outlier class."""

    num_inlier_classes: int
    feature_dim: int | None = None


def save_dataset(
    path: str | Path,
    dataset: Sequence[Example],
    pool: PoolState,
    test_set: Sequence[Example],
) -> None:
    """Serialize dataset + split membership in the external file format."""
    d = len(dataset[0].features) if dataset else len(test_set[0].features)
    labeled = set(pool.labeled_ids)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "split", "label"] + [f"f{i}" for i in range(d)])
        for ex in dataset:
            split = SPLIT_LABELED if ex.id in labeled else SPLIT_UNLABELED
            writer.writerow([ex.id, split, ex.true_label] + [repr(float(x)) for x in ex.features])
        for ex in test_set:
            writer.writerow([ex.id, SPLIT_TEST, ex.true_label] + [repr(float(x)) for x in ex.features])


def load_feature_dataset(
    path: str | Path, schema: DatasetSchema
) -> tuple[list[Example], PoolState, list[Example]]:
    """Load a dataset file; returns (dataset, initial pool, test set).

    Enforces the same structure the generator guarantees: consistent feature
    dimension, labels in [0, K], and an outlier-free labeled split.
    """
    K = schema.num_inlier_classes
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["id", "split", "label"]:
            raise DatasetError("bad header; expected id,split,label,f0..")
        d = len(header) - 3
        if d <= 0:
            raise DatasetError("no feature columns")
        if schema.feature_dim is not None and d != schema.feature_dim:
            raise DatasetError(f"feature dim {d} does not match schema {schema.feature_dim}")

        dataset: list[Example] = []
        test_set: list[Example] = []
        labeled: list[int] = []
        unlabeled: list[int] = []
        seen: set[int] = set()
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3 + d:
                raise DatasetError(f"line {lineno}: expected {3 + d} fields, got {len(row)}")
            try:
                ex_id = int(row[0])
                label = int(row[2])
                feats = np.array([float(x) for x in row[3:]], dtype=np.float64)
            except ValueError as e:
                raise DatasetError(f"line {lineno}: {e}") from e
            if not 0 <= label <= K:
                raise DatasetError(f"line {lineno}: label {label} outside [0, {K}]")
            if ex_id in seen:
                raise DatasetError(f"line {lineno}: duplicate id {ex_id}")
            seen.add(ex_id)
            split = row[1]
            example = Example(ex_id, feats, label)
            if split == SPLIT_TEST:
                if label == K:
                    raise DatasetError(f"line {lineno}: outlier in test split")
                test_set.append(example)
            elif split == SPLIT_LABELED:
                if label == K:
                    raise DatasetError(f"line {lineno}: outlier in initial labeled split")
                dataset.append(example)
                labeled.append(ex_id)
            elif split == SPLIT_UNLABELED:
                dataset.append(example)
                unlabeled.append(ex_id)
            else:
                raise DatasetError(f"line {lineno}: unknown split {split!r}")

    revealed = {ex.id: ex.true_label for ex in dataset if ex.id in set(labeled)}
    pool = PoolState(tuple(labeled), tuple(unlabeled), revealed, round_index=0)
    return dataset, pool, test_set


# ---------------------------------------------------------------------------
# Array helpers shared by training and scoring


def index_by_id(dataset: Sequence[Example]) -> dict[int, Example]:
    return {ex.id: ex for ex in dataset}


def features_matrix(examples: Iterable[Example]) -> np.ndarray:
    return np.stack([ex.features for ex in examples]).astype(np.float64)


def gather_features(dataset_index: dict[int, Example], ids: Sequence[int]) -> np.ndarray:
    return features_matrix(dataset_index[i] for i in ids)
