"""Round orchestration: config resolution, the per-seed round loop, variant
matrices, and result emission.

Per round (t >= 1): supervised ensemble training, optional semi stage,
evaluation (always before acquisition), then scoring / optional filtering /
top-B selection / annotation. Round 0 trains only a K-way reference
classifier and acquires uniformly at random. The final round trains and
evaluates but does not acquire, so a T-round run performs exactly T
acquisitions (round 0 plus rounds 1..T-1) and |L_T| = |L_0| + T*B.
"""

from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .acquisition import (
    AcquisitionConfig,
    ScoredExample,
    apply_filtering,
    coreset_scores,
    score_entropy,
    score_max_confidence,
    score_random,
    score_vr,
    select_top_b,
)
from .configio import ConfigError, format_kv, format_value, load_kv_file
from .ensemble import BatchPredictions, EnsembleConfig, RoundModels, ensemble_predict_batch, train_round
from .metrics import (
    RoundRecord,
    eval_test_accuracy,
    inlier_rate,
    pseudo_label_accuracy,
    summarize,
    write_acquired_ids,
    write_metrics_csv,
    write_summary_csv,
    write_timings_csv,
)
from .model import ClassifierConfig, init_classifier, penultimate_features, train_weighted
from .pool import (
    BenchmarkSpec,
    DatasetSchema,
    Example,
    Oracle,
    PoolState,
    annotate,
    gather_features,
    generate_benchmark,
    index_by_id,
    load_feature_dataset,
)
from .seeding import SeedPlan

logger = logging.getLogger("opal")


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Model knobs that do not depend on the dataset shape."""

    hidden: tuple[int, ...] = (32,)
    learning_rate: float = 5e-4
    optimizer: str = "adam"
    batch_size: int = 32
    epochs_supervised: int = 10
    epochs_semi: int = 3

    def build(self, input_dim: int, num_classes: int) -> ClassifierConfig:
        return ClassifierConfig(
            input_dim=input_dim,
            num_classes=num_classes,
            hidden=self.hidden,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            batch_size=self.batch_size,
            epochs_supervised=self.epochs_supervised,
            epochs_semi=self.epochs_semi,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    rounds: int
    budget: int
    seeds: tuple[int, ...]
    variant: str = "default"
    benchmark: BenchmarkSpec | None = None
    dataset_path: str | None = None
    dataset_num_classes: int | None = None
    model: ModelParams = field(default_factory=ModelParams)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    dump_predictions: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ExperimentError("rounds must be at least 1")
        if self.budget < 1:
            raise ExperimentError("budget must be positive")
        if not self.seeds:
            raise ExperimentError("need at least one seed")
        if (self.benchmark is None) == (self.dataset_path is None):
            raise ExperimentError("configure exactly one of benchmark.* or dataset.path")
        if self.dataset_path is not None and self.dataset_num_classes is None:
            raise ExperimentError("dataset.path requires dataset.num_classes")


# ---------------------------------------------------------------------------
# Flat-mapping round trip (config files, overrides, manifests)

_TOP_KEYS = {"variant", "rounds", "budget", "seeds", "output.predictions"}
_PREFIXES = ("benchmark.", "dataset.", "model.", "ensemble.", "acquisition.")

AXIS_KEYS = {
    "scorer": "acquisition.scorer",
    "filtering": "acquisition.filtering",
    "timing": "acquisition.timing",
    "k_plus_one": "ensemble.k_plus_one",
    "M": "ensemble.num_members",
    "semi": "ensemble.semi_enabled",
    "weights": "ensemble.weights_enabled",
}


def _as_tuple(value) -> tuple:
    return tuple(value) if isinstance(value, (list, tuple)) else (value,)


def _section(mapping: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in mapping.items() if k.startswith(prefix)}


def benchmark_from_mapping(mapping: dict[str, object]) -> BenchmarkSpec | None:
    """Build a BenchmarkSpec from benchmark.* keys; None when absent.

    When outlier_ratio is given without n_outlier, the count is derived
    from the ratio.
    """
    bench_kv = _section(mapping, "benchmark.")
    if not bench_kv:
        return None
    if "inlier_means" in bench_kv:
        flat = [float(v) for v in _as_tuple(bench_kv.pop("inlier_means"))]
        d = int(bench_kv["feature_dim"])
        bench_kv["inlier_means"] = tuple(tuple(flat[i : i + d]) for i in range(0, len(flat), d))
    ratio = bench_kv.pop("outlier_ratio", None)
    if ratio is not None and "n_outlier" not in bench_kv:
        return BenchmarkSpec.with_ratio(float(ratio), **bench_kv)
    if ratio is not None:
        bench_kv["outlier_ratio"] = float(ratio)
    return BenchmarkSpec(**bench_kv)


def config_from_mapping(mapping: dict[str, object]) -> ExperimentConfig:
    unknown = [
        k for k in mapping
        if k not in _TOP_KEYS and not any(k.startswith(p) for p in _PREFIXES)
    ]
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    benchmark = benchmark_from_mapping(mapping)
    model_kv = _section(mapping, "model.")
    if "hidden" in model_kv:
        model_kv["hidden"] = tuple(int(h) for h in _as_tuple(model_kv["hidden"]))
    dataset_kv = _section(mapping, "dataset.")

    return ExperimentConfig(
        rounds=int(mapping["rounds"]),
        budget=int(mapping["budget"]),
        seeds=tuple(int(s) for s in _as_tuple(mapping["seeds"])),
        variant=str(mapping.get("variant", "default")),
        benchmark=benchmark,
        dataset_path=dataset_kv.get("path"),
        dataset_num_classes=dataset_kv.get("num_classes"),
        model=ModelParams(**model_kv),
        ensemble=EnsembleConfig(**_section(mapping, "ensemble.")),
        acquisition=AcquisitionConfig(**_section(mapping, "acquisition.")),
        dump_predictions=bool(mapping.get("output.predictions", False)),
    )


def config_to_mapping(config: ExperimentConfig) -> dict[str, object]:
    m: dict[str, object] = {
        "variant": config.variant,
        "rounds": config.rounds,
        "budget": config.budget,
        "seeds": list(config.seeds),
        "output.predictions": config.dump_predictions,
    }
    if config.benchmark is not None:
        b = config.benchmark
        for name in (
            "num_classes", "feature_dim", "n_inlier_per_class", "n_outlier",
            "initial_labeled_per_class", "test_per_class", "seed",
            "inlier_center_radius", "inlier_std", "outlier_mode", "outlier_clusters",
            "outlier_radius_lo", "outlier_radius_hi", "outlier_std", "uniform_halfwidth",
        ):
            m[f"benchmark.{name}"] = getattr(b, name)
        if b.outlier_ratio is not None:
            m["benchmark.outlier_ratio"] = b.outlier_ratio
        if b.inlier_means is not None:
            m["benchmark.inlier_means"] = [x for row in b.inlier_means for x in row]
    else:
        m["dataset.path"] = config.dataset_path
        m["dataset.num_classes"] = config.dataset_num_classes
    for name in ("hidden", "learning_rate", "optimizer", "batch_size", "epochs_supervised", "epochs_semi"):
        value = getattr(config.model, name)
        m[f"model.{name}"] = list(value) if isinstance(value, tuple) else value
    for name in (
        "num_members", "semi_enabled", "weights_enabled", "k_plus_one",
        "labeled_fraction_per_semi_batch", "shared_init",
    ):
        m[f"ensemble.{name}"] = getattr(config.ensemble, name)
    for name in ("scorer", "filtering", "timing", "coreset_average_features"):
        m[f"acquisition.{name}"] = getattr(config.acquisition, name)
    return m


def load_experiment_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    from .configio import apply_overrides

    mapping = load_kv_file(path)
    if overrides:
        mapping = apply_overrides(mapping, list(overrides))
    return config_from_mapping(mapping)


# ---------------------------------------------------------------------------
# Scoring orchestration


def _score_unlabeled(
    config: ExperimentConfig,
    preds: BatchPredictions,
    members,
    dataset_index: dict[int, Example],
    pool: PoolState,
    num_inlier_classes: int,
    round_index: int,
    plan: SeedPlan,
) -> list[ScoredExample]:
    ids = pool.unlabeled_ids
    acq = config.acquisition
    k_plus_one = preds.num_classes == num_inlier_classes + 1
    predicted_outlier = (
        preds.pseudo_labels == num_inlier_classes if k_plus_one else np.zeros(len(ids), dtype=bool)
    )

    scorer = acq.scorer
    if scorer == "vr" and preds.num_members == 1:
        logger.warning(
            "VR scoring with a single member yields all-zero scores; "
            "selection falls back to the seeded tie-break (round %d)", round_index,
        )
    if scorer == "random":
        raw = score_random(len(ids), plan.scorer(round_index))
    elif scorer == "entropy":
        raw = score_entropy(preds.avg_probs)
    elif scorer == "max_confidence":
        raw = score_max_confidence(preds.avg_probs)
    elif scorer == "vr":
        raw = score_vr(preds.member_labels, preds.pseudo_labels)
    elif scorer == "coreset":
        feats = [members[0]] if not acq.coreset_average_features else members
        XL = gather_features(dataset_index, pool.labeled_ids)
        XU = gather_features(dataset_index, ids)
        lab = np.mean([penultimate_features(f, XL) for f in feats], axis=0)
        unl = np.mean([penultimate_features(f, XU) for f in feats], axis=0)
        mask = ~predicted_outlier if acq.filtering else None
        raw = coreset_scores(lab, unl, config.budget, candidate_mask=mask)
    else:  # pragma: no cover - AcquisitionConfig already rejects unknown names
        raise ExperimentError(f"unhandled scorer {scorer!r}")

    scored = [
        ScoredExample(id=i, raw_score=float(raw[j]), predicted_outlier=bool(predicted_outlier[j]),
                      final_score=float(raw[j]))
        for j, i in enumerate(ids)
    ]
    return apply_filtering(scored, acq.filtering)


def _check_pool_transition(old: PoolState, new: PoolState, budget: int) -> None:
    new.validate()
    if set(new.labeled_ids) & set(new.unlabeled_ids):
        raise ExperimentError("partition violated")
    if not set(old.labeled_ids) <= set(new.labeled_ids):
        raise ExperimentError("labeled set must grow monotonically")
    if set(old.labeled_ids) | set(old.unlabeled_ids) != set(new.labeled_ids) | set(new.unlabeled_ids):
        raise ExperimentError("pool universe changed")
    if len(new.labeled_ids) != len(old.labeled_ids) + budget:
        raise ExperimentError("budget violated")


# ---------------------------------------------------------------------------
# Round 0 and the per-seed loop


def run_round_zero(
    dataset: Sequence[Example],
    dataset_index: dict[int, Example],
    pool: PoolState,
    test_set: Sequence[Example],
    oracle: Oracle,
    config: ExperimentConfig,
    plan: SeedPlan,
) -> tuple[PoolState, RoundRecord]:
    """Random acquisition plus the K-way round-0 accuracy reference."""
    K = oracle.num_inlier_classes
    t0 = time.perf_counter()
    model_config = config.model.build(len(dataset[0].features), K)
    XL = gather_features(dataset_index, pool.labeled_ids)
    yL = np.array([pool.revealed_labels[i] for i in pool.labeled_ids], dtype=np.int64)
    if (yL >= K).any():
        raise ExperimentError("round 0 labeled set must be inlier-only")
    reference = init_classifier(model_config, plan.round0_model_init())
    reference = train_weighted(reference, XL, yL, shuffle_seed=plan.round0_model_shuffle())
    supervised_ms = (time.perf_counter() - t0) * 1e3

    accuracy = eval_test_accuracy(reference, test_set, K)

    t1 = time.perf_counter()
    raw = score_random(len(pool.unlabeled_ids), plan.round0_scores())
    scored = [
        ScoredExample(id=i, raw_score=float(raw[j]), predicted_outlier=False, final_score=float(raw[j]))
        for j, i in enumerate(pool.unlabeled_ids)
    ]
    acquired = select_top_b(scored, config.budget, plan.tie_break(0))
    scoring_ms = (time.perf_counter() - t1) * 1e3

    new_pool = annotate(pool, acquired, oracle, budget=config.budget)
    _check_pool_transition(pool, new_pool, config.budget)
    record = RoundRecord(
        variant=config.variant,
        seed=plan.master,
        round_index=0,
        test_accuracy=accuracy,
        inlier_rate=inlier_rate(acquired, oracle),
        pseudo_label_accuracy=None,
        acquired_ids=tuple(acquired),
        stage_times_ms={"supervised": supervised_ms, "scoring": scoring_ms},
    )
    return new_pool, record


def _load_data(config: ExperimentConfig, plan: SeedPlan):
    if config.benchmark is not None:
        spec = replace(config.benchmark, seed=plan.benchmark())
        dataset, pool, test_set = generate_benchmark(spec)
        K = spec.num_classes
    else:
        schema = DatasetSchema(num_inlier_classes=int(config.dataset_num_classes))
        dataset, pool, test_set = load_feature_dataset(config.dataset_path, schema)
        K = schema.num_inlier_classes
    return dataset, pool, test_set, K


def run_single_seed(config: ExperimentConfig, master_seed: int) -> tuple[list[RoundRecord], list[dict]]:
    """All rounds for one master seed; returns (records, prediction dump rows)."""
    plan = SeedPlan(master_seed)
    dataset, pool, test_set, K = _load_data(config, plan)
    oracle = Oracle(dataset, K)
    dataset_index = index_by_id(dataset)
    if config.rounds * config.budget > len(pool.unlabeled_ids):
        raise ExperimentError(
            f"rounds*budget = {config.rounds * config.budget} exceeds |U_0| = {len(pool.unlabeled_ids)}"
        )
    n_initial_labeled = len(pool.labeled_ids)

    pool, record = run_round_zero(dataset, dataset_index, pool, test_set, oracle, config, plan)
    records = [record]
    dump_rows: list[dict] = []

    num_classes = K + 1 if config.ensemble.k_plus_one else K
    model_config = config.model.build(len(dataset[0].features), num_classes)
    eval_index = master_seed % config.ensemble.num_members

    for t in range(1, config.rounds + 1):
        round_models = train_round(
            dataset_index, pool, K, model_config, config.ensemble, t, plan,
        )
        stage_times = dict(round_models.stage_times_ms)

        # Evaluation strictly precedes this round's acquisition.
        eval_member = round_models.acquisition_members[eval_index]
        accuracy = eval_test_accuracy(eval_member, test_set, K)
        pseudo_acc = (
            pseudo_label_accuracy(round_models.pseudo_map, oracle)
            if round_models.pseudo_map else None
        )

        acquired: tuple[int, ...] = ()
        rate = None
        if t < config.rounds:
            t2 = time.perf_counter()
            scoring_members = (
                round_models.supervised
                if config.acquisition.timing == "before_semi" or round_models.semi is None
                else round_models.semi
            )
            XU = gather_features(dataset_index, pool.unlabeled_ids)
            preds = ensemble_predict_batch(scoring_members, XU)
            scored = _score_unlabeled(
                config, preds, scoring_members, dataset_index, pool, K, t, plan,
            )
            selection = select_top_b(scored, config.budget, plan.tie_break(t))
            stage_times["scoring"] = (time.perf_counter() - t2) * 1e3

            if config.dump_predictions:
                kept = {s.id for s in scored if s.final_score > 0}
                for j, i in enumerate(pool.unlabeled_ids):
                    dump_rows.append({
                        "round": t, "id": i,
                        "pseudo_label": int(preds.pseudo_labels[j]),
                        "weight": float(preds.weights[j]),
                        "vr": float(preds.vr[j]),
                        "true_label": oracle.true_label(i),
                        "kept": i in kept,
                    })

            new_pool = annotate(pool, selection, oracle, budget=config.budget)
            _check_pool_transition(pool, new_pool, config.budget)
            pool = new_pool
            acquired = tuple(selection)
            rate = inlier_rate(acquired, oracle)

        records.append(RoundRecord(
            variant=config.variant,
            seed=master_seed,
            round_index=t,
            test_accuracy=accuracy,
            inlier_rate=rate,
            pseudo_label_accuracy=pseudo_acc,
            acquired_ids=acquired,
            stage_times_ms=stage_times,
        ))

    if len(pool.labeled_ids) != n_initial_labeled + config.rounds * config.budget:
        raise ExperimentError("final labeled count does not match |L_0| + T*B")
    return records, dump_rows


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path | None = None
) -> tuple[dict[int, list[RoundRecord]], list[dict]]:
    """Run every seed; returns (records per seed, summary rows); writes outputs."""
    records_by_seed: dict[int, list[RoundRecord]] = {}
    dump_rows: list[dict] = []
    for seed in config.seeds:
        records, rows = run_single_seed(config, seed)
        records_by_seed[seed] = records
        for row in rows:
            dump_rows.append({"variant": config.variant, "seed": seed, **row})

    all_records = [r for recs in records_by_seed.values() for r in recs]
    summary = summarize(all_records)
    for row in summary:
        logger.info(
            "%s round %d: accuracy %.4f +- %.4f",
            row["variant"], row["round"], row["test_accuracy_mean"], row["test_accuracy_std"],
        )
    if out_dir is not None:
        _write_outputs(Path(out_dir), config, all_records, summary, dump_rows)
    return records_by_seed, summary


def _write_outputs(out_dir: Path, config, records, summary, dump_rows) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out_dir / "metrics.csv", records)
    write_timings_csv(out_dir / "timings.csv", records)
    write_acquired_ids(out_dir / "acquired_ids.csv", records)
    write_summary_csv(out_dir / "summary.csv", summary)
    (out_dir / "manifest.txt").write_text(format_kv(config_to_mapping(config)))
    if dump_rows:
        with open(out_dir / "predictions.csv", "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["variant", "seed", "round", "id", "pseudo_label",
                               "weight", "vr", "true_label", "kept"],
            )
            writer.writeheader()
            writer.writerows(dump_rows)


# ---------------------------------------------------------------------------
# Variant matrices


def run_variant_matrix(
    base_config: ExperimentConfig,
    axes: dict[str, list],
    out_dir: str | Path | None = None,
) -> tuple[list[RoundRecord], list[dict]]:
    """Cross product of axis values over a shared-seed base config.

    Axis names are the short forms in AXIS_KEYS or raw dotted config keys.
    All variants run the same master seeds, so they see identical pools and
    identical round-0 acquisitions.
    """
    if not axes:
        raise ExperimentError("no axes given")
    for name, values in axes.items():
        if not values:
            raise ExperimentError(f"axis {name!r} has no values")

    base_mapping = config_to_mapping(base_config)
    names = list(axes)
    all_records: list[RoundRecord] = []
    for combo in itertools.product(*(axes[n] for n in names)):
        mapping = dict(base_mapping)
        label_parts = []
        for name, value in zip(names, combo):
            mapping[AXIS_KEYS.get(name, name)] = value
            label_parts.append(f"{name}={format_value(value)}")
        mapping["variant"] = "|".join(label_parts)
        variant_config = config_from_mapping(mapping)
        records_by_seed, _ = run_experiment(variant_config)
        all_records.extend(r for recs in records_by_seed.values() for r in recs)

    summary = summarize(all_records)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", all_records)
        write_acquired_ids(out / "acquired_ids.csv", all_records)
        write_summary_csv(out / "matrix_summary.csv", summary)
        (out / "manifest.txt").write_text(
            format_kv({**base_mapping, **{f"axis.{n}": axes[n] for n in names}})
        )
    return all_records, summary
