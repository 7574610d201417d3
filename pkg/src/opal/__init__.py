"""opal: pool-based active learning with outliers.

Joint K+1-way ensemble training, entropy-weighted pseudo-labeling, and
pluggable acquisition scorers with optional outlier filtering, on synthetic
cluster benchmarks or precomputed-feature datasets.
"""

from .acquisition import (
    AcquisitionConfig,
    ScoredExample,
    apply_filtering,
    score_entropy,
    score_max_confidence,
    score_random,
    score_vr,
    select_coreset,
    select_top_b,
)
from .ensemble import (
    EnsembleConfig,
    EnsemblePrediction,
    compute_vr,
    ensemble_predict,
    entropy_weight,
    pseudo_label_pool,
    train_round,
)
from .experiment import (
    ExperimentConfig,
    ModelParams,
    run_experiment,
    run_round_zero,
    run_variant_matrix,
)
from .metrics import (
    RoundRecord,
    eval_test_accuracy,
    inlier_rate,
    pseudo_label_accuracy,
    vr_histogram,
)
from .model import Classifier, ClassifierConfig, gradient_check, init_classifier, predict, train_weighted
from .pool import (
    BenchmarkSpec,
    Example,
    Oracle,
    PoolState,
    annotate,
    generate_benchmark,
    load_feature_dataset,
    save_dataset,
)

__version__ = "0.1.0"
