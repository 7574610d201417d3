"""Feed-forward softmax classifier trained with per-example-weighted cross-entropy.

Plain numpy implementation: ReLU hidden layers, log-sum-exp softmax, analytic
backprop, minibatch SGD or Adam. Small on purpose; the interesting behavior
of the system lives in the round loop, not the backbone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

LOG_CLAMP = 1e-12  # floor for log() inputs in the loss


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    input_dim: int
    num_classes: int
    hidden: tuple[int, ...] = (32,)
    learning_rate: float = 5e-4
    optimizer: str = "adam"  # "adam" | "sgd"
    batch_size: int = 32
    epochs_supervised: int = 10
    epochs_semi: int = 3

    def __post_init__(self):
        if self.input_dim <= 0 or self.num_classes <= 1:
            raise ModelError("input_dim must be positive and num_classes at least 2")
        if self.learning_rate <= 0 or self.batch_size <= 0:
            raise ModelError("learning rate and batch size must be positive")
        if self.epochs_supervised <= 0 or self.epochs_semi <= 0:
            raise ModelError("epoch counts must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ModelError(f"unknown optimizer {self.optimizer!r}")
        if any(h <= 0 for h in self.hidden):
            raise ModelError("hidden sizes must be positive")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden, self.num_classes]
        return list(zip(sizes[:-1], sizes[1:]))


@dataclass
class Classifier:
    weights: list[np.ndarray]  # weights[l]: (d_in, d_out)
    biases: list[np.ndarray]  # biases[l]: (d_out,)
    config: ClassifierConfig

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "Classifier":
        return Classifier([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.config)


def init_classifier(
    config: ClassifierConfig,
    seed: int,
    warm_start: Sequence[np.ndarray] | None = None,
) -> Classifier:
    """Seeded small-magnitude init; a warm_start parameter blob overrides it."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in config.layer_dims:
        weights.append(rng.standard_normal((d_in, d_out)) / np.sqrt(d_in))
        biases.append(np.zeros(d_out))
    model = Classifier(weights, biases, config)
    if warm_start is not None:
        set_flat_params(model, np.concatenate([np.ravel(p) for p in warm_start]))
    return model


def _forward(model: Classifier, X: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns (post-ReLU activations per hidden layer incl. input, probs)."""
    acts = [X]
    a = X
    n_layers = len(model.weights)
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        if l < n_layers - 1:
            a = np.maximum(z, 0.0)
            acts.append(a)
        else:
            logits = z
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return acts, probs


def predict_proba(model: Classifier, X: np.ndarray) -> np.ndarray:
    """Softmax probabilities for a batch, shape (n, num_classes)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.config.input_dim:
        raise ModelError(f"feature dim {X.shape[1]} != input_dim {model.config.input_dim}")
    _, probs = _forward(model, X)
    return probs


def predict(model: Classifier, x: np.ndarray) -> np.ndarray:
    """Probability vector for one example."""
    return predict_proba(model, np.asarray(x, dtype=np.float64).reshape(1, -1))[0]


def penultimate_features(model: Classifier, X: np.ndarray) -> np.ndarray:
    """Activations feeding the output layer (the input itself for a linear model)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    acts, _ = _forward(model, X)
    return acts[-1]


def weighted_loss(model: Classifier, X, y, w) -> float:
    _, probs = _forward(model, np.asarray(X, dtype=np.float64))
    p_true = np.clip(probs[np.arange(len(y)), y], LOG_CLAMP, None)
    return float(np.mean(np.asarray(w) * -np.log(p_true)))


def _loss_and_grads(model, X, y, w):
    """Batch-mean weighted cross-entropy and its analytic gradients."""
    n = len(y)
    acts, probs = _forward(model, X)
    p_true = np.clip(probs[np.arange(n), y], LOG_CLAMP, None)
    loss = float(np.mean(w * -np.log(p_true)))

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits *= (w / n)[:, None]

    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    delta = dlogits
    for l in range(len(model.weights) - 1, -1, -1):
        grads_w[l] = acts[l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (acts[l] > 0)
    return loss, grads_w, grads_b


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, model, grads_w, grads_b):
        for W, b, gw, gb in zip(model.weights, model.biases, grads_w, grads_b):
            W -= self.lr * gw
            b -= self.lr * gb


class _Adam:
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    def __init__(self, lr, model):
        self.lr = lr
        self.t = 0
        self.m = [np.zeros_like(p) for p in model.weights + model.biases]
        self.v = [np.zeros_like(p) for p in model.weights + model.biases]

    def step(self, model, grads_w, grads_b):
        self.t += 1
        params = model.weights + model.biases
        grads = grads_w + grads_b
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _make_optimizer(config: ClassifierConfig, model: Classifier, lr: float | None):
    lr = config.learning_rate if lr is None else lr
    return _Adam(lr, model) if config.optimizer == "adam" else _Sgd(lr)


def _validate_training_inputs(config, X, y, w):
    if len(y) == 0:
        raise ModelError("empty training set")
    if X.shape[1] != config.input_dim:
        raise ModelError("feature dimension mismatch")
    if y.min() < 0 or y.max() >= config.num_classes:
        raise ModelError("label out of range")
    if w.min() < 0 or w.max() > 1:
        raise ModelError("weights must lie in [0, 1]")


def fit_batches(
    model: Classifier,
    batches: Iterable[tuple[np.ndarray, np.ndarray, np.ndarray]],
    lr: float | None = None,
) -> Classifier:
    """One optimizer pass over an explicit (X, y, w) minibatch stream.

    Fresh optimizer moments every call; the input model is not mutated.
    """
    model = model.copy()
    opt = _make_optimizer(model.config, model, lr)
    for Xb, yb, wb in batches:
        _, gw, gb = _loss_and_grads(model, Xb, yb, wb)
        opt.step(model, gw, gb)
    return model


def _epoch_batches(X, y, w, batch_size, epochs, shuffle_seed) -> Iterator:
    rng = np.random.default_rng(shuffle_seed) if shuffle_seed is not None else None
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n) if rng is not None else np.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            yield X[idx], y[idx], w[idx]


def train_weighted(
    model: Classifier,
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray | None = None,
    *,
    epochs: int | None = None,
    shuffle_seed: int | None = None,
    lr: float | None = None,
) -> Classifier:
    """Minibatch training on mean per-batch weighted cross-entropy.

    w=None means uniform weight 1. shuffle_seed=None keeps the given example
    order (used by controlled batching tests); otherwise each epoch reshuffles
    from the seeded stream. Returns a new classifier.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=np.float64)
    config = model.config
    _validate_training_inputs(config, X, y, w)
    epochs = config.epochs_supervised if epochs is None else epochs
    return fit_batches(model, _epoch_batches(X, y, w, config.batch_size, epochs, shuffle_seed), lr)


# ---------------------------------------------------------------------------
# Finite-difference verification of the analytic gradients


def get_flat_params(model: Classifier) -> np.ndarray:
    return np.concatenate([p.ravel() for p in model.weights + model.biases])


def set_flat_params(model: Classifier, flat: np.ndarray) -> None:
    if flat.size != model.n_params:
        raise ModelError(f"expected {model.n_params} params, got {flat.size}")
    offset = 0
    for p in model.weights + model.biases:
        p[...] = flat[offset : offset + p.size].reshape(p.shape)
        offset += p.size


def gradient_check(model: Classifier, X, y, w, step: float = 1e-5) -> float:
    """Max relative deviation between analytic and central-difference gradients."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    model = model.copy()
    _, gw, gb = _loss_and_grads(model, X, y, w)
    analytic = np.concatenate([g.ravel() for g in gw + gb])

    theta = get_flat_params(model)
    numeric = np.zeros_like(theta)
    for i in range(theta.size):
        for sign in (+1.0, -1.0):
            theta[i] += sign * step
            set_flat_params(model, theta)
            numeric[i] += sign * weighted_loss(model, X, y, w)
            theta[i] -= sign * step
        numeric[i] /= 2 * step
    set_flat_params(model, theta)

    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# Parameter serialization: config header + flat float64 array


def save_classifier(path: str | Path, model: Classifier) -> None:
    header = {
        "input_dim": model.config.input_dim,
        "num_classes": model.config.num_classes,
        "hidden": list(model.config.hidden),
        "learning_rate": model.config.learning_rate,
        "optimizer": model.config.optimizer,
        "batch_size": model.config.batch_size,
        "epochs_supervised": model.config.epochs_supervised,
        "epochs_semi": model.config.epochs_semi,
    }
    blob = json.dumps(header).encode() + b"\n" + get_flat_params(model).astype(np.float64).tobytes()
    Path(path).write_bytes(blob)


def load_classifier(path: str | Path) -> Classifier:
    blob = Path(path).read_bytes()
    head, _, raw = blob.partition(b"\n")
    kwargs = json.loads(head)
    kwargs["hidden"] = tuple(kwargs["hidden"])
    config = ClassifierConfig(**kwargs)
    model = init_classifier(config, seed=0)
    set_flat_params(model, np.frombuffer(raw, dtype=np.float64).copy())
    return model
