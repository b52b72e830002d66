"""Stacking combiner for a discrete and a probabilistic base classifier.

The discrete base's prediction becomes a K-dim one-hot vector, the
probabilistic base contributes a K-dim distribution, and a linear classifier
trained on the 2K-dim concatenation arbitrates. Training is full-batch
gradient descent on L2-regularized cross-entropy, seeded and therefore
reproducible.

``StackingEnsemble`` wraps the same machinery in a scikit-learn estimator so
it plugs into pipelines and model selection; the flat functions remain the
contract used by the engine and CLI.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

log = logging.getLogger("normbridge.stacking")

PROB_ATOL = 1e-9


def one_hot(class_index: int, k: int) -> np.ndarray:
    if not 0 <= class_index < k:
        raise ValueError(f"class index {class_index} out of range for k={k}")
    vec = np.zeros(k, dtype=float)
    vec[class_index] = 1.0
    return vec


def stack_features(discrete: Sequence[float], probs: Sequence[float]) -> np.ndarray:
    """Concatenate a one-hot vector with a distribution, one-hot first."""
    d = np.asarray(discrete, dtype=float)
    p = np.asarray(probs, dtype=float)
    if d.ndim != 1 or p.ndim != 1 or d.shape != p.shape:
        raise ValueError(f"length mismatch: {d.shape} vs {p.shape}")
    if sorted(np.unique(d)) not in ([0.0, 1.0], [1.0]) or d.sum() != 1.0:
        raise ValueError("first block must be a one-hot vector")
    if (p < 0).any() or abs(p.sum() - 1.0) > PROB_ATOL:
        raise ValueError("second block must be a distribution summing to 1")
    return np.concatenate([d, p])


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    l2: float = 1e-3
    epochs: int = 500
    seed: int = 0


@dataclass(frozen=True)
class StackingModel:
    """Linear classifier over stacked features: K x 2K weights plus K biases."""

    weights: np.ndarray
    bias: np.ndarray
    degenerate: bool = False

    def __post_init__(self) -> None:
        if self.weights.ndim != 2 or self.weights.shape[1] != 2 * self.weights.shape[0]:
            raise ValueError(f"weights must be K x 2K, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias length must match class count")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("model parameters must be finite")

    @property
    def k(self) -> int:
        return self.weights.shape[0]


def cross_entropy_loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus 0.5*l2*||W||^2, with its analytic gradient."""
    n = features.shape[0]
    probs = softmax(features @ weights.T + bias)
    picked = np.clip(probs[np.arange(n), labels], 1e-300, None)
    loss = -float(np.log(picked).mean()) + 0.5 * l2 * float((weights**2).sum())
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    grad_w = delta.T @ features / n + l2 * weights
    grad_b = delta.mean(axis=0)
    return loss, grad_w, grad_b


def train_stacker(
    features: Sequence[Sequence[float]],
    labels: Sequence[int],
    config: TrainConfig = TrainConfig(),
) -> StackingModel:
    """Full-batch gradient descent; identical inputs and seed give an
    identical model. Single-class data still trains but is flagged degenerate."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or x.shape[1] % 2 != 0 or x.shape[1] == 0:
        raise ValueError(f"features must be an n x 2K matrix, got {x.shape}")
    if y.shape != (x.shape[0],) or len(y) == 0:
        raise ValueError("labels must align with features")
    k = x.shape[1] // 2
    if (y < 0).any() or (y >= k).any():
        raise ValueError(f"labels must lie in [0, {k})")

    degenerate = len(np.unique(y)) < k
    if degenerate:
        log.warning("training data covers %d of %d classes; model flagged degenerate",
                    len(np.unique(y)), k)

    rng = np.random.default_rng(config.seed)
    weights = rng.uniform(-0.01, 0.01, size=(k, 2 * k))
    bias = np.zeros(k)
    for _ in range(config.epochs):
        _, grad_w, grad_b = cross_entropy_loss_and_grad(weights, bias, x, y, config.l2)
        weights = weights - config.learning_rate * grad_w
        bias = bias - config.learning_rate * grad_b
    return StackingModel(weights=weights, bias=bias, degenerate=degenerate)


def predict(model: StackingModel, feature: Sequence[float]) -> tuple[int, np.ndarray]:
    """Class index (lowest index wins ties) plus the softmax distribution."""
    f = np.asarray(feature, dtype=float)
    if f.shape != (2 * model.k,):
        raise ValueError(f"feature must have length {2 * model.k}, got {f.shape}")
    dist = softmax(model.weights @ f + model.bias)
    return int(np.argmax(dist)), dist


def save_model(model: StackingModel, path: str | Path) -> None:
    """Flat text format: K, then row-major weights, then bias, full precision."""
    lines = [str(model.k)]
    for row in model.weights:
        lines.append(" ".join(repr(float(v)) for v in row))
    lines.append(" ".join(repr(float(v)) for v in model.bias))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> StackingModel:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"empty model file: {path}")
    k = int(lines[0])
    if len(lines) != k + 2:
        raise ValueError(f"model file should have {k + 2} lines, found {len(lines)}")
    weights = np.array([[float(v) for v in lines[1 + i].split()] for i in range(k)])
    bias = np.array([float(v) for v in lines[k + 1].split()])
    return StackingModel(weights=weights, bias=bias)


class StackingEnsemble(BaseEstimator, ClassifierMixin):
    """Scikit-learn estimator facade over the seeded gradient-descent trainer.

    X rows are stacked feature vectors (one-hot block then distribution
    block); y holds class indices below X.shape[1] // 2.
    """

    def __init__(
        self,
        learning_rate: float = 0.1,
        l2: float = 1e-3,
        epochs: int = 500,
        seed: int = 0,
    ) -> None:
        self.learning_rate = learning_rate
        self.l2 = l2
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y) -> "StackingEnsemble":
        x = np.asarray(X, dtype=float)
        labels = np.asarray(y, dtype=int)
        if x.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        if labels.shape != (x.shape[0],):
            raise ValueError("y must align with X rows")
        config = TrainConfig(
            learning_rate=self.learning_rate, l2=self.l2, epochs=self.epochs, seed=self.seed
        )
        self.model_ = train_stacker(x, labels, config)
        self.classes_ = np.arange(self.model_.k)
        return self

    def _check_fitted(self) -> StackingModel:
        model = getattr(self, "model_", None)
        if model is None:
            raise NotFittedError("StackingEnsemble is not fitted; call fit first")
        return model

    def predict_proba(self, X) -> np.ndarray:
        model = self._check_fitted()
        x = np.atleast_2d(np.asarray(X, dtype=float))
        if x.shape[1] != 2 * model.k:
            raise ValueError(f"X must have {2 * model.k} columns")
        return softmax(x @ model.weights.T + model.bias)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)
