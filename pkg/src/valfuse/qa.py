"""Bias-free linear stacker for multiple-choice QA.

Each model contributes its per-answer confidence scores; the stacker learns
one scalar weight per model so that ``logits[b, a] = sum_i w[i] * X[b, i, a]``
and trains it with softmax cross-entropy by full-batch gradient descent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ArgumentError, TrainingError
from .types import QaLabels, QaScoreTensor
from .validation import check_qa_labels, check_qa_tensor


@dataclass(frozen=True)
class QaTrainConfig:
    learning_rate: float = 0.1
    max_epochs: int = 500
    convergence_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ArgumentError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ArgumentError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not self.convergence_epsilon > 0:
            raise ArgumentError("convergence_epsilon must be positive")


@dataclass(frozen=True, eq=False)
class QaStackerWeights:
    w: np.ndarray
    final_loss: float
    epochs_run: int
    loss_curve: tuple[float, ...] = field(default=())

    @property
    def normalized(self) -> np.ndarray:
        """Weights rescaled to sum to 1 (for reporting only)."""
        total = self.w.sum()
        return self.w / total if total != 0 else self.w.copy()


def _weights_for(X: QaScoreTensor, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size != X.n_models:
        raise ArgumentError(f"{w.size} weights for {X.n_models} models")
    return w


def qa_forward(X: QaScoreTensor, w) -> np.ndarray:
    w = _weights_for(X, w)
    return np.einsum("bia,i->ba", X.scores, w)


def softmax_cross_entropy(logits, label: int) -> float:
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= label < z.size:
        raise ArgumentError(f"label {label} out of range for {z.size} logits")
    m = z.max()
    return float(m + math.log(np.exp(z - m).sum()) - z[label])


def _mean_loss(logits: np.ndarray, y: np.ndarray) -> float:
    lse = logsumexp(logits, axis=1)
    return float(np.mean(lse - logits[np.arange(y.size), y]))


def qa_loss(X: QaScoreTensor, labels: QaLabels, w) -> float:
    """Mean cross-entropy of the stacked logits over the batch."""
    return _mean_loss(qa_forward(X, w), labels.labels)


def qa_gradient(X: QaScoreTensor, labels: QaLabels, w) -> np.ndarray:
    y = labels.labels
    if y.size != X.n_examples:
        raise ArgumentError(f"{y.size} labels for {X.n_examples} examples")
    residual = softmax(qa_forward(X, w), axis=1)
    residual[np.arange(y.size), y] -= 1.0
    return np.einsum("ba,bia->i", residual, X.scores) / y.size


def train_qa_weights(X: QaScoreTensor, labels: QaLabels,
                     config: QaTrainConfig | None = None) -> QaStackerWeights:
    """Full-batch gradient descent from the uniform point ``1 / n_models``.

    Stops after ``max_epochs`` updates or once the loss changes by less than
    ``convergence_epsilon``.
    """
    config = config or QaTrainConfig()
    check_qa_labels(labels, X.n_examples, X.n_answers)
    w = np.full(X.n_models, 1.0 / X.n_models)
    loss = qa_loss(X, labels, w)
    curve = [loss]
    epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            w = w - config.learning_rate * qa_gradient(X, labels, w)
            new_loss = qa_loss(X, labels, w)
        if not (math.isfinite(new_loss) and np.all(np.isfinite(w))):
            raise TrainingError(f"loss became {new_loss!r} at epoch {epoch}")
        curve.append(new_loss)
        epochs = epoch
        converged = abs(new_loss - loss) < config.convergence_epsilon
        loss = new_loss
        if converged:
            break
    w.setflags(write=False)
    return QaStackerWeights(w, loss, epochs, tuple(curve))


def qa_predict(X: QaScoreTensor, w) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the smaller answer index
    return np.argmax(qa_forward(X, w), axis=1)


class LinearStacker(ClassifierMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`train_qa_weights`.

    ``X`` has shape ``(n_examples, n_models, n_answers)``; ``y`` holds answer
    indices. ``classes_`` are the answer indices ``0 .. n_answers - 1``.
    """

    def __init__(self, learning_rate=0.1, max_epochs=500, convergence_epsilon=1e-8, seed=0):
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.convergence_epsilon = convergence_epsilon
        self.seed = seed

    def fit(self, X, y):
        X = check_qa_tensor(X)
        labels = check_qa_labels(y, X.n_examples, X.n_answers)
        cfg = QaTrainConfig(self.learning_rate, self.max_epochs,
                            self.convergence_epsilon, self.seed)
        fitted = train_qa_weights(X, labels, cfg)
        self.coef_ = fitted.w
        self.normalized_coef_ = fitted.normalized
        self.loss_ = fitted.final_loss
        self.loss_curve_ = list(fitted.loss_curve)
        self.n_iter_ = fitted.epochs_run
        self.classes_ = np.arange(X.n_answers)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        return qa_forward(check_qa_tensor(X), self.coef_)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        return qa_predict(check_qa_tensor(X), self.coef_)
