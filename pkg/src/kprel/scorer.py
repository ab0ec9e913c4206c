"""Trainable binary relevance scorer: a logistic model over pair features.

The functional surface (`train`, `score`, `save_model`, `load_model`)
works on domain records; `RelevanceScorer` wraps the same core as a
scikit-learn estimator so it composes with Pipelines and model selection.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import (
    DatasetError,
    InputError,
    ModelFormatError,
    SchemaMismatchError,
    TrainingError,
)
from .labels import LABEL_RELEVANT, LabeledExample
from .text import FEATURE_SCHEMA_HASH, N_FEATURES, extract_features, featurize_pairs

MODEL_FORMAT = "kprel-model/1"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    seed: int = 0
    l2: float = 1e-4
    positive_class_weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        # epochs=0 is allowed: it returns the zero-initialized model untouched.
        if self.epochs < 0:
            raise InputError("epochs must be non-negative")
        if self.l2 < 0:
            raise InputError("l2 must be non-negative")
        if not self.positive_class_weight > 0:
            raise InputError("positive_class_weight must be positive")


@dataclass(frozen=True)
class RelevanceModel:
    """Immutable trained scorer: 7 weights matching the feature order."""

    weights: tuple[float, ...]
    version: str
    trained_on: str
    feature_schema_hash: str = FEATURE_SCHEMA_HASH

    def __post_init__(self) -> None:
        if len(self.weights) != N_FEATURES:
            raise InputError(f"expected {N_FEATURES} weights, got {len(self.weights)}")
        if not all(math.isfinite(w) for w in self.weights):
            raise InputError("model weights must all be finite")


@dataclass(frozen=True)
class TrainResult:
    model: RelevanceModel
    final_loss: float
    epoch_losses: tuple[float, ...] = field(repr=False)
    n_examples: int = 0
    n_positive: int = 0
    train_accuracy: float = 0.0


def _stable_sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _sigmoid_vec(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _group_rows(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collapse identical (row, label) pairs into counts, keeping first-seen order.

    Counting keeps the mean loss bitwise invariant under uniform dataset
    duplication: doubling every count and the total scales each float
    operation by an exact power of two.
    """
    index: dict[tuple[bytes, float], int] = {}
    rows: list[np.ndarray] = []
    labels: list[float] = []
    counts: list[int] = []
    for row, label in zip(X, y):
        key = (row.tobytes(), float(label))
        at = index.get(key)
        if at is None:
            index[key] = len(rows)
            rows.append(row)
            labels.append(float(label))
            counts.append(1)
        else:
            counts[at] += 1
    return (
        np.array(rows, dtype=np.float64),
        np.array(labels, dtype=np.float64),
        np.array(counts, dtype=np.float64),
    )


def _loss_and_grad(
    w: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    counts: np.ndarray,
    total: float,
    l2: float,
    pos_weight: float,
) -> tuple[float, np.ndarray]:
    """Mean class-weighted cross-entropy with L2 on all weights but the bias."""
    z = X @ w
    per_example = pos_weight * y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
    data_loss = float((per_example * counts).sum() / total)

    reg_mask = np.ones_like(w)
    reg_mask[-1] = 0.0  # bias term is unpenalized
    loss = data_loss + 0.5 * l2 * float((reg_mask * w * w).sum())

    p = _sigmoid_vec(z)
    residual = pos_weight * y * (p - 1.0) + (1.0 - y) * p
    grad = X.T @ (residual * counts) / total + l2 * reg_mask * w
    return loss, grad


def _fit_logistic(X: np.ndarray, y: np.ndarray, config: TrainConfig) -> tuple[np.ndarray, list[float]]:
    """Full-batch gradient descent from zero weights; returns weights and losses.

    epoch_losses[k] is the loss after k update steps (length epochs + 1).
    """
    Xu, yu, counts = _group_rows(X, y)
    total = float(counts.sum())
    w = np.zeros(X.shape[1], dtype=np.float64)

    losses: list[float] = []
    # overflow on divergence is expected and caught by the finiteness checks
    with np.errstate(over="ignore", invalid="ignore"):
        loss, grad = _loss_and_grad(
            w, Xu, yu, counts, total, config.l2, config.positive_class_weight
        )
        losses.append(loss)
        for _ in range(config.epochs):
            w = w - config.learning_rate * grad
            if not np.isfinite(w).all():
                raise TrainingError(
                    "weights diverged to non-finite values; lower the learning rate"
                )
            loss, grad = _loss_and_grad(
                w, Xu, yu, counts, total, config.l2, config.positive_class_weight
            )
            losses.append(loss)
    if not math.isfinite(losses[-1]):
        raise TrainingError("training loss is non-finite; lower the learning rate")
    return w, losses


def _labels_to_float(dataset: Sequence[LabeledExample]) -> np.ndarray:
    return np.array([1.0 if e.label == LABEL_RELEVANT else 0.0 for e in dataset])


def _model_version(weights: np.ndarray, trained_on: str) -> str:
    digest = hashlib.sha256(weights.tobytes()).hexdigest()[:8]
    return f"{trained_on}-{digest}"


def train(
    dataset: Sequence[LabeledExample],
    config: TrainConfig = TrainConfig(),
    trained_on: str = "custom",
) -> TrainResult:
    """Train a relevance model on labeled examples.

    Deterministic given (dataset order, config). Raises DatasetError unless
    both classes are present, and InputError when an example cannot be
    featurized.
    """
    if not dataset:
        raise DatasetError("cannot train on an empty dataset")
    y = _labels_to_float(dataset)
    if y.min() == y.max():
        raise DatasetError("cannot train on a single-class dataset; both labels are required")
    X = featurize_pairs((e.keyphrase, e.category, e.title) for e in dataset)

    weights, losses = _fit_logistic(X, y, config)
    model = RelevanceModel(
        weights=tuple(float(v) for v in weights),
        version=_model_version(weights, trained_on),
        trained_on=trained_on,
    )
    predicted = np.array([_stable_sigmoid(float(np.dot(row, weights))) for row in X]) >= 0.5
    return TrainResult(
        model=model,
        final_loss=losses[-1],
        epoch_losses=tuple(losses),
        n_examples=len(dataset),
        n_positive=int(y.sum()),
        train_accuracy=float((predicted == (y == 1.0)).mean()),
    )


def _check_schema(model: RelevanceModel) -> None:
    if model.feature_schema_hash != FEATURE_SCHEMA_HASH:
        raise SchemaMismatchError(
            f"model was built for feature schema {model.feature_schema_hash}, "
            f"this library has {FEATURE_SCHEMA_HASH}"
        )


def score(model: RelevanceModel, keyphrase: str, category: str, title: str) -> float:
    """Sigmoid of the weighted feature sum; pure and deterministic."""
    _check_schema(model)
    feats = extract_features(keyphrase, category, title)
    return _stable_sigmoid(float(np.dot(feats, np.asarray(model.weights))))


def score_features(model: RelevanceModel, features: np.ndarray) -> np.ndarray:
    """Score precomputed feature rows, bit-identical to per-pair score()."""
    _check_schema(model)
    w = np.asarray(model.weights)
    return np.array([_stable_sigmoid(float(np.dot(row, w))) for row in features])


def jaccard_baseline(weight: float = 1.0, bias: float = 0.0) -> RelevanceModel:
    """The production-style token-overlap filter as a degenerate linear model.

    Scores are a strictly increasing function of raw Jaccard when
    weight > 0, so rankings and threshold decisions match the raw filter.
    """
    if weight <= 0:
        raise InputError("jaccard_baseline requires a positive weight")
    weights = (float(weight), 0.0, 0.0, 0.0, 0.0, 0.0, float(bias))
    return RelevanceModel(
        weights=weights,
        version=_model_version(np.array(weights), "jaccard_baseline"),
        trained_on="jaccard_baseline",
    )


def save_model(model: RelevanceModel) -> bytes:
    """Serialize a model to versioned JSON; round-trips weights bit-exactly."""
    doc = {
        "format": MODEL_FORMAT,
        "version": model.version,
        "trained_on": model.trained_on,
        "feature_schema_hash": model.feature_schema_hash,
        "weights": list(model.weights),
        "metadata": {"n_features": N_FEATURES},
    }
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def load_model(payload: bytes) -> RelevanceModel:
    """Parse save_model output, rejecting unknown formats and bad schemas."""
    try:
        doc = json.loads(payload)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model payload: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("corrupt model payload: expected a JSON object")
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(
            f"unsupported model format {doc.get('format')!r}; expected {MODEL_FORMAT}"
        )
    try:
        weights = tuple(float(v) for v in doc["weights"])
        model = RelevanceModel(
            weights=weights,
            version=str(doc["version"]),
            trained_on=str(doc["trained_on"]),
            feature_schema_hash=str(doc["feature_schema_hash"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model payload: {exc}") from exc
    _check_schema(model)
    return model


class RelevanceScorer(BaseEstimator, ClassifierMixin):
    """Scikit-learn classifier over keyphrase/title overlap features.

    Accepts either a sequence of (keyphrase, category, title) string
    triples or a precomputed (n, 7) feature matrix, in both fit and
    predict. Labels are 0 (irrelevant) / 1 (relevant).
    """

    def __init__(
        self,
        learning_rate: float = 0.1,
        epochs: int = 200,
        seed: int = 0,
        l2: float = 1e-4,
        positive_class_weight: float = 1.0,
    ):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.l2 = l2
        self.positive_class_weight = positive_class_weight

    def _config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            seed=self.seed,
            l2=self.l2,
            positive_class_weight=self.positive_class_weight,
        )

    def _features(self, X) -> np.ndarray:
        if isinstance(X, np.ndarray) and X.ndim == 2 and X.dtype != object:
            X = check_array(X, dtype=np.float64)
            if X.shape[1] != N_FEATURES:
                raise InputError(f"expected {N_FEATURES} feature columns, got {X.shape[1]}")
            return X
        return featurize_pairs(X)

    def fit(self, X, y) -> "RelevanceScorer":
        Xm = self._features(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != Xm.shape[0]:
            raise InputError(f"X has {Xm.shape[0]} rows but y has {y.shape[0]} labels")
        present = set(np.unique(y).tolist())
        if not present <= {0.0, 1.0}:
            raise InputError(f"labels must be binary 0/1, got {sorted(present)}")
        if len(present) < 2:
            raise DatasetError("cannot fit on a single-class dataset; both labels are required")

        weights, losses = _fit_logistic(Xm, y, self._config())
        self.model_ = RelevanceModel(
            weights=tuple(float(v) for v in weights),
            version=_model_version(weights, "sklearn"),
            trained_on="sklearn",
        )
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = N_FEATURES
        self.final_loss_ = losses[-1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        p1 = score_features(self.model_, self._features(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)
