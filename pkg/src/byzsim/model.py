"""Loss models with analytic gradients.

Every model works on a flat parameter vector of length ``dim``; the
quadratic model treats a sample's features as the point it is pulled to,
the classifiers use the usual weight/bias layout packed row-major.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, UnsupportedMetricError


def _check_batch(model, x, features):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise ConfigError(f"estimate has shape {x.shape}, model expects ({model.dim},)")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[None, :]
    if features.shape[0] == 0:
        raise ConfigError("batch is empty")
    if features.shape[1] != model.n_features:
        raise ConfigError(
            f"sample has {features.shape[1]} features, model expects {model.n_features}")
    return x, features


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class QuadraticModel:
    """l(x, xi) = 0.5 * ||x - xi||^2."""

    kind = "quadratic"
    classifier = False

    def __init__(self, dim: int):
        if dim < 1:
            raise ConfigError("quadratic model needs dim >= 1")
        self.dim = dim
        self.n_features = dim

    def loss(self, x, features, labels=None) -> float:
        x, features = _check_batch(self, x, features)
        diff = features - x
        return float(0.5 * np.mean(np.sum(diff * diff, axis=1)))

    def gradient(self, x, features, labels=None) -> np.ndarray:
        x, features = _check_batch(self, x, features)
        return x - features.mean(axis=0)

    def predict(self, x, features):
        raise UnsupportedMetricError("quadratic model has no class predictions")


class SoftmaxRegression:
    """Multinomial logistic regression; parameters are W (C x p) then b (C)."""

    kind = "softmax"
    classifier = True

    def __init__(self, n_features: int, n_classes: int):
        if n_features < 1 or n_classes < 2:
            raise ConfigError("softmax regression needs n_features >= 1 and n_classes >= 2")
        self.n_features = n_features
        self.n_classes = n_classes
        self.dim = n_classes * n_features + n_classes

    def unpack(self, x):
        cp = self.n_classes * self.n_features
        return x[:cp].reshape(self.n_classes, self.n_features), x[cp:]

    def logits(self, x, features):
        W, b = self.unpack(x)
        return features @ W.T + b

    def loss(self, x, features, labels) -> float:
        x, features = _check_batch(self, x, features)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        logp = _log_softmax(self.logits(x, features))
        return float(-np.mean(logp[np.arange(len(labels)), labels]))

    def gradient(self, x, features, labels) -> np.ndarray:
        x, features = _check_batch(self, x, features)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        n = features.shape[0]
        delta = np.exp(_log_softmax(self.logits(x, features)))
        delta[np.arange(n), labels] -= 1.0
        delta /= n
        return np.concatenate([(delta.T @ features).ravel(), delta.sum(axis=0)])

    def predict(self, x, features):
        x, features = _check_batch(self, x, features)
        # np.argmax picks the first maximum: ties go to the lowest class index
        return np.argmax(self.logits(x, features), axis=1)


class MLP:
    """One tanh hidden layer. Layout: W1 (h x p), b1 (h), W2 (C x h), b2 (C)."""

    kind = "mlp"
    classifier = True

    def __init__(self, n_features: int, hidden: int, n_classes: int):
        if not 1 <= hidden <= 64:
            raise ConfigError("mlp hidden width must be in [1, 64]")
        if n_features < 1 or n_classes < 2:
            raise ConfigError("mlp needs n_features >= 1 and n_classes >= 2")
        self.n_features = n_features
        self.hidden = hidden
        self.n_classes = n_classes
        self.dim = hidden * n_features + hidden + n_classes * hidden + n_classes

    def unpack(self, x):
        p, h, c = self.n_features, self.hidden, self.n_classes
        o = 0
        W1 = x[o:o + h * p].reshape(h, p)
        o += h * p
        b1 = x[o:o + h]
        o += h
        W2 = x[o:o + c * h].reshape(c, h)
        o += c * h
        return W1, b1, W2, x[o:]

    def _forward(self, x, features):
        W1, b1, W2, b2 = self.unpack(x)
        hidden = np.tanh(features @ W1.T + b1)
        return hidden, hidden @ W2.T + b2

    def loss(self, x, features, labels) -> float:
        x, features = _check_batch(self, x, features)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        _, logits = self._forward(x, features)
        logp = _log_softmax(logits)
        return float(-np.mean(logp[np.arange(len(labels)), labels]))

    def gradient(self, x, features, labels) -> np.ndarray:
        x, features = _check_batch(self, x, features)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        n = features.shape[0]
        _, _, W2, _ = self.unpack(x)
        hidden, logits = self._forward(x, features)
        d_out = np.exp(_log_softmax(logits))
        d_out[np.arange(n), labels] -= 1.0
        d_out /= n
        d_hidden = (d_out @ W2) * (1.0 - hidden * hidden)
        return np.concatenate([
            (d_hidden.T @ features).ravel(),
            d_hidden.sum(axis=0),
            (d_out.T @ hidden).ravel(),
            d_out.sum(axis=0),
        ])

    def predict(self, x, features):
        x, features = _check_batch(self, x, features)
        return np.argmax(self._forward(x, features)[1], axis=1)


def make_model(kind: str, n_features: int, n_classes: int = 2, hidden: int = 16):
    if kind == "quadratic":
        return QuadraticModel(n_features)
    if kind == "softmax":
        return SoftmaxRegression(n_features, n_classes)
    if kind == "mlp":
        return MLP(n_features, hidden, n_classes)
    raise ConfigError(f"unknown model kind {kind!r}")


def accuracy(model, x, features, labels) -> float:
    """Fraction of samples whose argmax prediction equals the label."""
    if not model.classifier:
        raise UnsupportedMetricError(f"accuracy is undefined for the {model.kind} model")
    labels = np.asarray(labels).reshape(-1)
    if labels.shape[0] == 0:
        raise ConfigError("accuracy needs a non-empty test set")
    return float(np.mean(model.predict(x, features) == labels))
