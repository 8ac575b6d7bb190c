"""Desk-scale differentiable models on flat parameter vectors.

A model is a flat float64 vector plus a ModelSpec describing how to read
it. Losses and gradients are exact, deterministic, and averaged over the
batch; tests check them against finite differences.
"""

from dataclasses import dataclass

import numpy as np

LINEAR_REGRESSION = "linear_regression"
MULTINOMIAL_LOGISTIC = "multinomial_logistic"


@dataclass(frozen=True)
class ModelSpec:
    family: str
    d_in: int
    n_classes: int = 0

    def __post_init__(self):
        if self.family not in (LINEAR_REGRESSION, MULTINOMIAL_LOGISTIC):
            raise ValueError(f"unknown model family {self.family!r}")
        if self.family == MULTINOMIAL_LOGISTIC and self.n_classes < 2:
            raise ValueError("logistic models need n_classes >= 2")

    @property
    def d_model(self) -> int:
        """Flat parameter dimension; logistic carries one bias per class."""
        if self.family == LINEAR_REGRESSION:
            return self.d_in
        return self.d_in * self.n_classes + self.n_classes


def zero_params(spec: ModelSpec) -> np.ndarray:
    return np.zeros(spec.d_model)


def _check_batch(spec, w, features, targets=None):
    if w.shape != (spec.d_model,):
        raise ValueError(f"parameter vector must have shape ({spec.d_model},), got {w.shape}")
    if features.ndim != 2 or features.shape[1] != spec.d_in:
        raise ValueError(f"features must be (batch, {spec.d_in}), got {features.shape}")
    if targets is not None and len(targets) != len(features):
        raise ValueError("features and targets disagree on batch size")
    if targets is not None and len(features) == 0:
        raise ValueError("batch must be nonempty")


def _logits(spec, w, features):
    nw = spec.n_classes * spec.d_in
    mat = w[:nw].reshape(spec.n_classes, spec.d_in)
    return features @ mat.T + w[nw:]


def loss(spec: ModelSpec, w: np.ndarray, features: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error (regression) or mean softmax cross-entropy."""
    _check_batch(spec, w, features, targets)
    if spec.family == LINEAR_REGRESSION:
        resid = features @ w - targets
        return float(np.mean(resid * resid))
    logits = _logits(spec, w, features)
    logits = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(logits).sum(axis=1))
    picked = logits[np.arange(len(targets)), targets]
    return float(np.mean(log_norm - picked))


def gradient(spec: ModelSpec, w: np.ndarray, features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Exact gradient of `loss`, averaged over the batch."""
    _check_batch(spec, w, features, targets)
    m = len(features)
    if spec.family == LINEAR_REGRESSION:
        resid = features @ w - targets
        return 2.0 * (resid @ features) / m
    logits = _logits(spec, w, features)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(m), targets] -= 1.0
    gw = (p.T @ features) / m
    gb = p.sum(axis=0) / m
    return np.concatenate([gw.ravel(), gb])


def predict(spec: ModelSpec, w: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Real predictions (regression) or argmax class ids, ties to lowest id."""
    _check_batch(spec, w, features)
    if spec.family == LINEAR_REGRESSION:
        return features @ w
    return np.argmax(_logits(spec, w, features), axis=1).astype(np.int64)


# flat vector arithmetic; norm2 is the Euclidean norm

def _check_dims(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def add(a, b):
    _check_dims(a, b)
    return a + b


def sub(a, b):
    _check_dims(a, b)
    return a - b


def scale(a, c):
    return a * float(c)


def dot(a, b):
    _check_dims(a, b)
    return float(a @ b)


def norm2(a):
    return float(np.linalg.norm(a))


def to_csv_line(w: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in w)


def from_csv_line(line: str) -> np.ndarray:
    return np.array([float(v) for v in line.strip().split(",")])
