"""ReLU MLP applied row-wise to aggregated features, trained with full-batch Adam."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels


class TrainingDivergedError(RuntimeError):
    pass


class PowerIterationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MlpClassifier:
    """Bias-free ReLU MLP. ``layers[l]`` has shape (in_dim, out_dim)."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(np.array(w, dtype=np.float64, copy=True) for w in self.layers)
        if not layers:
            raise ValueError("model needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.ndim != 2 or a.shape[1] != b.shape[0]:
                raise ValueError("layer dimensions do not chain")
        for w in layers:
            if w.ndim != 2:
                raise ValueError("layers must be matrices")
            if not np.isfinite(w).all():
                raise ValueError("non-finite weight")
            w.setflags(write=False)
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].shape[1]

    @property
    def dims(self) -> tuple:
        return (self.in_dim,) + tuple(w.shape[1] for w in self.layers)

    @property
    def max_width(self) -> int:
        """Largest layer dimension, input and output included."""
        return max(self.dims)

    def __eq__(self, other):
        if not isinstance(other, MlpClassifier):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )

    __hash__ = None

    def to_json(self) -> dict:
        return {
            "depth": self.depth,
            "layers": [{"shape": list(w.shape), "weights": w.ravel().tolist()} for w in self.layers],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MlpClassifier":
        return cls(tuple(np.asarray(l["weights"], dtype=np.float64).reshape(l["shape"]) for l in obj["layers"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "MlpClassifier":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 400
    patience: int = 100
    seed: int = 0
    hidden: int = 16
    depth: int = 2

    def __post_init__(self):
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")
        if self.max_epochs < 1 or self.patience < 1 or self.hidden < 1 or self.depth < 1:
            raise ValueError("epochs, patience, hidden width and depth must be positive")


def forward(model: MlpClassifier, Z_rows) -> np.ndarray:
    """Raw logits, shape (rows, K)."""
    h = np.asarray(Z_rows, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != model.in_dim:
        raise ValueError(f"expected input with {model.in_dim} columns, got shape {h.shape}")
    last = len(model.layers) - 1
    for l, w in enumerate(model.layers):
        h = h @ w
        if l < last:
            h = np.maximum(h, 0.0)
    return h


def predict(model: MlpClassifier, Z_rows) -> np.ndarray:
    return np.argmax(forward(model, Z_rows), axis=1)


# --------------------------------------------------------------------------
# margin losses


def margin_loss_from_logits(logits, labels, gamma: float) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if logits.shape[0] == 0:
        raise ValueError("empty node set")
    ind = kernels.margin_indicators(np.ascontiguousarray(logits), float(gamma))
    return float(ind[np.arange(labels.size), labels].mean())


def empirical_margin_loss(model: MlpClassifier, Z_rows, labels, gamma: float) -> float:
    """Fraction of rows whose true-class logit does not beat every other by more than gamma."""
    return margin_loss_from_logits(forward(model, Z_rows), labels, gamma)


def check_label_field(eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    if eta.ndim != 2 or (eta < -1e-12).any() or (eta > 1 + 1e-12).any():
        raise ValueError("eta rows must be probability distributions")
    if np.abs(eta.sum(axis=1) - 1.0).max(initial=0.0) > 1e-9:
        raise ValueError("eta rows must sum to 1")
    return eta


def expected_margin_loss_from_logits(logits, eta, gamma: float) -> float:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    if logits.shape[0] == 0:
        raise ValueError("empty node set")
    ind = kernels.margin_indicators(logits, float(gamma))
    return float((eta * ind).sum(axis=1).mean())


def expected_margin_loss_exact(model: MlpClassifier, Z_rows, eta, gamma: float) -> float:
    """Margin loss averaged over labels drawn from the known conditional ``eta``."""
    eta = check_label_field(eta)
    return expected_margin_loss_from_logits(forward(model, Z_rows), eta, gamma)


def margins(model: MlpClassifier, Z_rows, labels) -> np.ndarray:
    """h[y] - max_{k != y} h[k] per row."""
    logits = forward(model, Z_rows)
    idx = np.arange(logits.shape[0])
    true = logits[idx, labels].copy()
    logits[idx, labels] = -np.inf
    return true - logits.max(axis=1)


# --------------------------------------------------------------------------
# norms


def spectral_norm(W, tol: float = 1e-9, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on W^T W."""
    W = np.asarray(W, dtype=np.float64)
    if not W.any():
        return 0.0
    gram = W.T @ W
    v = np.random.default_rng(0).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = gram @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            # start vector landed in the null space
            v = np.ones_like(v) / np.sqrt(v.size)
            continue
        new = float(v @ u)
        v = u / nu
        if abs(new - lam) <= tol * abs(new):
            return float(np.sqrt(max(new, 0.0)))
        lam = new
    raise PowerIterationError("power iteration did not converge")


@dataclass(frozen=True)
class WeightNorms:
    frobenius: tuple
    spectral: tuple
    T_h: float
    spectral_product: float
    C: float

    @property
    def beta_tilde(self) -> float:
        return self.spectral_product ** (1.0 / len(self.spectral))


def weight_norms(model: MlpClassifier) -> WeightNorms:
    fro = tuple(float(np.linalg.norm(w)) for w in model.layers)
    spec = tuple(spectral_norm(w) for w in model.layers)
    return WeightNorms(fro, spec, max(spec), float(np.prod(spec)), max(fro))


# --------------------------------------------------------------------------
# training


def init_model(dims, rng: np.random.Generator) -> MlpClassifier:
    layers = []
    for a, b in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (a + b))
        layers.append(rng.uniform(-bound, bound, size=(a, b)))
    return MlpClassifier(tuple(layers))


def _softmax_xent(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    n = labels.size
    loss = float((logz - shifted[np.arange(n), labels]).mean())
    grad = np.exp(shifted - logz[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def train(Z, labels, train_idx, val_idx, cfg: TrainConfig, num_classes: int | None = None) -> MlpClassifier:
    """Full-batch Adam on softmax cross-entropy with L2 weight decay.

    Returns the weights from the epoch with the best validation accuracy
    (earliest epoch on ties). With ``val_idx=None`` no early stopping is done
    and the final weights are returned.
    """
    Z = np.asarray(getattr(Z, "Z", Z), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("training set is empty")
    if val_idx is not None:
        val_idx = np.asarray(val_idx, dtype=np.int64)
        if val_idx.size == 0:
            raise ValueError("validation set is empty")
        if np.intersect1d(train_idx, val_idx).size:
            raise ValueError("training and validation sets overlap")
    k = int(num_classes if num_classes is not None else labels.max() + 1)

    rng = np.random.default_rng(cfg.seed)
    dims = [Z.shape[1]] + [cfg.hidden] * (cfg.depth - 1) + [k]
    weights = [w.copy() for w in init_model(dims, rng).layers]
    m = [np.zeros_like(w) for w in weights]
    v = [np.zeros_like(w) for w in weights]
    b1, b2, eps = 0.9, 0.999, 1e-8

    X0, y0 = Z[train_idx], labels[train_idx]
    best = [w.copy() for w in weights]
    best_acc, best_epoch = -1.0, 0
    last = len(weights) - 1

    for epoch in range(1, cfg.max_epochs + 1):
        acts = [X0]
        h = X0
        for l, w in enumerate(weights):
            h = h @ w
            if l < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        loss, g = _softmax_xent(h, y0)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        for l in range(last, -1, -1):
            grad = acts[l].T @ g + cfg.weight_decay * weights[l]
            if l > 0:
                g = (g @ weights[l].T) * (acts[l] > 0)
            m[l] = b1 * m[l] + (1 - b1) * grad
            v[l] = b2 * v[l] + (1 - b2) * grad * grad
            mhat = m[l] / (1 - b1**epoch)
            vhat = v[l] / (1 - b2**epoch)
            weights[l] = weights[l] - cfg.lr * mhat / (np.sqrt(vhat) + eps)

        if val_idx is None:
            continue
        hv = Z[val_idx]
        for l, w in enumerate(weights):
            hv = hv @ w
            if l < last:
                hv = np.maximum(hv, 0.0)
        acc = float((np.argmax(hv, axis=1) == labels[val_idx]).mean())
        if acc > best_acc:
            best_acc, best_epoch = acc, epoch
            best = [w.copy() for w in weights]
        elif epoch - best_epoch >= cfg.patience:
            break

    if val_idx is None:
        best = weights
    if not all(np.isfinite(w).all() for w in best):
        raise TrainingDivergedError("non-finite weights")
    return MlpClassifier(tuple(best))


def accuracy(model: MlpClassifier, Z_rows, labels) -> float:
    return float((predict(model, Z_rows) == np.asarray(labels)).mean())
