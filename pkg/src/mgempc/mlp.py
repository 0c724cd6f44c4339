"""Minimal dense feed-forward network with GELU hidden activations, manual
reverse-mode gradients, Adam training, and exact JSON serialization.

Everything runs in float64 numpy; training is single-threaded and
bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

FORMAT_VERSION = 1
EPS_STD = 1e-6

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _norm_cdf(x):
    # erfc keeps full precision deep in the left tail, unlike 1 + erf
    return 0.5 * erfc(-x / _SQRT2)


def gelu(x):
    """Exact Gaussian-error-linear unit: x * Phi(x) with the normal CDF."""
    x = np.asarray(x, dtype=float)
    return x * _norm_cdf(x)


def gelu_grad(x):
    """d/dx gelu(x) = Phi(x) + x * phi(x)."""
    x = np.asarray(x, dtype=float)
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return _norm_cdf(x) + x * phi


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...] = (33, 12, 12, 12, 4)
    activation: str = "gelu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ValueError("need at least one hidden layer")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be positive")
        if self.activation != "gelu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class MlpParams:
    """Per-layer weights (out x in) and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def check_spec(self, spec: MlpSpec) -> None:
        sizes = spec.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("layer count mismatch with spec")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l} shape {w.shape}/{b.shape} does not "
                                 f"match spec {sizes}")


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float))
        if self.mean.shape != self.std.shape:
            raise ValueError("mean/std shape mismatch")
        if np.any(self.std < EPS_STD):
            raise ValueError(f"std entries must be >= {EPS_STD}")

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    @staticmethod
    def fit(X) -> "Normalizer":
        X = np.asarray(X, dtype=float)
        return Normalizer(mean=X.mean(axis=0),
                          std=np.maximum(X.std(axis=0), EPS_STD))

    @staticmethod
    def identity(dim: int) -> "Normalizer":
        return Normalizer(mean=np.zeros(dim), std=np.ones(dim))


def init_params(spec: MlpSpec, seed: int = 0) -> MlpParams:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    sizes = spec.layer_sizes
    for l in range(len(sizes) - 1):
        a = np.sqrt(6.0 / (sizes[l] + sizes[l + 1]))
        weights.append(rng.uniform(-a, a, size=(sizes[l + 1], sizes[l])))
        biases.append(np.zeros(sizes[l + 1]))
    return MlpParams(weights, biases)


def forward(params: MlpParams, x):
    """Batched forward pass; hidden layers use GELU, the output is affine.
    Accepts (d,) or (B, d); returns matching shape."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.weights[0].shape[1]:
        raise ValueError(f"input width {h.shape[1]} != expected "
                         f"{params.weights[0].shape[1]}")
    n_layers = len(params.weights)
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if l < n_layers - 1:
            h = gelu(h)
    return h[0] if single else h


def loss_and_grad(params: MlpParams, X, Y):
    """Summed squared error over the batch and its gradient.

    loss = sum_i ||net(x_i) - y_i||^2, gradients via reverse-mode chain rule.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    n_layers = len(params.weights)
    acts = [X]          # layer inputs
    pre = []            # pre-activations
    h = X
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = gelu(z) if l < n_layers - 1 else z
        acts.append(h)
    err = acts[-1] - Y
    loss = float(np.sum(err * err))
    if not np.isfinite(loss):
        bad = int(np.flatnonzero(~np.isfinite((err * err).sum(axis=1)))[0])
        raise FloatingPointError(f"non-finite loss at batch sample {bad}")

    gw = [None] * n_layers
    gb = [None] * n_layers
    delta = 2.0 * err
    for l in range(n_layers - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * gelu_grad(pre[l - 1])
    return loss, MlpParams(gw, gb)


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: MlpParams, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        zeros = MlpParams([np.zeros_like(w) for w in params.weights],
                          [np.zeros_like(b) for b in params.biases])
        return AdamState(m=zeros.copy(), v=zeros, lr=lr, beta1=beta1,
                         beta2=beta2, eps=eps)

    def update(self, params: MlpParams, grad: MlpParams) -> None:
        self.step += 1
        bc1 = 1.0 - self.beta1 ** self.step
        bc2 = 1.0 - self.beta2 ** self.step
        for tgt, g, m, v in zip(params.weights + params.biases,
                                grad.weights + grad.biases,
                                self.m.weights + self.m.biases,
                                self.v.weights + self.v.biases):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tgt -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 64
    max_epochs: int = 2000
    patience: int = 100
    val_frac: float = 0.1
    # halve the step size when validation stalls; pure Adam plateaus well
    # above the reachable loss on low-noise regression targets
    lr_decay: float = 0.5
    lr_min: float = 1e-5


def fit(spec: MlpSpec, X, Y, cfg: TrainConfig = TrainConfig(), seed: int = 0):
    """Train on (X, Y) with Adam and early stopping on a held-out split.

    Features are standardized with the training split's statistics; the
    fitted normalizer is part of the returned bundle. Returns
    (params, normalizer, log) with per-epoch train/validation MSE.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y must be 2-D with matching row counts")
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if X.shape[1] != spec.n_in or Y.shape[1] != spec.n_out:
        raise ValueError(f"dataset width ({X.shape[1]}, {Y.shape[1]}) does not "
                         f"match spec ({spec.n_in}, {spec.n_out})")
    if not 0.0 < cfg.val_frac < 1.0:
        raise ValueError("val_frac must be in (0, 1)")

    rng = np.random.default_rng(seed)
    n = X.shape[0]
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_frac * n))) if n > 1 else 0
    val_idx = perm[:n_val]
    tr_idx = perm[n_val:] if n_val < n else perm
    if tr_idx.size == 0:
        tr_idx = perm

    norm = Normalizer.fit(X[tr_idx])
    Xtr, Ytr = norm.apply(X[tr_idx]), Y[tr_idx]
    Xval, Yval = norm.apply(X[val_idx]), Y[val_idx]

    params = init_params(spec, seed=seed)
    adam = AdamState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)

    def mse(Xs, Ys):
        if Xs.shape[0] == 0:
            return np.nan
        d = forward(params, Xs) - Ys
        return float(np.mean(d * d))

    best_val = np.inf
    best_params = params.copy()
    best_epoch = 0
    last_decay = 0
    plateau = max(1, cfg.patience // 3)
    log = []
    n_tr = Xtr.shape[0]
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_tr)
        for start in range(0, n_tr, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grad = loss_and_grad(params, Xtr[idx], Ytr[idx])
            adam.update(params, grad)
        tr_mse = mse(Xtr, Ytr)
        val_mse = mse(Xval, Yval) if n_val else tr_mse
        log.append({"epoch": epoch, "train_mse": tr_mse, "val_mse": val_mse,
                    "lr": adam.lr})
        if not np.isfinite(tr_mse):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        if val_mse < best_val - 1e-15:
            best_val = val_mse
            best_params = params.copy()
            best_epoch = epoch
        elif epoch - best_epoch >= cfg.patience:
            break
        elif (epoch - max(best_epoch, last_decay) >= plateau
              and adam.lr > cfg.lr_min):
            adam.lr = max(adam.lr * cfg.lr_decay, cfg.lr_min)
            last_decay = epoch
    return best_params, norm, log


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _digest(spec: MlpSpec, extra: dict | None) -> str:
    doc = {"layer_sizes": list(spec.layer_sizes), "activation": spec.activation,
           "extra": extra or {}}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def save_model(path, spec: MlpSpec, params: MlpParams, norm: Normalizer,
               extra: dict | None = None) -> None:
    """Write the model as JSON; float repr round-trips doubles exactly."""
    params.check_spec(spec)
    doc = {
        "format_version": FORMAT_VERSION,
        "spec": {"layer_sizes": list(spec.layer_sizes),
                 "activation": spec.activation},
        "weights": [[[float(v) for v in row] for row in w] for w in params.weights],
        "biases": [[float(v) for v in b] for b in params.biases],
        "normalizer": {"mean": [float(v) for v in norm.mean],
                       "std": [float(v) for v in norm.std]},
        "config_digest": _digest(spec, extra),
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_model(path):
    """Read a model file back; returns (spec, params, normalizer, extra).

    Validates the format version, the layer shapes, and the configuration
    digest (a mismatch means the file was assembled from incompatible
    pieces).
    """
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version "
                         f"{doc.get('format_version')}")
    spec = MlpSpec(layer_sizes=tuple(doc["spec"]["layer_sizes"]),
                   activation=doc["spec"]["activation"])
    params = MlpParams([np.asarray(w, dtype=float) for w in doc["weights"]],
                       [np.asarray(b, dtype=float) for b in doc["biases"]])
    params.check_spec(spec)
    norm = Normalizer(mean=np.asarray(doc["normalizer"]["mean"], dtype=float),
                      std=np.asarray(doc["normalizer"]["std"], dtype=float))
    if norm.mean.shape != (spec.n_in,):
        raise ValueError("normalizer width does not match the input layer")
    extra = doc.get("extra")
    if doc.get("config_digest") != _digest(spec, extra):
        raise ValueError("config digest mismatch: model file is inconsistent")
    return spec, params, norm, extra
