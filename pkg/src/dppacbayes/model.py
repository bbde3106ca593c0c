"""Fully-connected ReLU classifiers over a flat parameter vector.

Layout of the flat vector: for each layer in order, the weight matrix of
shape (n_in, n_out) in row-major order followed by the n_out biases.
Labels are 1-based throughout (y in {1..K}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MlpArchitecture:
    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"need at least two positive layer sizes, got {sizes}")
        if sizes[-1] < 2:
            raise ValueError("the output layer needs K >= 2 units")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum((s[i] + 1) * s[i + 1] for i in range(len(s) - 1))

    def unflatten(self, flat):
        """Split ``flat`` (..., p) into [(W, b), ...] views; leading axes are kept."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape[-1] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape[-1]}")
        lead = flat.shape[:-1]
        layers, off = [], 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = flat[..., off:off + n_in * n_out].reshape(lead + (n_in, n_out))
            off += n_in * n_out
            b = flat[..., off:off + n_out]
            off += n_out
            layers.append((W, b))
        return layers


@dataclass(frozen=True)
class BoundedXentConfig:
    """Bounded cross entropy: probabilities are squeezed into
    [e^-l_max, 1 - e^-l_max] before the log, so the loss lies in [0, l_max]."""

    l_max: float = 4.0

    def __post_init__(self):
        if not self.l_max > 0:
            raise ValueError(f"l_max must be positive, got {self.l_max!r}")

    @property
    def floor(self) -> float:
        return math.exp(-self.l_max)

    @property
    def slope(self) -> float:
        return 1.0 - 2.0 * math.exp(-self.l_max)

    @property
    def surrogate_range(self) -> float:
        return self.l_max


DEFAULT_LOSS = BoundedXentConfig()


def init_params(arch: MlpArchitecture, rng: np.random.Generator) -> np.ndarray:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases."""
    parts = []
    for n_in, n_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        parts.append(rng.standard_normal(n_in * n_out) / math.sqrt(n_in))
        parts.append(np.zeros(n_out))
    return np.concatenate(parts)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(arch, params, X):
    layers = arch.unflatten(params)
    acts = [X]
    h = X
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return layers, acts, _softmax(h)


def forward(arch: MlpArchitecture, params, x) -> np.ndarray:
    """Class-probability vector(s) for one input (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != arch.n_inputs:
        raise ValueError(f"input dimension {x.shape[-1]} != {arch.n_inputs}")
    return _forward_cache(arch, params, x)[2]


def psi_remap(p, cfg: BoundedXentConfig = DEFAULT_LOSS):
    """Affine map of [0, 1] onto [e^-l_max, 1 - e^-l_max]."""
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p_arr)) or np.any(p_arr < 0.0) or np.any(p_arr > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    out = cfg.floor + cfg.slope * p_arr
    return float(out) if out.ndim == 0 else out


def _label_index(arch, y):
    y = np.asarray(y)
    if np.any(y < 1) or np.any(y > arch.n_classes):
        raise ValueError(f"labels must lie in 1..{arch.n_classes}")
    return y.astype(np.intp) - 1


def _xent_from_probs(probs, idx, cfg):
    py = np.take_along_axis(probs, idx[..., None], axis=-1)[..., 0]
    return -np.log(cfg.floor + cfg.slope * py)


def bounded_xent(arch: MlpArchitecture, params, x, y, cfg: BoundedXentConfig = DEFAULT_LOSS):
    """-ln psi(p_y(w, x)); scalar for a single example, vector for a batch."""
    idx = _label_index(arch, y)
    probs = forward(arch, params, x)
    if probs.ndim == 1:
        return float(_xent_from_probs(probs[None], idx.reshape(1), cfg)[0])
    return _xent_from_probs(probs, idx, cfg)


def _errors_from_probs(probs, idx):
    # np.argmax returns the first maximal index: ties go to the lowest class
    return (np.argmax(probs, axis=-1) != idx).astype(np.float64)


def error01(arch: MlpArchitecture, params, x, y):
    """0 iff the label is the (lowest-index) argmax of the output."""
    idx = _label_index(arch, y)
    probs = forward(arch, params, x)
    if probs.ndim == 1:
        return int(_errors_from_probs(probs[None], idx.reshape(1))[0])
    return _errors_from_probs(probs, idx)


def grad_bounded_xent(arch: MlpArchitecture, params, X, y,
                      cfg: BoundedXentConfig = DEFAULT_LOSS) -> np.ndarray:
    """Gradient of the minibatch-mean bounded cross entropy w.r.t. the flat params."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    idx = _label_index(arch, np.atleast_1d(y))
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty minibatch")
    layers, acts, probs = _forward_cache(arch, params, X)

    rows = np.arange(n)
    py = probs[rows, idx]
    # dL/dz_k = -slope * p_y * (1[k=y] - p_k) / psi(p_y)
    coef = -cfg.slope * py / (cfg.floor + cfg.slope * py)
    delta = -probs * coef[:, None]
    delta[rows, idx] += coef
    delta /= n

    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W.T) * (acts[i] > 0.0)
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def empirical_risks(arch: MlpArchitecture, params, dataset,
                    cfg: BoundedXentConfig = DEFAULT_LOSS) -> tuple[float, float]:
    """(mean 0-1 error, mean bounded cross entropy) over a dataset.

    ``dataset`` is anything with ``inputs`` (n, d) and 1-based ``labels``.
    """
    X, y = dataset.inputs, dataset.labels
    if len(y) == 0:
        raise ValueError("empty dataset")
    idx = _label_index(arch, y)
    probs = forward(arch, params, X)
    err = _errors_from_probs(probs, idx)
    xent = _xent_from_probs(probs, idx, cfg)
    # np.mean on a contiguous 1-d array uses pairwise summation in index order
    return float(np.mean(err)), float(np.mean(xent))


def batch_risks(arch: MlpArchitecture, param_matrix, X, y,
                cfg: BoundedXentConfig = DEFAULT_LOSS, chunk: int = 512):
    """Per-sample (0-1 error, bounded xent) empirical risks for many parameter vectors.

    ``param_matrix`` has shape (S, p); returns two arrays of shape (S,).
    """
    param_matrix = np.atleast_2d(np.asarray(param_matrix, dtype=np.float64))
    X = np.asarray(X, dtype=np.float64)
    idx = _label_index(arch, y)
    S = param_matrix.shape[0]
    # keep the (chunk, n, width) activation block around 4M floats
    chunk = max(1, min(chunk, int(4e6 // (X.shape[0] * max(arch.layer_sizes[1:])))))
    errs = np.empty(S)
    xents = np.empty(S)
    for start in range(0, S, chunk):
        block = param_matrix[start:start + chunk]
        layers = arch.unflatten(block)
        h = np.broadcast_to(X, (block.shape[0],) + X.shape)
        for i, (W, b) in enumerate(layers):
            z = np.matmul(h, W) + b[:, None, :]
            h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
        probs = _softmax(h)
        tiled = np.broadcast_to(idx, probs.shape[:-1])
        errs[start:start + chunk] = _errors_from_probs(probs, tiled).mean(axis=1)
        xents[start:start + chunk] = _xent_from_probs(probs, tiled, cfg).mean(axis=1)
    return errs, xents
