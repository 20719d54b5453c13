"""Local client losses with gradients and curvature.

Three kinds are provided: a quadratic bowl, binary logistic regression and a
small tanh MLP with a softmax head. Every objective exposes the same
methods; losses are means over the selected batch.

Curvature comes in two forms. ``hessian_diag`` is the averaged diagonal
used to build the nominal sensitivity (exact for quadratic and logistic,
diagonal empirical Fisher for the MLP, clamped below at ``HESS_FLOOR``).
``hessian`` is the matching dense matrix, used only when the parameter
dimension is small.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_softmax

from .core import as_param

__all__ = [
    "HESS_FLOOR",
    "QuadraticObjective",
    "LogisticObjective",
    "MLPObjective",
    "loss",
    "grad",
    "hessian_diag",
]

HESS_FLOOR = 1e-8


def _index(batch, n: int) -> np.ndarray:
    if batch is None:
        return np.arange(n)
    idx = np.asarray(batch, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ValueError("empty batch")
    if idx.min() < 0 or idx.max() >= n:
        raise IndexError(f"batch index out of range for {n} samples")
    return idx


class QuadraticObjective:
    """f(x) = 1/2 (x - c)^T A (x - c) with symmetric PSD ``A``."""

    kind = "quadratic"
    classification = False

    def __init__(self, A, c):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        c = as_param(c)
        if A.shape != (c.size, c.size):
            raise ValueError(f"A must be {c.size}x{c.size}, got {A.shape}")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        if np.linalg.eigvalsh(A).min() < -1e-10 * max(1.0, np.abs(A).max()):
            raise ValueError("A must be positive semidefinite")
        self.A = 0.5 * (A + A.T)
        self.c = c
        self.A.setflags(write=False)
        self.c.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.c.size

    @property
    def n_samples(self) -> int:
        return 1

    def init_params(self, rng=None) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, x, batch=None) -> float:
        _index(batch, 1)
        r = as_param(x, self.dim) - self.c
        return float(0.5 * r @ self.A @ r)

    def grad(self, x, batch=None) -> np.ndarray:
        _index(batch, 1)
        return self.A @ (as_param(x, self.dim) - self.c)

    def hessian(self, x=None, sample=None) -> np.ndarray:
        return np.array(self.A)

    def hessian_diag(self, x=None, sample=None) -> np.ndarray:
        _index(sample, 1)
        return np.maximum(np.diag(self.A).copy(), HESS_FLOOR)

    def minimizer(self) -> np.ndarray:
        return np.array(self.c)

    def accuracy(self, x) -> Optional[float]:
        return None


class LogisticObjective:
    """Binary logistic regression, labels in {0, 1}, optional ridge term.

    With ``fit_intercept`` a constant feature is appended, so the parameter
    vector is ``[weights..., bias]``.
    """

    kind = "logistic"
    classification = True

    def __init__(self, X, y, l2: float = 0.0, fit_intercept: bool = True):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if X.shape[0] != y.size or y.size == 0:
            raise ValueError("X and y must have the same nonzero number of rows")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("logistic labels must be 0 or 1")
        if l2 < 0:
            raise ValueError("l2 must be >= 0")
        if fit_intercept:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        self.X = X
        self.y = y
        self.l2 = float(l2)
        self.X.setflags(write=False)
        self.y.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n_samples(self) -> int:
        return self.y.size

    def init_params(self, rng=None) -> np.ndarray:
        return np.zeros(self.dim)

    def _z(self, x, idx):
        return self.X[idx] @ as_param(x, self.dim)

    def loss(self, x, batch=None) -> float:
        idx = _index(batch, self.n_samples)
        w = as_param(x, self.dim)
        z = self.X[idx] @ w
        return float(np.mean(np.logaddexp(0.0, z) - self.y[idx] * z) + 0.5 * self.l2 * (w @ w))

    def grad(self, x, batch=None) -> np.ndarray:
        idx = _index(batch, self.n_samples)
        w = as_param(x, self.dim)
        r = expit(self.X[idx] @ w) - self.y[idx]
        return self.X[idx].T @ r / idx.size + self.l2 * w

    def hessian(self, x, sample=None) -> np.ndarray:
        idx = _index(sample, self.n_samples)
        s = expit(self._z(x, idx))
        Xs = self.X[idx]
        H = (Xs.T * (s * (1.0 - s))) @ Xs / idx.size
        H[np.diag_indices_from(H)] += self.l2
        return H

    def hessian_diag(self, x, sample=None) -> np.ndarray:
        idx = _index(sample, self.n_samples)
        s = expit(self._z(x, idx))
        d = (s * (1.0 - s)) @ (self.X[idx] ** 2) / idx.size + self.l2
        return np.maximum(d, HESS_FLOOR)

    def accuracy(self, x) -> float:
        return float(np.mean((self._z(x, slice(None)) > 0) == (self.y == 1)))


class MLPObjective:
    """Tanh MLP with a softmax cross-entropy head.

    ``hidden`` lists the hidden widths. Parameters are flattened layer by
    layer as ``W (in x out)`` followed by ``b (out)``.
    """

    kind = "mlp"
    classification = True

    def __init__(self, X, y, hidden: Sequence[int] = (8,), classes: Optional[int] = None,
                 l2: float = 0.0):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y).reshape(-1)
        if X.shape[0] != y.size or y.size == 0:
            raise ValueError("X and y must have the same nonzero number of rows")
        if not np.all(np.equal(np.mod(y, 1), 0)) or y.min() < 0:
            raise ValueError("mlp labels must be nonnegative integers")
        y = y.astype(np.int64)
        classes = int(classes if classes is not None else y.max() + 1)
        if classes < 2 or y.max() >= classes:
            raise ValueError("labels must lie in [0, classes) with classes >= 2")
        if any(int(h) < 1 for h in hidden):
            raise ValueError("hidden widths must be positive")
        if l2 < 0:
            raise ValueError("l2 must be >= 0")
        self.X = X
        self.y = y
        self.classes = classes
        self.l2 = float(l2)
        self.sizes = [X.shape[1], *[int(h) for h in hidden], classes]
        self._shapes = []
        offset = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self._shapes.append((offset, fan_in, fan_out))
            offset += fan_in * fan_out + fan_out
        self._dim = offset
        self.X.setflags(write=False)
        self.y.setflags(write=False)

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def n_samples(self) -> int:
        return self.y.size

    def init_params(self, rng=None) -> np.ndarray:
        rng = np.random.default_rng(0) if rng is None else rng
        x = np.zeros(self._dim)
        for offset, fan_in, fan_out in self._shapes:
            x[offset:offset + fan_in * fan_out] = rng.normal(size=fan_in * fan_out) / np.sqrt(fan_in)
        return x

    def _layers(self, x):
        x = as_param(x, self._dim)
        out = []
        for offset, fan_in, fan_out in self._shapes:
            W = x[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            b = x[offset + fan_in * fan_out:offset + fan_in * fan_out + fan_out]
            out.append((W, b))
        return out

    def _forward(self, x, idx):
        acts = [self.X[idx]]
        layers = self._layers(x)
        for k, (W, b) in enumerate(layers):
            z = acts[-1] @ W + b
            acts.append(z if k == len(layers) - 1 else np.tanh(z))
        return layers, acts

    def _deltas(self, layers, acts, idx):
        n = idx.size
        p = np.exp(log_softmax(acts[-1], axis=1))
        p[np.arange(n), self.y[idx]] -= 1.0
        deltas = [p]
        for k in range(len(layers) - 1, 0, -1):
            W = layers[k][0]
            deltas.append((deltas[-1] @ W.T) * (1.0 - acts[k] ** 2))
        deltas.reverse()
        return deltas

    def loss(self, x, batch=None) -> float:
        idx = _index(batch, self.n_samples)
        _, acts = self._forward(x, idx)
        lp = log_softmax(acts[-1], axis=1)
        w = as_param(x, self._dim)
        return float(-np.mean(lp[np.arange(idx.size), self.y[idx]]) + 0.5 * self.l2 * (w @ w))

    def grad(self, x, batch=None) -> np.ndarray:
        idx = _index(batch, self.n_samples)
        layers, acts = self._forward(x, idx)
        deltas = self._deltas(layers, acts, idx)
        parts = []
        for k in range(len(layers)):
            parts.append((acts[k].T @ deltas[k]).ravel() / idx.size)
            parts.append(deltas[k].sum(axis=0) / idx.size)
        return np.concatenate(parts) + self.l2 * as_param(x, self._dim)

    def per_sample_grads(self, x, sample=None) -> np.ndarray:
        """Per-sample gradients (n x dim) of the per-sample regularized loss."""
        idx = _index(sample, self.n_samples)
        layers, acts = self._forward(x, idx)
        deltas = self._deltas(layers, acts, idx)
        parts = []
        for k in range(len(layers)):
            parts.append(np.einsum("ni,no->nio", acts[k], deltas[k]).reshape(idx.size, -1))
            parts.append(deltas[k])
        return np.hstack(parts) + self.l2 * as_param(x, self._dim)

    def hessian(self, x, sample=None) -> np.ndarray:
        G = self.per_sample_grads(x, sample)
        return G.T @ G / G.shape[0]

    def hessian_diag(self, x, sample=None) -> np.ndarray:
        G = self.per_sample_grads(x, sample)
        return np.maximum(np.mean(G ** 2, axis=0), HESS_FLOOR)

    def accuracy(self, x) -> float:
        _, acts = self._forward(x, np.arange(self.n_samples))
        return float(np.mean(np.argmax(acts[-1], axis=1) == self.y))


def loss(obj, x, batch=None) -> float:
    return obj.loss(x, batch)


def grad(obj, x, batch=None) -> np.ndarray:
    return obj.grad(x, batch)


def hessian_diag(obj, x, sample=None) -> np.ndarray:
    return obj.hessian_diag(x, sample)
