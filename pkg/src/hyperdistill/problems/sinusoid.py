"""Few-shot sinusoid regression with a feature net as the hyperparameter.

The regressor is a 1-100-100-100-1 ReLU MLP.  The first three layers
are the hyperparameter lam (20400 entries); only the linear head (101
entries) is the inner weight w, so the inner training loss is exactly
quadratic in w.  Tasks draw amplitude ~ U(0.1, 5), phase ~ U(0, pi),
and inputs ~ U(-5, 5); losses are mean squared error.
"""

from __future__ import annotations

import numpy as np

from ..engine import Backend, Batch, InnerProblem
from ..errors import ConfigError
from ..vecmath import Vector

HIDDEN = 100

# lam packs (W1, b1, W2, b2, W3, b3) row-major, w packs (w_head, b_head).
_LAM_SHAPES = [(HIDDEN, 1), (HIDDEN,), (HIDDEN, HIDDEN), (HIDDEN,), (HIDDEN, HIDDEN), (HIDDEN,)]
_LAM_SIZES = [int(np.prod(s)) for s in _LAM_SHAPES]
_LAM_SPLITS = np.cumsum(_LAM_SIZES)[:-1]
LAM_DIM = int(sum(_LAM_SIZES))
W_DIM = HIDDEN + 1


def _unpack_lam(lam: Vector):
    parts = np.split(lam, _LAM_SPLITS)
    return [p.reshape(s) for p, s in zip(parts, _LAM_SHAPES)]


class SinusoidTask(InnerProblem):
    def __init__(
        self,
        amplitude: float,
        phase: float,
        x_train: np.ndarray,
        x_val: np.ndarray,
        inner_lr: float = 0.01,
        backend: Backend = Backend.FINITE_DIFFERENCE,
    ):
        if Backend(backend) is Backend.ANALYTIC:
            raise ConfigError("SinusoidTask supports only the finite-difference backend")
        self.weight_dim = W_DIM
        self.hyper_dim = LAM_DIM
        self.inner_lr = float(inner_lr)
        self.backend = Backend.FINITE_DIFFERENCE
        self.amplitude = float(amplitude)
        self.phase = float(phase)
        self.x_train = np.asarray(x_train, dtype=np.float64).reshape(-1, 1)
        self.x_val = np.asarray(x_val, dtype=np.float64).reshape(-1, 1)
        self.y_train = self.amplitude * np.sin(self.x_train[:, 0] + self.phase)
        self.y_val = self.amplitude * np.sin(self.x_val[:, 0] + self.phase)
        self.train_size = self.x_train.shape[0]
        self.val_size = self.x_val.shape[0]

    @classmethod
    def sample(cls, rng: np.random.Generator, shots: int = 10, val_points: int = 100, **kw):
        return cls(
            amplitude=float(rng.uniform(0.1, 5.0)),
            phase=float(rng.uniform(0.0, np.pi)),
            x_train=rng.uniform(-5.0, 5.0, (shots, 1)),
            x_val=rng.uniform(-5.0, 5.0, (val_points, 1)),
            **kw,
        )

    def _data(self, batch: Batch, split: str):
        idx = batch.array()
        if split == "train":
            return self.x_train[idx], self.y_train[idx]
        return self.x_val[idx], self.y_val[idx]

    def _features(self, lam: Vector, x: np.ndarray):
        W1, b1, W2, b2, W3, b3 = _unpack_lam(lam)
        z1 = x @ W1.T + b1
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ W2.T + b2
        a2 = np.maximum(z2, 0.0)
        z3 = a2 @ W3.T + b3
        a3 = np.maximum(z3, 0.0)
        return (W1, W2, W3), (x, z1, a1, z2, a2, z3, a3)

    def predict(self, w: Vector, lam: Vector, x: np.ndarray) -> np.ndarray:
        _, cache = self._features(lam, x)
        return cache[-1] @ w[:HIDDEN] + w[HIDDEN]

    def _loss(self, w, lam, x, y) -> float:
        f = self.predict(w, lam, x)
        return float(np.mean((f - y) ** 2))

    def _grad_w(self, w, lam, x, y) -> Vector:
        _, cache = self._features(lam, x)
        a3 = cache[-1]
        f = a3 @ w[:HIDDEN] + w[HIDDEN]
        r = 2.0 * (f - y) / y.shape[0]
        return np.concatenate([a3.T @ r, [r.sum()]])

    def _grad_lam(self, w, lam, x, y) -> Vector:
        (W1, W2, W3), (x_, z1, a1, z2, a2, z3, a3) = self._features(lam, x)
        f = a3 @ w[:HIDDEN] + w[HIDDEN]
        r = 2.0 * (f - y) / y.shape[0]
        cot3 = np.outer(r, w[:HIDDEN]) * (z3 > 0.0)
        cot2 = (cot3 @ W3) * (z2 > 0.0)
        cot1 = (cot2 @ W2) * (z1 > 0.0)
        return np.concatenate(
            [
                (cot1.T @ x_).ravel(),
                cot1.sum(axis=0),
                (cot2.T @ a1).ravel(),
                cot2.sum(axis=0),
                (cot3.T @ a2).ravel(),
                cot3.sum(axis=0),
            ]
        )

    def train_loss(self, w, lam, batch):
        return self._loss(w, lam, *self._data(batch, "train"))

    def grad_train_w(self, w, lam, batch):
        return self._grad_w(w, lam, *self._data(batch, "train"))

    def grad_train_lam(self, w, lam, batch):
        return self._grad_lam(w, lam, *self._data(batch, "train"))

    def val_loss(self, w, lam, batch):
        return self._loss(w, lam, *self._data(batch, "val"))

    def grad_val_w(self, w, lam, batch):
        return self._grad_w(w, lam, *self._data(batch, "val"))

    def grad_val_lam(self, w, lam, batch):
        return self._grad_lam(w, lam, *self._data(batch, "val"))

    def val_grad_pair(self, w, lam, batch):
        # one shared forward pass for both validation gradients
        x, y = self._data(batch, "val")
        (W1, W2, W3), (x_, z1, a1, z2, a2, z3, a3) = self._features(lam, x)
        f = a3 @ w[:HIDDEN] + w[HIDDEN]
        r = 2.0 * (f - y) / y.shape[0]
        alpha = np.concatenate([a3.T @ r, [r.sum()]])
        cot3 = np.outer(r, w[:HIDDEN]) * (z3 > 0.0)
        cot2 = (cot3 @ W3) * (z2 > 0.0)
        cot1 = (cot2 @ W2) * (z1 > 0.0)
        g_fo = np.concatenate(
            [
                (cot1.T @ x_).ravel(),
                cot1.sum(axis=0),
                (cot2.T @ a1).ravel(),
                cot2.sum(axis=0),
                (cot3.T @ a2).ravel(),
                cot3.sum(axis=0),
            ]
        )
        return alpha, g_fo

    def init_weight(self, rng):
        bound = 1.0 / np.sqrt(HIDDEN)
        return rng.uniform(-bound, bound, self.weight_dim)

    def init_hyper(self, rng):
        chunks = []
        for shape in _LAM_SHAPES:
            fan_in = shape[1] if len(shape) == 2 else shape[0]
            if len(shape) == 1:
                # biases share the bound of their weight matrix
                fan_in = 1 if not chunks else _LAM_SHAPES[len(chunks) - 1][1]
            bound = 1.0 / np.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, int(np.prod(shape))))
        return np.concatenate(chunks)
