"""Loss reweighting under label noise on a 2-D two-class problem.

A tiny classifier (2-16-1, tanh hidden) is the inner weight w.  The
hyperparameter lam is a 1-200-1 ReLU weighting net mapping each
example's loss to a nonnegative weight, floored at 0.1.  Training
labels are flipped independently with probability corruption_prob;
validation labels are clean.  The validation loss never touches lam,
so its direct hyper-gradient is exactly zero and all meta-learning
signal is second-order.
"""

from __future__ import annotations

import numpy as np

from ..engine import Backend, Batch, InnerProblem
from ..errors import ConfigError
from ..vecmath import Vector

CLF_HIDDEN = 16
NET_HIDDEN = 200

# w packs (W1, b1, w2, b2) of the classifier.
W_DIM = CLF_HIDDEN * 2 + CLF_HIDDEN + CLF_HIDDEN + 1
# lam packs (u1, c1, u2, c2) of the weighting net.
LAM_DIM = NET_HIDDEN + NET_HIDDEN + NET_HIDDEN + 1


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


class ReweightTask(InnerProblem):
    def __init__(
        self,
        x_train: np.ndarray,
        y_train: np.ndarray,
        x_val: np.ndarray,
        y_val: np.ndarray,
        inner_lr: float = 0.1,
        weight_floor: float = 0.1,
        backend: Backend = Backend.FINITE_DIFFERENCE,
    ):
        if Backend(backend) is Backend.ANALYTIC:
            raise ConfigError("ReweightTask supports only the finite-difference backend")
        self.weight_dim = W_DIM
        self.hyper_dim = LAM_DIM
        self.inner_lr = float(inner_lr)
        self.backend = Backend.FINITE_DIFFERENCE
        self.weight_floor = float(weight_floor)
        self.x_train = np.asarray(x_train, dtype=np.float64)
        self.y_train = np.asarray(y_train, dtype=np.float64)
        self.x_val = np.asarray(x_val, dtype=np.float64)
        self.y_val = np.asarray(y_val, dtype=np.float64)
        self.train_size = self.x_train.shape[0]
        self.val_size = self.x_val.shape[0]

    @classmethod
    def sample(
        cls,
        rng: np.random.Generator,
        train_size: int = 256,
        val_size: int = 256,
        corruption_prob: float = 0.4,
        **kw,
    ):
        """Two Gaussian blobs at +-(1.5, 1.5); train labels flipped w.p. corruption_prob."""

        def blob(n):
            y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
            x = 1.5 * y[:, None] + rng.standard_normal((n, 2))
            return x, y

        x_tr, y_tr = blob(train_size)
        flip = rng.random(train_size) < corruption_prob
        y_tr = np.where(flip, -y_tr, y_tr)
        x_va, y_va = blob(val_size)
        task = cls(x_tr, y_tr, x_va, y_va, **kw)
        task.flipped = flip
        return task

    def _unpack_w(self, w: Vector):
        W1 = w[: 2 * CLF_HIDDEN].reshape(CLF_HIDDEN, 2)
        b1 = w[2 * CLF_HIDDEN : 3 * CLF_HIDDEN]
        w2 = w[3 * CLF_HIDDEN : 4 * CLF_HIDDEN]
        b2 = w[-1]
        return W1, b1, w2, b2

    def _unpack_lam(self, lam: Vector):
        u1 = lam[:NET_HIDDEN]
        c1 = lam[NET_HIDDEN : 2 * NET_HIDDEN]
        u2 = lam[2 * NET_HIDDEN : 3 * NET_HIDDEN]
        c2 = lam[-1]
        return u1, c1, u2, c2

    def _forward_clf(self, w: Vector, x: np.ndarray):
        W1, b1, w2, b2 = self._unpack_w(w)
        h = np.tanh(x @ W1.T + b1)
        f = h @ w2 + b2
        return h, f

    def example_losses(self, w: Vector, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _, f = self._forward_clf(w, x)
        return _softplus(-y * f)

    def example_weights(self, lam: Vector, losses: np.ndarray) -> np.ndarray:
        u1, c1, u2, c2 = self._unpack_lam(lam)
        z = losses[:, None] * u1 + c1
        raw = np.maximum(z, 0.0) @ u2 + c2
        return np.maximum(raw, self.weight_floor)

    def _grad_clf(self, w, x, y, cot_f: np.ndarray) -> Vector:
        """Backprop an f-space cotangent through the classifier."""
        W1, b1, w2, b2 = self._unpack_w(w)
        h = np.tanh(x @ W1.T + b1)
        cot_h = cot_f[:, None] * w2
        cot_z = cot_h * (1.0 - h * h)
        return np.concatenate(
            [(cot_z.T @ x).ravel(), cot_z.sum(axis=0), h.T @ cot_f, [cot_f.sum()]]
        )

    def train_loss(self, w, lam, batch):
        idx = batch.array()
        x, y = self.x_train[idx], self.y_train[idx]
        losses = self.example_losses(w, x, y)
        return float(np.mean(self.example_weights(lam, losses) * losses))

    def grad_train_w(self, w, lam, batch):
        idx = batch.array()
        x, y = self.x_train[idx], self.y_train[idx]
        n = idx.shape[0]
        _, f = self._forward_clf(w, x)
        losses = _softplus(-y * f)
        u1, c1, u2, c2 = self._unpack_lam(lam)
        z = losses[:, None] * u1 + c1
        raw = np.maximum(z, 0.0) @ u2 + c2
        active = raw > self.weight_floor
        weights = np.maximum(raw, self.weight_floor)
        dweight_dloss = np.where(active, ((z > 0.0) * u1) @ u2, 0.0)
        dl_dloss = (weights + dweight_dloss * losses) / n
        cot_f = dl_dloss * (-y) * _sigmoid(-y * f)
        return self._grad_clf(w, x, y, cot_f)

    def grad_train_lam(self, w, lam, batch):
        idx = batch.array()
        x, y = self.x_train[idx], self.y_train[idx]
        n = idx.shape[0]
        losses = self.example_losses(w, x, y)
        u1, c1, u2, c2 = self._unpack_lam(lam)
        z = losses[:, None] * u1 + c1
        a = np.maximum(z, 0.0)
        raw = a @ u2 + c2
        coef = np.where(raw > self.weight_floor, losses / n, 0.0)
        cot_z = (z > 0.0) * u2
        return np.concatenate(
            [
                (coef * losses) @ cot_z,
                coef @ cot_z,
                coef @ a,
                [coef.sum()],
            ]
        )

    def val_loss(self, w, lam, batch):
        idx = batch.array()
        return float(np.mean(self.example_losses(w, self.x_val[idx], self.y_val[idx])))

    def grad_val_w(self, w, lam, batch):
        idx = batch.array()
        x, y = self.x_val[idx], self.y_val[idx]
        _, f = self._forward_clf(w, x)
        cot_f = (-y) * _sigmoid(-y * f) / idx.shape[0]
        return self._grad_clf(w, x, y, cot_f)

    def grad_val_lam(self, w, lam, batch):
        return np.zeros(self.hyper_dim)

    def init_weight(self, rng):
        bound1 = 1.0 / np.sqrt(2.0)
        bound2 = 1.0 / np.sqrt(CLF_HIDDEN)
        return np.concatenate(
            [
                rng.uniform(-bound1, bound1, 3 * CLF_HIDDEN),
                rng.uniform(-bound2, bound2, CLF_HIDDEN + 1),
            ]
        )

    def init_hyper(self, rng):
        bound2 = 1.0 / np.sqrt(NET_HIDDEN)
        return np.concatenate(
            [
                rng.uniform(-1.0, 1.0, 2 * NET_HIDDEN),
                rng.uniform(-bound2, bound2, NET_HIDDEN + 1),
            ]
        )
