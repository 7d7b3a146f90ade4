"""Closed-form oracle problems.

QuadraticTask has an isotropic weight Hessian k*I, making every
Jacobian product and the full response Jacobian available in closed
form.  LinearTask has a zero weight Hessian but a batch-dependent
linear coupling between lam and w, so alpha * A = alpha exactly while
alpha * B stays nonzero and batch-dependent.
"""

from __future__ import annotations

import numpy as np

from ..engine import Backend, Batch, InnerProblem
from ..errors import ConfigError
from ..vecmath import Vector


class QuadraticTask(InnerProblem):
    """L_train = (k/2)||w - lam||^2 + noise(D) . w,  L_val = (1/2)||w - target||^2.

    noise(D) is a fixed pseudorandom vector per batch (zero when
    noise_scale = 0), linear in w, so the Hessian is exactly k*I and
    the response Jacobian is unaffected:

        w_t = lam + (1 - eta*k)^t (w_0 - lam)   (+ lam-independent noise terms)
        dw_T/dlam = (1 - (1 - eta*k)^T) * I
    """

    def __init__(
        self,
        n: int,
        k: float = 1.0,
        inner_lr: float = 0.5,
        val_target=None,
        noise_scale: float = 0.0,
        train_size: int = 32,
        noise_seed: int = 0,
        backend: Backend = Backend.ANALYTIC,
    ):
        if n < 1:
            raise ConfigError(f"n must be positive, got {n}")
        if k <= 0.0:
            raise ConfigError(f"k must be positive, got {k}")
        self.weight_dim = n
        self.hyper_dim = n
        self.k = float(k)
        self.inner_lr = float(inner_lr)
        self.train_size = int(train_size)
        self.val_size = 1
        self.backend = Backend(backend)
        self.noise_scale = float(noise_scale)
        self.noise_seed = int(noise_seed)
        self.val_target = (
            np.zeros(n) if val_target is None else np.array(val_target, dtype=np.float64)
        )
        self._noise_cache: dict[tuple[int, ...], Vector] = {}

    def contraction(self) -> float:
        """The per-step factor 1 - eta*k (also gamma* for the geometric identity)."""
        return 1.0 - self.inner_lr * self.k

    def noise(self, batch: Batch) -> Vector:
        if self.noise_scale == 0.0:
            return np.zeros(self.weight_dim)
        cached = self._noise_cache.get(batch.indices)
        if cached is None:
            rng = np.random.default_rng([self.noise_seed, 97, *batch.indices])
            cached = self.noise_scale * rng.standard_normal(self.weight_dim)
            self._noise_cache[batch.indices] = cached
        return cached

    def train_loss(self, w, lam, batch):
        d = w - lam
        return float(0.5 * self.k * d @ d + self.noise(batch) @ w)

    def grad_train_w(self, w, lam, batch):
        return self.k * (w - lam) + self.noise(batch)

    def grad_train_lam(self, w, lam, batch):
        return -self.k * (w - lam)

    def val_loss(self, w, lam, batch):
        d = w - self.val_target
        return float(0.5 * d @ d)

    def grad_val_w(self, w, lam, batch):
        return w - self.val_target

    def grad_val_lam(self, w, lam, batch):
        return np.zeros(self.hyper_dim)

    def hvp_train_ww(self, w, lam, batch, alpha):
        return self.k * alpha

    def hvp_train_wlam(self, w, lam, batch, alpha):
        return -self.k * alpha

    def closed_form_wt(self, w0: Vector, lam: Vector, t: int, batches=None) -> Vector:
        """w_t from the recursion, including accumulated noise terms."""
        c = self.contraction()
        w = lam + c**t * (w0 - lam)
        if batches is not None and self.noise_scale != 0.0:
            for i, b in enumerate(batches[:t], start=1):
                w = w - self.inner_lr * c ** (t - i) * self.noise(b)
        return w

    def response_factor(self, T: int) -> float:
        """The scalar rho with dw_T/dlam = rho * I."""
        return 1.0 - self.contraction() ** T


class LinearTask(InnerProblem):
    """L_train = c_D . w + lam . (M_D w),  L_val = (1/2)||w - target||^2.

    The training loss is linear in w, so A_t = I exactly and
    B_t = -eta * M_D^T varies with the batch.  hyper_dim and weight_dim
    may differ, which keeps transposition mistakes visible in tests.
    """

    def __init__(
        self,
        n: int,
        hyper_dim: int | None = None,
        inner_lr: float = 0.1,
        coupling_scale: float = 1.0,
        drift_scale: float = 1.0,
        val_target=None,
        train_size: int = 32,
        noise_seed: int = 0,
        backend: Backend = Backend.ANALYTIC,
    ):
        if n < 1:
            raise ConfigError(f"n must be positive, got {n}")
        self.weight_dim = n
        self.hyper_dim = int(hyper_dim) if hyper_dim is not None else n
        self.inner_lr = float(inner_lr)
        self.train_size = int(train_size)
        self.val_size = 1
        self.backend = Backend(backend)
        self.coupling_scale = float(coupling_scale)
        self.drift_scale = float(drift_scale)
        self.noise_seed = int(noise_seed)
        self.val_target = (
            np.zeros(n) if val_target is None else np.array(val_target, dtype=np.float64)
        )
        self._cache: dict[tuple[int, ...], tuple[Vector, np.ndarray]] = {}

    def _terms(self, batch: Batch) -> tuple[Vector, np.ndarray]:
        cached = self._cache.get(batch.indices)
        if cached is None:
            rng = np.random.default_rng([self.noise_seed, 131, *batch.indices])
            c = self.drift_scale * rng.standard_normal(self.weight_dim)
            M = self.coupling_scale * rng.standard_normal((self.hyper_dim, self.weight_dim))
            cached = (c, M)
            self._cache[batch.indices] = cached
        return cached

    def coupling(self, batch: Batch) -> np.ndarray:
        return self._terms(batch)[1]

    def train_loss(self, w, lam, batch):
        c, M = self._terms(batch)
        return float(c @ w + lam @ (M @ w))

    def grad_train_w(self, w, lam, batch):
        c, M = self._terms(batch)
        return c + M.T @ lam

    def grad_train_lam(self, w, lam, batch):
        return self._terms(batch)[1] @ w

    def val_loss(self, w, lam, batch):
        d = w - self.val_target
        return float(0.5 * d @ d)

    def grad_val_w(self, w, lam, batch):
        return w - self.val_target

    def grad_val_lam(self, w, lam, batch):
        return np.zeros(self.hyper_dim)

    def hvp_train_ww(self, w, lam, batch, alpha):
        return np.zeros(self.weight_dim)

    def hvp_train_wlam(self, w, lam, batch, alpha):
        return self._terms(batch)[1] @ alpha
