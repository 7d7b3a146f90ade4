"""Gradient substrate for inner problems.

An inner problem exposes first-order gradients of its training and
validation losses.  The two transition-Jacobian products needed by
every hypergradient method,

    alpha * A_t = alpha * d Phi(w, lam; D) / dw
    alpha * B_t = alpha * d Phi(w, lam; D) / dlam

with Phi(w, lam; D) = w - eta * grad_w L_train(w, lam; D), are obtained
either from closed forms supplied by the problem (analytic backend) or
by symmetric finite differences of the first-order gradients
(finite-difference backend).  No autodiff framework is involved.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .vecmath import Vector, as_vector, check_length, l2


class Backend(str, Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "fd"


@dataclass(frozen=True)
class Batch:
    """An ordered set of unique example indices into one data split."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0:
            raise DomainError("empty batch")
        if len(set(idx)) != len(idx):
            raise DomainError("batch indices must be unique")
        if min(idx) < 0:
            raise DomainError("batch indices must be nonnegative")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return len(self.indices)

    def array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.intp)


@dataclass(frozen=True)
class JvpRequest:
    """Inputs for one vector-Jacobian product against the SGD update map."""

    alpha: Vector
    w: Vector
    lam: Vector
    batch: Batch


class InnerProblem(abc.ABC):
    """One bilevel task instance: losses, gradients, and the update map.

    Attributes set by subclasses:
      weight_dim, hyper_dim : sizes of w and lam
      inner_lr              : eta used by sgd_step
      train_size, val_size  : number of examples per split
      backend               : how Jacobian products are computed
      key                   : hashable identity for deterministic RNG streams
    """

    weight_dim: int
    hyper_dim: int
    inner_lr: float
    train_size: int
    val_size: int
    backend: Backend
    key: tuple = ()

    @abc.abstractmethod
    def train_loss(self, w: Vector, lam: Vector, batch: Batch) -> float: ...

    @abc.abstractmethod
    def grad_train_w(self, w: Vector, lam: Vector, batch: Batch) -> Vector: ...

    @abc.abstractmethod
    def grad_train_lam(self, w: Vector, lam: Vector, batch: Batch) -> Vector: ...

    @abc.abstractmethod
    def val_loss(self, w: Vector, lam: Vector, batch: Batch) -> float: ...

    @abc.abstractmethod
    def grad_val_w(self, w: Vector, lam: Vector, batch: Batch) -> Vector: ...

    @abc.abstractmethod
    def grad_val_lam(self, w: Vector, lam: Vector, batch: Batch) -> Vector: ...

    def val_grad_pair(self, w: Vector, lam: Vector, batch: Batch) -> tuple[Vector, Vector]:
        """Both validation gradients; subclasses may fuse the two passes."""
        return self.grad_val_w(w, lam, batch), self.grad_val_lam(w, lam, batch)

    # Closed-form curvature products, required only under Backend.ANALYTIC.

    def hvp_train_ww(self, w: Vector, lam: Vector, batch: Batch, alpha: Vector) -> Vector:
        """alpha * d(grad_w L_train)/dw as a weight-space vector."""
        raise ConfigError(f"{type(self).__name__} has no analytic curvature")

    def hvp_train_wlam(self, w: Vector, lam: Vector, batch: Batch, alpha: Vector) -> Vector:
        """alpha * d(grad_w L_train)/dlam as a hyper-space vector."""
        raise ConfigError(f"{type(self).__name__} has no analytic curvature")

    def init_weight(self, rng: np.random.Generator) -> Vector:
        return rng.uniform(-1.0, 1.0, self.weight_dim) / np.sqrt(self.weight_dim)

    def init_hyper(self, rng: np.random.Generator) -> Vector:
        return rng.uniform(-1.0, 1.0, self.hyper_dim) / np.sqrt(self.hyper_dim)

    def _check(self, w: Vector, lam: Vector, batch: Batch, split: str = "train") -> None:
        check_length(w, self.weight_dim, "w")
        check_length(lam, self.hyper_dim, "lam")
        limit = self.train_size if split == "train" else self.val_size
        if batch.size > limit or max(batch.indices) >= limit:
            raise DimensionError(
                f"batch indices out of range for {split} split of size {limit}"
            )


def grad_train(problem: InnerProblem, w, lam, batch: Batch) -> Vector:
    """Training-loss gradient in w at (w, lam) on one batch."""
    w = as_vector(w, "w")
    lam = as_vector(lam, "lam")
    problem._check(w, lam, batch, "train")
    g = problem.grad_train_w(w, lam, batch)
    return as_vector(g, "grad_train_w")


def val_grads(problem: InnerProblem, w, lam, val_batch: Batch) -> tuple[Vector, Vector]:
    """Validation gradients (alpha, g_fo) = (dL_val/dw, dL_val/dlam)."""
    w = as_vector(w, "w")
    lam = as_vector(lam, "lam")
    problem._check(w, lam, val_batch, "val")
    alpha, g_fo = problem.val_grad_pair(w, lam, val_batch)
    return as_vector(alpha, "alpha"), as_vector(g_fo, "g_fo")


def sgd_step(problem: InnerProblem, w, lam, batch: Batch) -> Vector:
    """One inner update w - eta * grad_w L_train(w, lam; batch)."""
    w = as_vector(w, "w")
    g = grad_train(problem, w, lam, batch)
    return w - problem.inner_lr * g


def fd_epsilon(w: Vector) -> float:
    """Central-difference step sqrt(machine eps) * (1 + ||w||_inf)."""
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    return float(np.sqrt(np.finfo(np.float64).eps) * (1.0 + scale))


def _validate_request(problem: InnerProblem, req: JvpRequest) -> tuple[Vector, Vector, Vector]:
    alpha = as_vector(req.alpha, "alpha")
    w = as_vector(req.w, "w")
    lam = as_vector(req.lam, "lam")
    check_length(alpha, problem.weight_dim, "alpha")
    problem._check(w, lam, req.batch, "train")
    return alpha, w, lam


def vjp_A(problem: InnerProblem, req: JvpRequest) -> Vector:
    """alpha * A = alpha - eta * (alpha * d(grad_w L_train)/dw)."""
    alpha, w, lam = _validate_request(problem, req)
    norm = l2(alpha)
    if norm == 0.0:
        return np.zeros(problem.weight_dim)
    if problem.backend is Backend.ANALYTIC:
        hv = as_vector(problem.hvp_train_ww(w, lam, req.batch, alpha), "hvp_ww")
        check_length(hv, problem.weight_dim, "hvp_ww")
    else:
        unit = alpha / norm
        eps = fd_epsilon(w)
        gp = problem.grad_train_w(w + eps * unit, lam, req.batch)
        gm = problem.grad_train_w(w - eps * unit, lam, req.batch)
        hv = (gp - gm) / (2.0 * eps) * norm
    return alpha - problem.inner_lr * hv


def vjp_B(problem: InnerProblem, req: JvpRequest) -> Vector:
    """alpha * B = -eta * (alpha * d(grad_w L_train)/dlam)."""
    alpha, w, lam = _validate_request(problem, req)
    norm = l2(alpha)
    if norm == 0.0:
        return np.zeros(problem.hyper_dim)
    if problem.backend is Backend.ANALYTIC:
        cv = as_vector(problem.hvp_train_wlam(w, lam, req.batch, alpha), "hvp_wlam")
        check_length(cv, problem.hyper_dim, "hvp_wlam")
    else:
        # Symmetry of mixed second derivatives lets the lam-gradient carry
        # the w-direction perturbation.
        unit = alpha / norm
        eps = fd_epsilon(w)
        gp = problem.grad_train_lam(w + eps * unit, lam, req.batch)
        gm = problem.grad_train_lam(w - eps * unit, lam, req.batch)
        cv = (gp - gm) / (2.0 * eps) * norm
    return -problem.inner_lr * cv
