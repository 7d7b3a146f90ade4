"""Hypergradient baselines: exact reverse-mode and its approximations.

All methods share the decomposition

    g = g_fo + g_so,
    g_so = sum_t alpha_T (prod_{s>t} A_s) B_t,

and differ only in how the second-order sum is approximated and at
which weights the Jacobian products are evaluated.  jvp_count records
exactly how many vjp_A / vjp_B evaluations were spent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Batch, InnerProblem, JvpRequest, sgd_step, val_grads, vjp_A, vjp_B
from .errors import DomainError, NeumannDivergence, TrajectoryError
from .trajectory import Trajectory
from .vecmath import Vector, as_vector, l2


@dataclass
class Hypergradient:
    g_fo: Vector
    g_so: Vector
    jvp_count: int

    @property
    def total(self) -> Vector:
        return self.g_fo + self.g_so


def _require_recorded(trajectory: Trajectory) -> None:
    if trajectory.T == 0:
        raise TrajectoryError("empty trajectory")
    if trajectory.intermediates is None:
        raise TrajectoryError("reverse-mode needs a recorded trajectory")
    if len(trajectory.intermediates) != trajectory.T - 1:
        raise TrajectoryError(
            f"expected {trajectory.T - 1} intermediates, got {len(trajectory.intermediates)}"
        )


def _backward(
    problem: InnerProblem,
    weights_prev: list[Vector],
    batches: list[Batch],
    lam: Vector,
    alpha: Vector,
) -> tuple[Vector, int]:
    """Accumulate sum_t alpha_t B_t while propagating alpha through A_t.

    weights_prev[t-1] is the expansion point for step t.  The final
    alpha * A product (t = 1) is skipped because nothing consumes it.
    """
    T = len(batches)
    g_so = np.zeros(problem.hyper_dim)
    count = 0
    for t in range(T, 0, -1):
        req = JvpRequest(alpha, weights_prev[t - 1], lam, batches[t - 1])
        g_so += vjp_B(problem, req)
        count += 1
        if t > 1:
            alpha = vjp_A(problem, req)
            count += 1
    return g_so, count


def rmd_exact(problem: InnerProblem, trajectory: Trajectory, val_batch: Batch) -> Hypergradient:
    """Exact reverse-mode differentiation over the stored trajectory (2T-1 JVPs)."""
    _require_recorded(trajectory)
    alpha, g_fo = val_grads(problem, trajectory.wT, trajectory.lam, val_batch)
    weights_prev = [trajectory.w0, *trajectory.intermediates]
    g_so, count = _backward(problem, weights_prev, trajectory.batches, trajectory.lam, alpha)
    return Hypergradient(g_fo, g_so, count)


def interpolated_weights(w0: Vector, wT: Vector, T: int) -> list[Vector]:
    """The DrMAD path hat-w_{t-1} = (1 - (t-1)/T) w0 + ((t-1)/T) wT for t = 1..T."""
    return [(1.0 - (t - 1) / T) * w0 + ((t - 1) / T) * wT for t in range(1, T + 1)]


def drmad(
    problem: InnerProblem,
    w0,
    wT,
    batches: list[Batch],
    lam,
    val_batch: Batch,
) -> Hypergradient:
    """Reverse-mode along the linear interpolation of (w0, wT); 2T-1 JVPs."""
    T = len(batches)
    if T == 0:
        raise TrajectoryError("empty trajectory")
    w0 = as_vector(w0, "w0")
    wT = as_vector(wT, "wT")
    lam = as_vector(lam, "lam")
    alpha, g_fo = val_grads(problem, wT, lam, val_batch)
    g_so, count = _backward(problem, interpolated_weights(w0, wT, T), batches, lam, alpha)
    return Hypergradient(g_fo, g_so, count)


def fo_hypergradient(problem: InnerProblem, wT, lam, val_batch: Batch) -> Hypergradient:
    """First-order only: the second-order sum is dropped entirely."""
    _, g_fo = val_grads(problem, wT, lam, val_batch)
    return Hypergradient(g_fo, np.zeros(problem.hyper_dim), 0)


def one_step(
    problem: InnerProblem,
    w_prev,
    lam,
    batch: Batch,
    val_batch: Batch,
) -> Hypergradient:
    """Truncate the unrolled sum to the most recent step: g_so = alpha_t B_t."""
    w_prev = as_vector(w_prev, "w_prev")
    lam = as_vector(lam, "lam")
    w_t = sgd_step(problem, w_prev, lam, batch)
    alpha, g_fo = val_grads(problem, w_t, lam, val_batch)
    g_so = vjp_B(problem, JvpRequest(alpha, w_prev, lam, batch))
    return Hypergradient(g_fo, g_so, 1)


def neumann_ift(
    problem: InnerProblem,
    wT,
    lam,
    batch: Batch,
    val_batch: Batch,
    n_terms: int,
    growth_limit: float = 10.0,
) -> Hypergradient:
    """Implicit-function-theorem hypergradient with a truncated Neumann series.

    Realizes g_so = alpha (sum_{j=0}^{N} A^j) B with every product taken
    at the current (wT, batch); costs N+1 JVPs.  Raises NeumannDivergence
    when ||v|| grows past growth_limit times its initial norm, which
    signals a non-contractive A.
    """
    if n_terms < 0:
        raise DomainError(f"n_terms must be >= 0, got {n_terms}")
    wT = as_vector(wT, "wT")
    lam = as_vector(lam, "lam")
    alpha, g_fo = val_grads(problem, wT, lam, val_batch)
    limit = growth_limit * l2(alpha)
    p = alpha.copy()
    v = alpha
    count = 0
    for _ in range(n_terms):
        v = vjp_A(problem, JvpRequest(v, wT, lam, batch))
        count += 1
        if l2(v) > limit:
            raise NeumannDivergence(
                f"||v|| exceeded {growth_limit}x its initial value after {count} terms"
            )
        p += v
    g_so = vjp_B(problem, JvpRequest(p, wT, lam, batch))
    count += 1
    return Hypergradient(g_fo, g_so, count)


def so_geometric_reference(
    problem: InnerProblem,
    trajectory: Trajectory,
    val_batch: Batch,
    gamma: float,
) -> Vector:
    """The geometric Hessian-identity sum sum_i gamma^(T-i) alpha_T B_i (T JVPs).

    Every product uses the final validation gradient alpha_T and the
    true stored weights, so this isolates the quality of the geometric
    approximation itself.
    """
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {gamma}")
    _require_recorded(trajectory)
    alpha_T, _ = val_grads(problem, trajectory.wT, trajectory.lam, val_batch)
    weights_prev = [trajectory.w0, *trajectory.intermediates]
    T = trajectory.T
    g = np.zeros(problem.hyper_dim)
    for i in range(1, T + 1):
        req = JvpRequest(alpha_T, weights_prev[i - 1], trajectory.lam, trajectory.batches[i - 1])
        g += gamma ** (T - i) * vjp_B(problem, req)
    return g
