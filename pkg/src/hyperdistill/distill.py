"""Hypergradient distillation.

The unrolled second-order sum is approximated by a geometric series,

    g_t_so ~= sum_{i<=t} gamma^(t-i) alpha_t B_i,

and then distilled into a single Jacobian product taken at one
weighted-average weight w*_t and one mixed batch D*_t, maintained
online in O(1) memory:

    g_t_so ~= pi* . sigma(v_t),   v_t = alpha_t * B(w*_t, D*_t),

where sigma normalizes and pi* = theta * ||v_t|| * (1-gamma^t)/(1-gamma)
restores the magnitude of the geometric sum.  theta is refit
periodically by regressing the distilled products against a reference
backward pass (linear_estimation).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .engine import Batch, InnerProblem, JvpRequest, val_grads, vjp_A, vjp_B
from .errors import DomainError, EstimationError
from .hypergrad import Hypergradient, _backward, interpolated_weights
from .trajectory import run_inner
from .vecmath import Vector, l2

log = logging.getLogger(__name__)


def geometric_sum(gamma: float, t: int) -> float:
    """sum_{j=0}^{t-1} gamma^j, with the limit value t at gamma = 1."""
    if t < 1:
        raise DomainError(f"t must be >= 1, got {t}")
    if gamma == 1.0:
        return float(t)
    return (1.0 - gamma**t) / (1.0 - gamma)


def forward_mix_weight(gamma: float, t: int) -> float:
    """p_t = (gamma - gamma^t) / (1 - gamma^t): the carry weight at step t >= 2."""
    if t < 2:
        raise DomainError(f"forward mix weight defined for t >= 2, got {t}")
    if gamma == 1.0:
        return (t - 1.0) / t
    return (gamma - gamma**t) / (1.0 - gamma**t)


def backward_mix_weight(gamma: float, s: int) -> float:
    """p_s = (1 - gamma^(s-1)) / (1 - gamma^s) for the reversed recursion, s >= 2."""
    if s < 2:
        raise DomainError(f"backward mix weight defined for s >= 2, got {s}")
    if gamma == 1.0:
        return (s - 1.0) / s
    return (1.0 - gamma ** (s - 1)) / (1.0 - gamma**s)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def subsample(
    batch: Batch,
    p: float,
    target_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> Batch | None:
    """Uniform sample without replacement of round(|batch| * p) indices.

    target_size overrides the rounded count (callers mixing two batches
    pass complementary counts that must sum exactly to the batch size).
    Returns None for an empty draw, since batches cannot be empty.
    """
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    size = _round_half_up(batch.size * p) if target_size is None else int(target_size)
    if size > batch.size:
        raise DomainError(f"cannot draw {size} of {batch.size} indices")
    if size == 0:
        return None
    if size == batch.size:
        return Batch(tuple(sorted(batch.indices)))
    if rng is None:
        raise DomainError("rng required for a proper subsample")
    picked = rng.choice(batch.size, size=size, replace=False)
    return Batch(tuple(sorted(batch.indices[i] for i in picked)))


def mix_batches(
    carried: Batch,
    incoming: Batch,
    p: float,
    batch_size: int,
    rng: np.random.Generator,
) -> Batch:
    """SS(carried, p) union SS(incoming, 1-p), refilled to batch_size on collision.

    Collisions are refilled from the unused remainder of the incoming
    batch first, then of the carried batch.
    """
    keep_old = _round_half_up(batch_size * p)
    keep_old = min(keep_old, carried.size)
    keep_new = min(batch_size - keep_old, incoming.size)
    old_part = subsample(carried, p, keep_old, rng)
    new_part = subsample(incoming, 1.0 - p, keep_new, rng)
    merged: dict[int, None] = {}
    for part in (old_part, new_part):
        if part is not None:
            merged.update(dict.fromkeys(part.indices))
    deficit = batch_size - len(merged)
    if deficit > 0:
        pool = [i for i in incoming.indices if i not in merged]
        pool += [i for i in carried.indices if i not in merged]
        pool = list(dict.fromkeys(pool))  # an index can sit in both remainders
        if len(pool) < deficit:
            deficit = len(pool)  # both batches identical as sets; nothing more exists
        if deficit > 0:
            picked = rng.choice(len(pool), size=deficit, replace=False)
            merged.update(dict.fromkeys(pool[i] for i in picked))
    return Batch(tuple(sorted(merged)))


@dataclass(frozen=True)
class DistillState:
    """Running distilled weight w*_t and batch D*_t; t = 0 before any update."""

    gamma: float
    batch_size: int
    t: int = 0
    w_star: Vector | None = None
    d_star: Batch | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be positive, got {self.batch_size}")


def distill_forward_update(
    state: DistillState,
    w_prev: Vector,
    batch: Batch,
    rng: np.random.Generator,
) -> DistillState:
    """Advance the distilled state with (w_{t-1}, D_t).

    Realizes the sequential form of the geometric weighted average:
    at t = 1 the state adopts (w_0, D_1); afterwards the carried state
    keeps weight p_t = (gamma - gamma^t)/(1 - gamma^t).  At gamma = 0
    the state is always just the latest (w_{t-1}, D_t).
    """
    t = state.t + 1
    if t == 1:
        return replace(state, t=1, w_star=np.array(w_prev, dtype=np.float64), d_star=batch)
    p = forward_mix_weight(state.gamma, t)
    w_star = p * state.w_star + (1.0 - p) * w_prev
    d_star = mix_batches(state.d_star, batch, p, state.batch_size, rng)
    return replace(state, t=t, w_star=w_star, d_star=d_star)


@dataclass(frozen=True)
class EstimatorState:
    """Fitted size-estimator slope theta for pi* = theta ||v_t|| (1-gamma^t)/(1-gamma)."""

    theta: float
    gamma: float
    samples: tuple[tuple[float, float], ...] = ()
    jvp_count: int = 0


def fit_theta(x, y) -> float:
    """Least-squares slope through the origin, theta = x.y / x.x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError(f"mismatched sample shapes {x.shape} vs {y.shape}")
    if x.size == 0:
        raise EstimationError("no samples to fit")
    xx = float(x @ x)
    if xx == 0.0:
        raise EstimationError("all predictor norms vanished")
    return float(x @ y) / xx


def estimator_predict(est: EstimatorState, t: int, v_norm: float) -> float:
    """pi* = theta * v_norm * sum_{j<t} gamma^j."""
    if v_norm < 0.0:
        raise DomainError(f"v_norm must be nonnegative, got {v_norm}")
    return est.theta * v_norm * geometric_sum(est.gamma, t)


def hyperdistill_hypergradient(
    problem: InnerProblem,
    state: DistillState,
    est: EstimatorState,
    lam: Vector,
    w_current: Vector,
    val_batch: Batch,
    fix_pi: bool = False,
) -> Hypergradient:
    """One distilled hypergradient: g = g_fo + pi* sigma(v_t), a single JVP.

    fix_pi pins pi* = 1 (useful when the validation loss ignores lam
    and only the direction of the second-order term matters).
    """
    if state.t < 1:
        raise DomainError("distilled state has not been updated yet")
    alpha, g_fo = val_grads(problem, w_current, lam, val_batch)
    v = vjp_B(problem, JvpRequest(alpha, state.w_star, lam, state.d_star))
    v_norm = l2(v)
    if v_norm == 0.0:
        log.warning("distilled product vanished at t=%d; dropping second-order term", state.t)
        g_so = np.zeros(problem.hyper_dim)
    else:
        pi = 1.0 if fix_pi else estimator_predict(est, state.t, v_norm)
        g_so = (pi / v_norm) * v
    return Hypergradient(g_fo, g_so, 1)


def backward_distill_path(
    path: list[Vector],
    batches: list[Batch],
    gamma: float,
    batch_size: int,
    rng: np.random.Generator,
):
    """Yield (s, w*_s, D*_s) for s = 1..T over a reversed trajectory.

    The recursion starts from the most recent weights and keeps carry
    weight p_s = (1 - gamma^(s-1)) / (1 - gamma^s), realizing the
    direct form w*_s = sum_{m=1}^{s} gamma^(m-1) path[T-m] / sum_m gamma^(m-1).
    """
    T = len(batches)
    w_star = path[T - 1]
    d_star = batches[T - 1]
    yield 1, w_star, d_star
    for s in range(2, T + 1):
        p = backward_mix_weight(gamma, s)
        w_star = p * w_star + (1.0 - p) * path[T - s]
        d_star = mix_batches(d_star, batches[T - s], p, batch_size, rng)
        yield s, w_star, d_star


def linear_estimation(
    problem: InnerProblem,
    gamma: float,
    lam: Vector,
    phi: Vector,
    sampler,
) -> EstimatorState:
    """Fit theta from one dedicated rollout (3T-1 JVPs total).

    A fresh inner optimization from phi stores only (w_0, w_T) and the
    batch sequence.  A reference backward pass over the interpolated
    path accumulates the index-shifted second-order sums g_s_so while a
    reversed distilled state tracks (w*_s, D*_s); regressing
    sigma(v_s) . g_s_so on ||v_s|| (1-gamma^s)/(1-gamma) gives theta.
    """
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"gamma must lie in [0, 1), got {gamma}")
    batches = sampler.batch_stream(problem)
    val_batch = sampler.val_batch(problem)
    rng = sampler.subsample_rng(problem)
    T = len(batches)
    traj = run_inner(problem, lam, phi, batches, record=False)
    alpha_T, _ = val_grads(problem, traj.wT, traj.lam, val_batch)
    path = interpolated_weights(traj.w0, traj.wT, T)

    alpha = alpha_T
    g_so = np.zeros(problem.hyper_dim)
    count = 0
    xs: list[float] = []
    ys: list[float] = []
    distilled = backward_distill_path(path, batches, gamma, sampler.batch_size, rng)
    for t in range(T, 0, -1):
        req = JvpRequest(alpha, path[t - 1], traj.lam, batches[t - 1])
        g_so = g_so + vjp_B(problem, req)
        count += 1
        if t > 1:
            alpha = vjp_A(problem, req)
            count += 1
        s, w_star, d_star = next(distilled)
        assert s == T - t + 1
        v = vjp_B(problem, JvpRequest(alpha_T, w_star, traj.lam, d_star))
        count += 1
        v_norm = l2(v)
        if v_norm == 0.0:
            xs.append(0.0)
            ys.append(0.0)
        else:
            xs.append(v_norm * geometric_sum(gamma, s))
            ys.append(float((v / v_norm) @ g_so))
    theta = fit_theta(xs, ys)
    return EstimatorState(
        theta=theta,
        gamma=gamma,
        samples=tuple(zip(xs, ys)),
        jvp_count=count,
    )
