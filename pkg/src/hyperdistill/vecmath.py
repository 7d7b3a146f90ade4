"""Flat-vector arithmetic used throughout the library.

Every weight, hyperparameter, and gradient is a 1-D float64 array.
Operations validate finiteness and dimensions at their boundaries and
always return fresh arrays; callers treat vectors as immutable values.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError, NormalizationError

Vector = np.ndarray


def as_vector(x, name: str = "vector") -> Vector:
    """Coerce ``x`` to a finite 1-D float64 array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{name} contains non-finite entries")
    return v


def check_length(v: Vector, n: int, name: str = "vector") -> None:
    if v.shape[0] != n:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {n}")


def l2(v: Vector) -> float:
    return float(np.linalg.norm(v))


def normalize(v) -> Vector:
    """Return v / ||v||_2.  Zero input raises NormalizationError."""
    v = as_vector(v)
    n = l2(v)
    if n == 0.0:
        raise NormalizationError("cannot normalize a zero vector")
    return v / n


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between a and b, clipped into [-1, 1]."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = l2(a), l2(b)
    if na == 0.0 or nb == 0.0:
        raise NormalizationError("cosine similarity undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def weighted_average(points, weights) -> Vector:
    """Convex combination sum_i (c_i / sum_j c_j) * points_i.

    Weights must be nonnegative with a positive sum; points must share
    one length.  Invariant under rescaling of the weight vector.
    """
    pts = [as_vector(p, f"points[{i}]") for i, p in enumerate(points)]
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(pts) != w.shape[0]:
        raise DimensionError(
            f"{len(pts)} points but {w.shape[0] if w.ndim == 1 else '?'} weights"
        )
    if len(pts) == 0:
        raise DomainError("weighted_average of an empty set")
    if not np.all(np.isfinite(w)):
        raise DomainError("weights contain non-finite entries")
    if np.any(w < 0.0):
        raise DomainError("weights must be nonnegative")
    total = float(w.sum())
    if total == 0.0:
        raise DomainError("weights sum to zero")
    n = pts[0].shape[0]
    for i, p in enumerate(pts[1:], start=1):
        check_length(p, n, f"points[{i}]")
    out = np.zeros(n)
    for c, p in zip(w, pts):
        out += (c / total) * p
    return out
