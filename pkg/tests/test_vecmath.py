import numpy as np
import pytest

from hyperdistill.errors import DimensionError, DomainError, NormalizationError
from hyperdistill.vecmath import cosine_similarity, normalize, weighted_average


def test_normalize_example():
    assert np.allclose(normalize([3.0, 4.0]), [0.6, 0.8])


def test_normalize_unit_norm_and_idempotent():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = rng.standard_normal(rng.integers(1, 30)) * 10.0 ** rng.integers(-6, 7)
        u = normalize(v)
        assert np.isclose(np.linalg.norm(u), 1.0, atol=1e-12)
        assert np.allclose(normalize(u), u, atol=1e-12)


def test_normalize_zero_raises():
    with pytest.raises(NormalizationError):
        normalize(np.zeros(4))


def test_normalize_nonfinite_raises():
    with pytest.raises(DomainError):
        normalize([1.0, np.inf])


def test_cosine_parallel_and_antiparallel():
    rng = np.random.default_rng(1)
    for _ in range(200):
        v = rng.standard_normal(8)
        if np.linalg.norm(v) == 0.0:
            continue
        assert cosine_similarity(v, 2.5 * v) == pytest.approx(1.0, abs=1e-12)
        assert cosine_similarity(v, -0.3 * v) == pytest.approx(-1.0, abs=1e-12)


def test_cosine_orthogonal():
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0, abs=1e-15)


def test_cosine_bounds():
    rng = np.random.default_rng(2)
    for _ in range(500):
        a = rng.standard_normal(5)
        b = rng.standard_normal(5)
        c = cosine_similarity(a, b)
        assert -1.0 <= c <= 1.0


def test_cosine_errors():
    with pytest.raises(NormalizationError):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(DimensionError):
        cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


def test_weighted_average_two_point_example():
    # weights (gamma, 1) with gamma = 0.5 puts 1/3 on the older point
    w0 = np.array([3.0, 0.0])
    w1 = np.array([0.0, 3.0])
    out = weighted_average([w0, w1], [0.5, 1.0])
    assert np.allclose(out, [1.0, 2.0], atol=1e-14)


def test_weighted_average_scale_invariance():
    rng = np.random.default_rng(3)
    for _ in range(200):
        k = int(rng.integers(1, 8))
        pts = [rng.standard_normal(6) for _ in range(k)]
        w = rng.random(k) + 1e-3
        a = weighted_average(pts, w)
        b = weighted_average(pts, 37.5 * w)
        assert np.allclose(a, b, atol=1e-12)


def test_weighted_average_convex_hull():
    rng = np.random.default_rng(4)
    for _ in range(200):
        k = int(rng.integers(1, 6))
        pts = [rng.standard_normal(4) for _ in range(k)]
        w = rng.random(k)
        w[int(rng.integers(k))] += 1e-6  # keep the sum positive
        out = weighted_average(pts, w)
        stacked = np.stack(pts)
        assert np.all(out >= stacked.min(axis=0) - 1e-12)
        assert np.all(out <= stacked.max(axis=0) + 1e-12)


def test_weighted_average_single_point():
    p = np.array([1.0, -2.0, 3.0])
    assert np.allclose(weighted_average([p], [0.7]), p)


def test_weighted_average_errors():
    with pytest.raises(DomainError):
        weighted_average([], [])
    with pytest.raises(DomainError):
        weighted_average([np.ones(2)], [0.0])
    with pytest.raises(DomainError):
        weighted_average([np.ones(2), np.ones(2)], [1.0, -0.5])
    with pytest.raises(DimensionError):
        weighted_average([np.ones(2), np.ones(3)], [1.0, 1.0])
    with pytest.raises(DimensionError):
        weighted_average([np.ones(2)], [1.0, 1.0])
