"""Alignment and error metrics."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial.transform import Rotation

from geofuse import match_rate, rmse, umeyama_align


def cloud(rng, n: int = 40) -> np.ndarray:
    return rng.normal(scale=30.0, size=(n, 3))


def test_umeyama_identity():
    rng = np.random.default_rng(0)
    pts = cloud(rng)
    res = umeyama_align(pts, pts)
    assert abs(res.scale - 1.0) < 1e-12
    assert_allclose(res.rotation, np.eye(3), atol=1e-12)
    assert_allclose(res.translation, np.zeros(3), atol=1e-10)
    assert res.rmse < 1e-12


def test_umeyama_construct_then_recover():
    rng = np.random.default_rng(1)
    truth = cloud(rng)
    r0 = Rotation.random(random_state=2).as_matrix()
    estimate = 2.0 * truth @ r0.T  # est = 2 R0 truth, so alignment must apply 0.5 R0^-1
    res = umeyama_align(estimate, truth)
    assert abs(res.scale - 0.5) < 1e-9
    assert_allclose(res.rotation, r0.T, atol=1e-9)
    assert np.max(np.linalg.norm(res.apply(estimate) - truth, axis=1)) < 1e-9


def test_umeyama_random_similarity_trials():
    rng = np.random.default_rng(3)
    for trial in range(20):
        truth = cloud(rng)
        s = rng.uniform(0.5, 2.0)
        r = Rotation.random(random_state=100 + trial).as_matrix()
        t = rng.normal(scale=100.0, size=3)
        estimate = (truth - t) @ r / s  # truth = s R est + t
        res = umeyama_align(estimate, truth)
        assert abs(res.scale - s) < 1e-9 * max(1.0, s)
        assert np.max(np.linalg.norm(res.apply(estimate) - truth, axis=1)) < 1e-9
        assert res.rmse < 1e-9


def test_umeyama_never_worse_than_unaligned():
    rng = np.random.default_rng(4)
    truth = cloud(rng)
    estimate = truth + rng.normal(scale=5.0, size=truth.shape)
    res = umeyama_align(estimate, truth)
    assert res.rmse <= rmse(estimate - truth) + 1e-12


def test_umeyama_rejects_degenerate_input():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        umeyama_align(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))
    same = np.tile([1.0, 2.0, 3.0], (10, 1))
    with pytest.raises(ValueError):
        umeyama_align(same, rng.normal(size=(10, 3)))
    line = np.outer(np.linspace(0, 9, 10), [1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        umeyama_align(line, line + rng.normal(scale=0.1, size=line.shape))
    with pytest.raises(ValueError):
        umeyama_align(rng.normal(size=(5, 3)), rng.normal(size=(6, 3)))


def test_rmse_examples():
    assert rmse(np.array([[3.0, 4.0, 0.0]])) == 5.0
    assert rmse(np.zeros((7, 3))) == 0.0
    assert abs(rmse(np.array([3.0, 4.0])) - np.sqrt(12.5)) < 1e-12


def test_rmse_matches_two_pass_recomputation():
    rng = np.random.default_rng(6)
    errs = rng.normal(size=(100, 3))
    total = 0.0
    for e in errs:
        total += float(e[0]) ** 2 + float(e[1]) ** 2 + float(e[2]) ** 2
    assert abs(rmse(errs) - np.sqrt(total / 100.0)) < 1e-12


def test_rmse_empty_raises():
    with pytest.raises(ValueError):
        rmse(np.zeros((0, 3)))


def test_match_rate():
    assert match_rate(50, 100) == 0.5
    assert match_rate(0, 7) == 0.0
    with pytest.raises(ValueError):
        match_rate(1, 0)
    with pytest.raises(ValueError):
        match_rate(5, 4)
    with pytest.raises(ValueError):
        match_rate(-1, 4)
