from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnpunmix._errors import ParameterError
from pnpunmix.metrics import (FIELDS, align, armse, evaluate, mrmse, msad, psnr, read_reports,
                              sad, sad_cost, table, write_reports)


def test_armse_example():
    assert armse(np.array([[1.0], [0.0]]), np.array([[0.9], [0.1]])) == pytest.approx(0.1)
    A = np.random.default_rng(0).random((3, 5))
    assert armse(A, A) == 0.0
    assert mrmse(A, A) == 0.0


def test_angles():
    assert sad(np.array([[1.0], [2.0]]), np.array([[1.0], [2.0]])) == 0.0
    assert sad(np.array([[1.0], [0.0]]), np.array([[0.0], [3.0]])) == pytest.approx(90.0)
    assert msad(np.array([[1.0], [0.0]]), np.array([[1.0], [1.0]])) == pytest.approx(45.0)


def test_tiny_angle_is_resolved():
    u = np.array([[1.0], [0.0]])
    v = np.array([[1.0], [1e-9]])
    assert sad(u, v) == pytest.approx(np.degrees(1e-9), rel=1e-6)


def test_zero_spectrum_rejected():
    with pytest.raises(ParameterError):
        sad(np.zeros((3, 1)), np.ones((3, 1)))


def test_psnr_examples():
    Xhat = np.zeros((2, 50))
    Xhat[0, 0] = 1.0
    X = Xhat + 0.1  # MSE = 0.01, peak = 1
    assert psnr(X, Xhat) == pytest.approx(20.0)
    assert psnr(Xhat, Xhat) == float("inf")
    with pytest.raises(ParameterError):
        psnr(X, np.zeros_like(X))


def test_align_identity_and_swap():
    M = np.random.default_rng(1).random((6, 3)) + 0.1
    np.testing.assert_array_equal(align(M, M), [0, 1, 2])
    np.testing.assert_array_equal(align(M[:, [1, 0, 2]], M), [1, 0, 2])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 6))
def test_hungarian_matches_exhaustive(seed, R):
    rng = np.random.default_rng(seed)
    true = rng.random((8, R)) + 0.05
    est = rng.random((8, R)) + 0.05
    cost = sad_cost(est, true)
    idx = np.arange(R)
    brute = min(cost[idx, list(p)].sum() for p in permutations(range(R)))
    assert cost[idx, align(est, true)].sum() == pytest.approx(brute, abs=1e-9)
    np.testing.assert_allclose(cost[idx, align(est, true, "exhaustive")].sum(), brute)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_metrics_invariant_under_permutation(seed):
    rng = np.random.default_rng(seed)
    M, A = rng.random((10, 4)) + 0.1, rng.dirichlet(np.ones(4), 20).T
    Me, Ae = M + 0.05 * rng.random(M.shape), rng.dirichlet(np.ones(4), 20).T
    p = rng.permutation(4)
    a = evaluate(Me, Ae, M, A)
    b = evaluate(Me[:, p], Ae[p], M, A)
    for f in FIELDS:
        assert getattr(a, f) == pytest.approx(getattr(b, f), rel=1e-12)
    assert sorted(b.permutation) == [0, 1, 2, 3]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.01, 100.0))
def test_sad_scale_invariant(seed, s):
    rng = np.random.default_rng(seed)
    Y, Z = rng.random((7, 3)) + 0.1, rng.random((7, 3)) + 0.1
    assert sad(Y, s * Z) == pytest.approx(sad(Y, Z), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_armse_symmetric_and_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.random((3, 9)) for _ in range(3))
    assert armse(a, b) == armse(b, a)
    assert armse(a, c) <= armse(a, b) + armse(b, c) + 1e-12


def test_evaluate_truth_is_perfect():
    rng = np.random.default_rng(2)
    M, A = rng.random((10, 3)) + 0.1, rng.dirichlet(np.ones(3), 12).T
    rep = evaluate(M, A, M, A, label="x")
    assert rep.armse == rep.mrmse == rep.msad == 0.0
    assert rep.psnr == float("inf")
    with pytest.raises(ParameterError):
        evaluate(M[:, :2], A[:2], M, A)


def test_report_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    M, A = rng.random((10, 3)) + 0.1, rng.dirichlet(np.ones(3), 12).T
    reps = [evaluate(M * 1.1, A, M, A, label="a"), evaluate(M, A[[1, 0, 2]], M, A, label="b")]
    write_reports(reps, tmp_path / "r.csv")
    assert read_reports(tmp_path / "r.csv") == reps
    grid = table(reps)
    assert grid[0] == ["metric", "a", "b"]
    assert [row[0] for row in grid[1:]] == list(FIELDS)
