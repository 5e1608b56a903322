import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fragilis.linalg import (
    RankDeficientError, RowSpaceProjector, min_norm_preimage_shift, project_row_space, sample_gaussian_matrix,
    sample_unit_sphere, singular_values,
)


def test_gaussian_matrix_determinism_and_moments():
    a = sample_gaussian_matrix(1, 1, 5)
    b = sample_gaussian_matrix(1, 1, 5)
    assert a.entries.tobytes() == b.entries.tobytes()
    assert not np.array_equal(sample_gaussian_matrix(3, 4, 1).entries, sample_gaussian_matrix(3, 4, 2).entries)
    big = sample_gaussian_matrix(100, 100, 0).entries
    assert abs(big.mean()) < 0.05
    assert abs(big.var() - 1) < 0.1
    with pytest.raises(ValueError):
        sample_gaussian_matrix(0, 3, 0)


def test_unit_sphere():
    for s in range(20):
        assert np.linalg.norm(sample_unit_sphere(7, s)) == pytest.approx(1.0, abs=1e-12)
    assert sample_unit_sphere(1, 3)[0] in (-1.0, 1.0)
    rng = np.random.default_rng(0)
    pts = np.array([sample_unit_sphere(3, rng=rng) for _ in range(10_000)])
    assert np.all(np.abs(pts.mean(axis=0)) < 0.05)


def test_preimage_shift_cases():
    A = sample_gaussian_matrix(5, 12, 1)
    x = np.arange(12.0)
    np.testing.assert_allclose(min_norm_preimage_shift(A, x, x), 0.0, atol=1e-12)
    Asq = sample_gaussian_matrix(6, 6, 2)
    t = np.ones(6)
    np.testing.assert_allclose(min_norm_preimage_shift(Asq, x[:6], t), t - x[:6], atol=1e-9)
    low = np.vstack([np.ones(4), np.ones(4)])
    with pytest.raises(RankDeficientError):
        min_norm_preimage_shift(low, np.zeros(4), np.ones(4))


def test_preimage_shift_norm_concentrates():
    norms = []
    for s in range(200):
        A = sample_gaussian_matrix(100, 1000, s)
        t = sample_unit_sphere(1000, s + 10_000)
        norms.append(np.linalg.norm(min_norm_preimage_shift(A, np.zeros(1000), t)))
    assert np.mean(norms) == pytest.approx(np.sqrt(0.1), rel=0.05)


def test_preimage_shift_is_orthogonal_to_null_space(rng):
    A = sample_gaussian_matrix(4, 15, 3)
    proj = RowSpaceProjector.from_matrix(A)
    w = min_norm_preimage_shift(A, rng.standard_normal(15), rng.standard_normal(15), proj)
    for _ in range(10):
        v = rng.standard_normal(15)
        n = v - project_row_space(proj, v)
        assert abs(w @ n) <= 1e-8


def test_projection_examples():
    A = sample_gaussian_matrix(3, 10, 4)
    proj = RowSpaceProjector.from_matrix(A)
    row = A.entries[1]
    np.testing.assert_allclose(project_row_space(proj, row), row, atol=1e-8)
    v = np.random.default_rng(1).standard_normal(10)
    null = v - project_row_space(proj, v)
    np.testing.assert_allclose(project_row_space(proj, null), 0.0, atol=1e-10)
    with pytest.raises(ValueError):
        project_row_space(proj, np.ones(9))


def test_expected_projection_energy():
    # E ||P v||^2 = (M/N) ||v||^2 over draws of A (trace identity)
    N, M = 40, 8
    v = np.random.default_rng(9).standard_normal(N)
    vals = []
    rng = np.random.default_rng(10)
    for _ in range(10_000):
        A = rng.standard_normal((M, N))
        q, _ = np.linalg.qr(A.T)
        vals.append(np.sum((q.T @ v) ** 2))
    assert np.mean(vals) == pytest.approx(M / N * (v @ v), rel=0.02)
    # same identity through the package projector on a smaller sample
    pk = [np.sum(project_row_space(RowSpaceProjector.from_matrix(sample_gaussian_matrix(M, N, s)), v) ** 2)
          for s in range(2000)]
    assert np.mean(pk) == pytest.approx(M / N * (v @ v), rel=0.05)


def test_singular_values():
    np.testing.assert_allclose(singular_values(np.eye(3)), [1, 1, 1])
    np.testing.assert_allclose(singular_values(np.diag([3.0, 4.0])), [4, 3])
    m = np.random.default_rng(2).standard_normal((5, 9))
    s = singular_values(m)
    assert np.all(np.diff(s) <= 0)
    assert np.sum(s**2) == pytest.approx(np.sum(m**2), rel=1e-8)
    with pytest.raises(ValueError):
        singular_values(np.array([[np.nan, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 12), st.integers(0, 2**32 - 1))
def test_projector_idempotent_and_pythagorean(M, extra, seed):
    N = M + extra
    proj = RowSpaceProjector.from_matrix(sample_gaussian_matrix(M, N, seed))
    v = np.random.default_rng(seed).standard_normal(N)
    pv = project_row_space(proj, v)
    assert np.linalg.norm(project_row_space(proj, pv) - pv) <= 1e-8 * np.linalg.norm(v)
    assert v @ v == pytest.approx(pv @ pv + (v - pv) @ (v - pv), rel=1e-8)
    assert np.linalg.norm(pv) <= np.linalg.norm(v) * (1 + 1e-12)
    np.testing.assert_allclose(proj.P, proj.P.T, atol=1e-12)
    assert proj.rank == M
