import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from confusion_energy.errors import ShapeError, SvdConvergenceError, ValidationError
from confusion_energy import linalg
from confusion_energy.linalg import frobenius_norm_sq, matmul, nuclear_norm, svd, transpose


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def gram_eigenvalues(a):
    """Oracle: eigenvalues of a^T a from a symmetric eigensolver, clipped at 0."""
    return np.sort(np.clip(np.linalg.eigvalsh(a.T @ a), 0.0, None))[::-1]


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(max_side=8):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side)).flatmap(
        lambda s: arrays(np.float64, s, elements=finite)
    )


class TestProducts:
    def test_identity(self):
        X = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(matmul(np.eye(2), X), X)

    def test_hand_arithmetic(self):
        np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
        np.testing.assert_allclose(matmul(a, b), triple_loop(a, b), atol=1e-12, rtol=0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_transpose(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(4, 6))
        T = transpose(X)
        assert T.shape == (6, 4)
        for i in range(4):
            for j in range(6):
                assert T[j, i] == X[i, j]
        np.testing.assert_array_equal(transpose(T), X)
        assert transpose(np.ones((1, 5))).shape == (5, 1)

    @pytest.mark.parametrize("a, expected", [(np.eye(3), 3.0), (np.zeros((2, 4)), 0.0), ([[3.0, 4.0]], 25.0)])
    def test_frobenius(self, a, expected):
        assert frobenius_norm_sq(a) == expected


class TestSvd:
    def test_diagonal(self):
        np.testing.assert_allclose(svd(np.diag([3.0, -4.0])).singular_values, [4.0, 3.0], atol=1e-15)

    def test_rank_one(self):
        np.testing.assert_allclose(svd([[1.0, 1.0], [1.0, 1.0]]).singular_values, [2.0, 0.0], atol=1e-15)

    def test_gram_oracle_tall(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(6, 4))
        s = svd(a).singular_values
        np.testing.assert_allclose(s**2, gram_eigenvalues(a), rtol=1e-8)

    @pytest.mark.parametrize("shape", [(6, 4), (4, 6), (1, 5), (5, 1), (7, 7), (40, 25)])
    def test_reconstruction(self, shape):
        rng = np.random.default_rng(sum(shape))
        a = rng.normal(size=shape)
        r = svd(a, want_vectors=True)
        rec = r.left_vectors @ np.diag(r.singular_values) @ r.right_vectors.T
        assert np.max(np.abs(rec - a)) <= 1e-9 * (r.singular_values[0] + 1)
        k = min(shape)
        np.testing.assert_allclose(r.right_vectors.T @ r.right_vectors, np.eye(k), atol=1e-10)
        np.testing.assert_allclose(r.left_vectors.T @ r.left_vectors, np.eye(k), atol=1e-10)

    def test_rank_deficient_vectors_are_completed(self):
        rng = np.random.default_rng(5)
        u = rng.normal(size=(6, 1))
        a = u @ rng.normal(size=(1, 4))
        r = svd(a, want_vectors=True)
        np.testing.assert_allclose(r.left_vectors.T @ r.left_vectors, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(r.left_vectors @ np.diag(r.singular_values) @ r.right_vectors.T, a, atol=1e-12)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValidationError):
            svd([[1.0, np.nan]])

    def test_sweep_budget(self, monkeypatch):
        monkeypatch.setattr(linalg, "MAX_SWEEPS", 1)
        a = np.random.default_rng(0).normal(size=(8, 8))
        with pytest.raises(SvdConvergenceError) as info:
            svd(a)
        assert info.value.residual > linalg.ROTATION_TOL

    @settings(max_examples=60, deadline=None)
    @given(matrices())
    def test_invariants(self, a):
        r = svd(a, want_vectors=True)
        s = r.singular_values
        assert np.all(np.diff(s) <= 0)
        assert np.all(s >= -1e-12 * max(s[0], 0))
        rec = r.left_vectors @ np.diag(s) @ r.right_vectors.T
        assert np.max(np.abs(rec - a)) <= 1e-9 * (s[0] + 1)


class TestNuclearNorm:
    def test_identity(self):
        assert nuclear_norm(np.eye(2)) == pytest.approx(2.0, abs=1e-15)

    def test_diagonal(self):
        assert nuclear_norm(np.diag([3.0, -4.0])) == pytest.approx(7.0, abs=1e-14)

    def test_gram_oracle(self):
        a = np.random.default_rng(7).normal(size=(5, 5))
        assert nuclear_norm(a) == pytest.approx(np.sum(np.sqrt(gram_eigenvalues(a))), rel=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(matrices(), st.floats(-5, 5, allow_nan=False), st.randoms(use_true_random=False))
    def test_permutation_and_scaling(self, a, c, rnd):
        base = nuclear_norm(a)
        perm = list(range(a.shape[0]))
        rnd.shuffle(perm)
        assert nuclear_norm(a[perm]) == pytest.approx(base, abs=1e-10 * (1 + base))
        assert nuclear_norm(c * a) == pytest.approx(abs(c) * base, abs=1e-10 * (1 + abs(c) * base))

    @settings(max_examples=60, deadline=None)
    @given(matrices())
    def test_psd_trace_identity(self, x):
        assert nuclear_norm(x.T @ x) == pytest.approx(frobenius_norm_sq(x), rel=1e-8, abs=1e-12)
