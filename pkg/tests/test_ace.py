import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confusion_energy.ace import (
    AdaptiveMatrix,
    AdaptiveSpec,
    LossConfig,
    ace_energy,
    ace_grad_wrt_Ahat,
    ace_grad_wrt_logits,
    ace_grad_wrt_P,
    ace_loss_learnable,
    assemble_prediction_matrix,
    bcn,
    build_adaptive_matrix,
    softmax_columns,
    total_loss,
)
from confusion_energy.errors import NumericalError, ShapeError, ValidationError
from confusion_energy.gradcheck import numeric_grad, relative_error


def gram_nuclear(X):
    """Oracle: nuclear norm as the sum of sqrt of Gram eigenvalues."""
    return float(np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(X.T @ X), 0, None))))


def random_P(rng, C, M):
    return rng.dirichlet(np.ones(C), size=M).T


@st.composite
def batches(draw, max_m=16, max_c=32):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    M = draw(st.integers(1, max_m))
    C = draw(st.integers(2, max_c))
    conc = draw(st.sampled_from([0.05, 1.0, 20.0]))
    return rng.dirichlet(np.full(C, conc), size=M).T, rng.uniform(0.05, 4.0, size=C)


class TestAssemble:
    def test_one_hots(self):
        batch = assemble_prediction_matrix([[1, 0, 0], [0, 1, 0]], [0, 1])
        np.testing.assert_array_equal(batch.P, [[1, 0], [0, 1], [0, 0]])

    def test_single_column(self):
        batch = assemble_prediction_matrix([[0.2, 0.8]], [1])
        np.testing.assert_array_equal(batch.P, [[0.2], [0.8]])

    def test_columns_are_inputs(self):
        rng = np.random.default_rng(1)
        vecs = rng.dirichlet(np.ones(5), size=4)
        batch = assemble_prediction_matrix(list(vecs), [0, 1, 2, 3])
        for j in range(4):
            np.testing.assert_array_equal(batch.P[:, j], vecs[j])

    def test_ragged(self):
        with pytest.raises(ShapeError):
            assemble_prediction_matrix([[0.5, 0.5], [1.0, 0.0, 0.0]], [0, 1])

    def test_not_normalized(self):
        with pytest.raises(ValidationError):
            assemble_prediction_matrix([[0.5, 0.6]], [0])


class TestAdaptiveMatrix:
    @pytest.mark.parametrize("tau", [0.0, 0.1, 1.0, 3.0])
    def test_balanced_is_identity(self, tau):
        A = build_adaptive_matrix(AdaptiveSpec([20, 20, 20], tau))
        assert A.diag.tolist() == [1.0, 1.0, 1.0]

    def test_tau_zero(self):
        A = build_adaptive_matrix(AdaptiveSpec([30, 20, 10], 0.0))
        np.testing.assert_allclose(A.diag, [1.5, 1.0, 0.5], rtol=1e-15)

    def test_tau_point_one(self):
        # frozen from a 30-digit mpmath evaluation
        A = build_adaptive_matrix(AdaptiveSpec([30, 20, 10], 0.1))
        np.testing.assert_allclose(A.diag, [1.649060994716035, 1.0, 0.4252373227774020], rtol=1e-12)
        np.testing.assert_array_equal(A.frozen_reference, A.diag)

    def test_population_sigma(self):
        spec = AdaptiveSpec([30, 20, 10], 0.1)
        assert spec.sigma == pytest.approx(np.sqrt(200 / 3), rel=1e-15)

    @pytest.mark.parametrize("counts", [[0, 5], [3], [-1, 4, 4]])
    def test_invalid_counts(self, counts):
        with pytest.raises(ValidationError):
            AdaptiveSpec(counts, 0.1)

    def test_underflow_is_reported(self):
        with pytest.raises(NumericalError):
            build_adaptive_matrix(AdaptiveSpec([1, 34], 2.0))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(1, 1000), min_size=2, max_size=40), st.floats(0.01, 0.5))
    def test_head_tail_shaping(self, counts, tau):
        counts = sorted(counts, reverse=True)
        spec = AdaptiveSpec(counts, tau)
        A = build_adaptive_matrix(spec)
        assert np.all(A.diag > 0) and np.all(np.isfinite(A.diag))
        if spec.sigma > 1:
            assert np.all(np.diff(A.diag) <= 0)
            c = np.asarray(counts, dtype=float)
            assert np.all(A.diag[c > spec.mu] > 1)
            assert np.all(A.diag[c < spec.mu] < 1)


class TestBcn:
    @pytest.mark.parametrize("path", ["svd_reference", "trace_fast"])
    def test_one_hot_columns(self, path):
        P = np.eye(6)[:, [0, 2, 3, 5]]
        assert bcn(P, path) == pytest.approx(4.0, abs=1e-12)

    @pytest.mark.parametrize("path", ["svd_reference", "trace_fast"])
    def test_uniform_columns(self, path):
        P = np.full((6, 4), 1 / 6)
        assert bcn(P, path) == pytest.approx(4 / 6, abs=1e-12)

    def test_paths_agree(self):
        P = random_P(np.random.default_rng(2), 6, 4)
        assert bcn(P, "svd_reference") == pytest.approx(bcn(P, "trace_fast"), rel=1e-10)

    def test_unknown_path(self):
        with pytest.raises(ValidationError):
            bcn(np.eye(2), "fast")
        with pytest.raises(ValidationError):
            LossConfig(bcn_path="fast")

    @settings(max_examples=200, deadline=None)
    @given(batches())
    def test_bounds(self, pa):
        P, _ = pa
        C, M = P.shape
        v = bcn(P)
        assert M / C - 1e-12 <= v <= M + 1e-12


class TestAceEnergy:
    def test_identity_reduces_to_bcn(self):
        P = random_P(np.random.default_rng(3), 7, 5)
        assert ace_energy(P, np.ones(7)) == pytest.approx(bcn(P), rel=1e-15)
        assert ace_energy(P, np.ones(7), "svd_reference") == bcn(P, "svd_reference")

    def test_single_one_hot(self):
        P = np.zeros((4, 1))
        P[2, 0] = 1.0
        assert ace_energy(P, [0.5, 2.0, 3.0, 1.5]) == 9.0

    def test_gram_oracle(self):
        rng = np.random.default_rng(4)
        P, a = random_P(rng, 8, 5), rng.uniform(0.1, 3, 8)
        AP = a[:, None] * P
        oracle = gram_nuclear(AP.T @ AP)
        assert ace_energy(P, a, "svd_reference") == pytest.approx(oracle, rel=1e-10)
        assert ace_energy(P, a, "trace_fast") == pytest.approx(oracle, rel=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ace_energy(np.full((3, 2), 1 / 3), np.ones(4))

    @settings(max_examples=150, deadline=None)
    @given(batches())
    def test_paths_agree(self, pa):
        P, a = pa
        ref = ace_energy(P, a, "svd_reference")
        assert ref == pytest.approx(ace_energy(P, a, "trace_fast"), rel=1e-8)

    @settings(max_examples=50, deadline=None)
    @given(batches(), st.randoms(use_true_random=False))
    def test_column_permutation(self, pa, rnd):
        P, a = pa
        perm = list(range(P.shape[1]))
        rnd.shuffle(perm)
        assert ace_energy(P[:, perm], a) == pytest.approx(ace_energy(P, a), rel=1e-14)
        np.testing.assert_array_equal(ace_grad_wrt_P(P[:, perm], a), ace_grad_wrt_P(P, a)[:, perm])


class TestLearnable:
    def test_no_deviation(self):
        rng = np.random.default_rng(5)
        P = random_P(rng, 5, 3)
        A = build_adaptive_matrix(AdaptiveSpec([9, 5, 4, 2, 1], 0.1))
        assert ace_loss_learnable(P, A, 3.0) == ace_energy(P, A)

    def test_uniform_identity(self):
        P = np.full((5, 3), 0.2)
        assert ace_loss_learnable(P, AdaptiveMatrix.identity(5), 1.0) == pytest.approx(3 / 5, abs=1e-15)

    def test_perturbed_entry(self):
        rng = np.random.default_rng(6)
        P = random_P(rng, 4, 3)
        A = AdaptiveMatrix.identity(4)
        d = A.diag.copy()
        d[2] += 0.1
        A_hat = A.with_diag(d)
        assert ace_loss_learnable(P, A_hat, 1.0) == pytest.approx(ace_energy(P, A_hat) + 0.01, rel=1e-12)


class TestTotalLoss:
    def test_lambda_zero(self):
        assert total_loss(0.7, 123.0, 0.0) == 0.7

    def test_fgvc_setting(self):
        assert total_loss(0.5, 0.2, 10.0) == pytest.approx(2.5, abs=1e-15)

    def test_natural_world_setting(self):
        # lambda = 2, tau = 0: A = counts / mean
        P = np.full((3, 2), 1 / 3)
        A = build_adaptive_matrix(AdaptiveSpec([6, 3, 3], 0.0))
        np.testing.assert_allclose(A.diag, [1.5, 0.75, 0.75])
        energy = ace_energy(P, A)
        assert total_loss(1.0, energy, 2.0) == pytest.approx(1.0 + 2.0 * energy)


class TestGradients:
    def test_grad_P_uniform_identity(self):
        C = 5
        G = ace_grad_wrt_P(np.full((C, 3), 1 / C), np.ones(C))
        np.testing.assert_allclose(G, 2 / C)

    def test_grad_P_zero_rows(self):
        P = np.zeros((4, 2))
        P[1] = 1.0
        G = ace_grad_wrt_P(P, [1.0, 2.0, 3.0, 4.0])
        assert np.all(G[[0, 2, 3]] == 0)

    def test_grad_Ahat_no_deviation(self):
        rng = np.random.default_rng(8)
        P = random_P(rng, 4, 6)
        A = AdaptiveMatrix(rng.uniform(0.5, 2, 4), None)
        A = AdaptiveMatrix(A.diag, A.diag.copy())
        np.testing.assert_allclose(ace_grad_wrt_Ahat(P, A, 7.0), 2 * A.diag * np.sum(P**2, axis=1))

    def test_grad_Ahat_zero_row(self):
        P = np.zeros((3, 2))
        P[0] = 1.0
        A = AdaptiveMatrix(np.array([1.0, 1.5, 0.7]), np.array([1.0, 1.0, 1.0]))
        g = ace_grad_wrt_Ahat(P, A, 2.0)
        assert g[1] == pytest.approx(2 * 2.0 * 0.5)
        assert g[2] == pytest.approx(2 * 2.0 * -0.3)

    def test_logits_uniform_stationary(self):
        C = 6
        G = ace_grad_wrt_logits(np.full((C, 4), 1 / C), np.ones(C))
        np.testing.assert_allclose(G, 0.0, atol=1e-16)

    def test_logits_saturated(self):
        P = softmax_columns(np.array([[60.0], [0.0], [0.0]]))
        assert np.max(np.abs(ace_grad_wrt_logits(P, np.ones(3)))) < 1e-20

    @settings(max_examples=100, deadline=None)
    @given(batches(max_m=8, max_c=10))
    def test_finite_differences(self, pa):
        P, a = pa
        C, M = P.shape
        rng = np.random.default_rng(C * 100 + M)
        assert relative_error(ace_grad_wrt_P(P, a), numeric_grad(lambda q: ace_energy(q, a), P)) <= 1e-5
        A_hat = AdaptiveMatrix(a, a + rng.normal(scale=0.2, size=C))
        f = lambda d: ace_loss_learnable(P, A_hat.with_diag(d), 1.5)
        assert relative_error(ace_grad_wrt_Ahat(P, A_hat, 1.5), numeric_grad(f, a)) <= 1e-5
        Z = rng.normal(scale=2, size=(C, M))
        g = ace_grad_wrt_logits(softmax_columns(Z), a)
        assert relative_error(g, numeric_grad(lambda z: ace_energy(softmax_columns(z), a), Z)) <= 1e-5
