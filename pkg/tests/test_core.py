"""Transfer-operator algebra: gauge, Lindblad action, stationary states."""

import numpy as np
import pytest
import scipy.linalg

from rcmps.core import (
    CmpsState,
    DegenerateSteadyState,
    apply_adjoint_lindblad,
    apply_lindblad,
    gauge_q,
    lindblad_matrix,
    matrix_from_pairs,
    matrix_to_pairs,
    stationary_state,
)

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
LOWERING = np.array([[0.0, 0.0], [1.0, 0.0]])  # decay |1> -> |2>


def random_state(rng, D, m=1.0, scale=None):
    scale = scale if scale is not None else 1.0 / np.sqrt(D)
    A = rng.uniform(-1, 1, (D, D)) + 1j * rng.uniform(-1, 1, (D, D))
    R = scale * (rng.uniform(-1, 1, (D, D)) + 1j * rng.uniform(-1, 1, (D, D)))
    return CmpsState(K=0.5 * (A + A.conj().T), R=R, m=m)


def random_hermitian(rng, D):
    A = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    return 0.5 * (A + A.conj().T)


class TestState:
    def test_hermitizes_k(self):
        st = CmpsState(K=[[1.0, 1.0], [0.0, 2.0]], R=np.zeros((2, 2)))
        assert np.allclose(st.K, st.K.conj().T)
        assert np.allclose(st.K, [[1.0, 0.5], [0.5, 2.0]])

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            CmpsState(K=np.zeros((2, 3)), R=np.zeros((2, 3)))
        with pytest.raises(ValueError):
            CmpsState(K=np.zeros((2, 2)), R=np.zeros((3, 3)))
        with pytest.raises(ValueError):
            CmpsState(K=np.zeros((2, 2)), R=np.zeros((2, 2)), m=-1.0)

    def test_serialization_roundtrip(self):
        rng = np.random.default_rng(1)
        st = random_state(rng, 3)
        K2 = matrix_from_pairs(matrix_to_pairs(st.K), 3)
        assert np.array_equal(K2, st.K)


class TestGaugeQ:
    def test_zero(self):
        st = CmpsState(K=[[0.0]], R=[[0.0]])
        assert gauge_q(st) == pytest.approx(0.0)

    def test_scalar(self):
        st = CmpsState(K=[[2.0]], R=[[0.5]])
        assert gauge_q(st)[0, 0] == pytest.approx(-0.125 - 2.0j)

    def test_pauli(self):
        st = CmpsState(K=SIGMA_X, R=np.diag([1.0, 0.0]))
        expected = -1j * SIGMA_X - 0.5 * np.diag([1.0, 0.0])
        np.testing.assert_allclose(gauge_q(st), expected, atol=1e-15)


class TestLindblad:
    def test_scalar_vanishes(self):
        st = CmpsState(K=[[0.7]], R=[[0.4 + 0.1j]])
        rho = np.array([[1.3 + 0.0j]])
        assert abs(apply_lindblad(st, rho)[0, 0]) < 1e-15

    def test_amplitude_damping(self):
        st = CmpsState(K=np.zeros((2, 2)), R=LOWERING)
        out = apply_lindblad(st, np.diag([1.0, 0.0]))
        np.testing.assert_allclose(out, np.diag([-1.0, 1.0]), atol=1e-15)

    def test_stationary_maps_to_zero(self):
        rng = np.random.default_rng(2)
        st = random_state(rng, 3)
        rho = stationary_state(st)
        assert np.linalg.norm(apply_lindblad(st, rho)) < 1e-12

    def test_dimension_mismatch(self):
        st = CmpsState(K=np.zeros((2, 2)), R=np.zeros((2, 2)))
        with pytest.raises(ValueError):
            apply_lindblad(st, np.zeros((3, 3)))

    def test_trace_preservation_and_hermiticity(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            D = rng.integers(1, 5)
            st = random_state(rng, D)
            rho = random_hermitian(rng, D)
            out = apply_lindblad(st, rho)
            assert abs(np.trace(out)) <= 1e-12 * max(np.linalg.norm(rho), 1.0)
            assert np.linalg.norm(out - out.conj().T) <= 1e-12 * max(
                np.linalg.norm(out), 1.0
            )


class TestAdjoint:
    def test_identity_killed(self):
        rng = np.random.default_rng(4)
        st = random_state(rng, 3)
        out = apply_adjoint_lindblad(st, np.eye(3))
        assert np.linalg.norm(out) < 1e-14

    def test_scalar_vanishes(self):
        st = CmpsState(K=[[1.2]], R=[[0.3 - 0.2j]])
        assert abs(apply_adjoint_lindblad(st, np.array([[2.0 + 1j]]))[0, 0]) < 1e-15

    def test_duality(self):
        rng = np.random.default_rng(5)
        st = random_state(rng, 3)
        for _ in range(10):
            O = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            rho = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            lhs = np.trace(O @ apply_lindblad(st, rho))
            rhs = np.trace(apply_adjoint_lindblad(st, O) @ rho)
            assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(O) * np.linalg.norm(rho)

    def test_duality_many_states(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            D = rng.integers(1, 5)
            st = random_state(rng, D)
            O = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
            rho = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
            lhs = np.trace(O @ apply_lindblad(st, rho))
            rhs = np.trace(apply_adjoint_lindblad(st, O) @ rho)
            assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(O) * np.linalg.norm(rho)


class TestStationaryState:
    def test_scalar(self):
        st = CmpsState(K=[[0.5]], R=[[0.2]])
        np.testing.assert_allclose(stationary_state(st), [[1.0]])

    def test_amplitude_damping_fixed_point(self):
        st = CmpsState(K=np.zeros((2, 2)), R=LOWERING)
        np.testing.assert_allclose(
            stationary_state(st), np.diag([0.0, 1.0]), atol=1e-12
        )

    def test_postconditions_and_longtime_oracle(self):
        rng = np.random.default_rng(7)
        st = random_state(rng, 4)
        rho = stationary_state(st)
        # Hermitian, PSD, trace one
        assert np.linalg.norm(rho - rho.conj().T) < 1e-13
        assert scipy.linalg.eigvalsh(rho).min() >= -1e-12
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
        # long-time integration oracle e^{T L} (1/D)
        L = lindblad_matrix(st)
        evals = np.sort(scipy.linalg.eigvals(L).real)
        gap = -evals[-2]
        T = 1e3 / gap
        vec = scipy.linalg.expm(L * T) @ (np.eye(4) / 4.0).reshape(-1)
        np.testing.assert_allclose(vec.reshape(4, 4), rho, atol=1e-10)

    def test_degenerate_rejected(self):
        st = CmpsState(K=np.eye(2), R=np.zeros((2, 2)))
        with pytest.raises(DegenerateSteadyState):
            stationary_state(st)
        # block-diagonal (reducible) coupling is degenerate too
        st2 = CmpsState(K=np.zeros((2, 2)), R=np.diag([0.5, 0.7]))
        with pytest.raises(DegenerateSteadyState):
            stationary_state(st2)

    def test_gauge_covariance(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            D = rng.integers(2, 5)
            st = random_state(rng, D)
            H = random_hermitian(rng, D)
            U = scipy.linalg.expm(1j * H)
            st_u = CmpsState(K=U @ st.K @ U.conj().T, R=U @ st.R @ U.conj().T)
            np.testing.assert_allclose(
                stationary_state(st_u),
                U @ stationary_state(st) @ U.conj().T,
                atol=1e-10,
            )
