"""Observable flows against coherent closed forms, symmetry, and moments."""

import numpy as np
import pytest
import scipy.linalg

from rcmps.core import CmpsState, stationary_state
from rcmps.kernel import build_grid
from rcmps.observables import (
    a_two_point,
    compute_observables,
    energy_density,
    kinetic_density,
    phi_moment,
    phi_moments_up_to,
    vertex_expectation,
)

GRID = build_grid(1.0)
TOL = 1e-11
SQ2 = np.sqrt(2.0)


def random_state(rng, D, m=1.0):
    A = rng.uniform(-1, 1, (D, D)) + 1j * rng.uniform(-1, 1, (D, D))
    R = (rng.uniform(-1, 1, (D, D)) + 1j * rng.uniform(-1, 1, (D, D))) / np.sqrt(D)
    return CmpsState(K=0.5 * (A + A.conj().T), R=R, m=m)


@pytest.fixture(scope="module")
def coherent():
    st = CmpsState(K=[[0.8]], R=[[0.5]], m=1.0)
    return st, stationary_state(st)


class TestVertex:
    def test_b_zero_is_one(self, coherent):
        st, rho = coherent
        assert vertex_expectation(st, rho, 0.0, GRID, TOL) == 1.0

    def test_coherent_value(self, coherent):
        st, rho = coherent
        assert vertex_expectation(st, rho, 1.0, GRID, TOL) == pytest.approx(
            np.exp(1.0 / SQ2), abs=1e-8
        )

    def test_near_vacuum(self):
        st = CmpsState(K=[[0.4]], R=[[1e-8]], m=1.0)
        rho = stationary_state(st)
        assert vertex_expectation(st, rho, 1.0, GRID, TOL) == pytest.approx(
            1.0, abs=1e-7
        )

    def test_positive_for_real_b(self):
        rng = np.random.default_rng(21)
        st = random_state(rng, 2)
        rho = stationary_state(st)
        for b in (-1.0, 0.5, 1.5):
            assert vertex_expectation(st, rho, b, GRID, TOL) > 0.0


class TestMoments:
    def test_coherent_powers(self, coherent):
        st, rho = coherent
        vals = phi_moments_up_to(st, rho, 4, GRID, TOL)
        phi = 1.0 / SQ2
        np.testing.assert_allclose(vals, [phi, phi**2, phi**3, phi**4], atol=1e-8)

    def test_parity_flip(self):
        rng = np.random.default_rng(22)
        st = random_state(rng, 3)
        flipped = CmpsState(K=st.K, R=-st.R, m=st.m)
        rho, rho_f = stationary_state(st), stationary_state(flipped)
        for n in (1, 2, 3, 4):
            a = phi_moment(st, rho, n, GRID, TOL)
            b = phi_moment(flipped, rho_f, n, GRID, TOL)
            sign = -1.0 if n % 2 else 1.0
            assert b == pytest.approx(sign * a, abs=1e-10)

    def test_moment_order_validation(self, coherent):
        st, rho = coherent
        with pytest.raises(ValueError):
            phi_moment(st, rho, 0, GRID, TOL)
        with pytest.raises(ValueError):
            phi_moment(st, rho, 9, GRID, TOL)

    def test_vertex_moment_consistency(self):
        # central b-differences of the vertex flow reproduce the moments
        rng = np.random.default_rng(23)
        st = random_state(rng, 3)
        rho = stationary_state(st)
        h = 0.05
        bs = np.array([-2, -1, 0, 1, 2]) * h
        vals = np.array([vertex_expectation(st, rho, b, GRID, TOL) for b in bs])
        d1 = (vals[0] - 8 * vals[1] + 8 * vals[3] - vals[4]) / (12 * h)
        d2 = (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (
            12 * h**2
        )
        assert d1 == pytest.approx(phi_moment(st, rho, 1, GRID, TOL), abs=1e-6)
        assert d2 == pytest.approx(phi_moment(st, rho, 2, GRID, TOL), abs=1e-6)


class TestKinetic:
    def test_coherent_value(self, coherent):
        st, rho = coherent
        assert kinetic_density(st, rho, GRID, TOL) == pytest.approx(0.25, abs=1e-8)

    def test_imaginary_r(self):
        st = CmpsState(K=[[0.2]], R=[[0.5j]], m=1.0)
        rho = stationary_state(st)
        assert kinetic_density(st, rho, GRID, TOL) == pytest.approx(0.25, abs=1e-8)
        assert phi_moment(st, rho, 1, GRID, TOL) == pytest.approx(0.0, abs=1e-9)

    def test_near_vacuum_nonnegative(self):
        eps = 1e-4
        st = CmpsState(
            K=np.zeros((2, 2)), R=eps * np.array([[0.0, 1.0], [1.0, 0.0]]), m=1.0
        )
        rho = stationary_state(st)
        val = kinetic_density(st, rho, GRID, TOL)
        assert val >= -1e-12
        assert val == pytest.approx(0.0, abs=10 * eps**2)

    def test_gauge_invariance(self):
        rng = np.random.default_rng(24)
        st = random_state(rng, 3)
        H = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        U = scipy.linalg.expm(1j * (H + H.conj().T))
        st_u = CmpsState(K=U @ st.K @ U.conj().T, R=U @ st.R @ U.conj().T, m=st.m)
        rho, rho_u = stationary_state(st), stationary_state(st_u)
        assert kinetic_density(st_u, rho_u, GRID, TOL) == pytest.approx(
            kinetic_density(st, rho, GRID, TOL), abs=1e-9
        )
        for n in (1, 2, 4):
            assert phi_moment(st_u, rho_u, n, GRID, TOL) == pytest.approx(
                phi_moment(st, rho, n, GRID, TOL), abs=1e-9
            )


class TestTwoPoint:
    def test_scalar_constant(self, coherent):
        st, rho = coherent
        for s in (0.0, 0.5, 3.0):
            assert a_two_point(st, rho, s, "pm") == pytest.approx(0.25)

    def test_clustering(self):
        rng = np.random.default_rng(25)
        st = random_state(rng, 3)
        rho = stationary_state(st)
        far = a_two_point(st, rho, 200.0, "pm")
        disconnected = np.trace(st.R @ rho) * np.trace(rho @ st.R.conj().T)
        assert far == pytest.approx(complex(disconnected), abs=1e-10)

    def test_near_vacuum(self):
        st = CmpsState(K=[[0.1]], R=[[1e-7]], m=1.0)
        rho = stationary_state(st)
        assert abs(a_two_point(st, rho, 1.0, "pm")) < 1e-13

    def test_density_at_zero(self):
        rng = np.random.default_rng(26)
        st = random_state(rng, 3)
        rho = stationary_state(st)
        expected = np.trace(st.R @ rho @ st.R.conj().T)
        assert a_two_point(st, rho, 0.0, "pm") == pytest.approx(complex(expected))

    def test_validation(self, coherent):
        st, rho = coherent
        with pytest.raises(ValueError):
            a_two_point(st, rho, -1.0)
        with pytest.raises(ValueError):
            a_two_point(st, rho, 1.0, "xy")


class TestObservableSet:
    def test_energy_identity(self):
        rng = np.random.default_rng(27)
        st = random_state(rng, 3)
        rho = stationary_state(st)
        g = 1.7
        obs = compute_observables(st, rho, g, GRID, TOL, vertex_bs=(0.5,))
        assert obs.energy_density == pytest.approx(
            obs.kinetic_part + g * obs.phi_moments[3], abs=1e-12
        )
        assert obs.quartic_part == pytest.approx(g * obs.phi_moments[3], abs=1e-12)
        assert obs.vertex_samples[0][0] == 0.5
        # consistent with the standalone energy evaluation
        assert energy_density(st, g, GRID, TOL, rho_ss=rho) == pytest.approx(
            obs.energy_density, abs=1e-10
        )
