"""Smearing kernel: closed form vs Fourier definition, grid construction."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from rcmps.kernel import build_grid, kernel_integral, kernel_j, kernel_table
from rcmps.ode_fast import _j_lookup

#: frozen bound for J(x) <= C exp(-m|x|)/sqrt(|x|) on |x| >= 1/m (the ratio
#: is maximal at |x| = 1/m; computed once from the Bessel form)
DECAY_BOUND = 0.30


def fourier_j(x, m=1.0):
    """Direct oscillatory quadrature of the defining Fourier integral."""
    integrand = lambda k: 1.0 / np.sqrt(2.0 * np.sqrt(k * k + m * m))
    val, _ = quad(integrand, 0.0, np.inf, weight="cos", wvar=x, limit=400)
    return val / np.pi


class TestKernelJ:
    def test_domain_error_at_zero(self):
        with pytest.raises(ValueError):
            kernel_j(0.0, 1.0)
        with pytest.raises(ValueError):
            kernel_j(np.array([1.0, 0.0]), 1.0)

    def test_positive_even_decreasing(self):
        xs = np.linspace(0.05, 10.0, 50)
        vals = kernel_j(xs, 1.0)
        assert np.all(vals > 0)
        assert np.all(np.diff(vals) < 0)
        np.testing.assert_allclose(kernel_j(-xs, 1.0), vals, rtol=1e-14)

    @pytest.mark.parametrize("x", [0.1, 0.5, 1.0, 2.0, 5.0])
    def test_matches_fourier_definition(self, x):
        assert kernel_j(x, 1.0) == pytest.approx(fourier_j(x), abs=1e-10)

    def test_small_x_inverse_sqrt(self):
        # J ~ 1/(2 sqrt(pi |x|)) as x -> 0, mass independent; the subleading
        # correction is O(sqrt(x))
        for m in (1.0, 3.0):
            x = 1e-16
            limit = 1.0 / (2.0 * math.sqrt(math.pi))
            assert kernel_j(x, m) * math.sqrt(x) == pytest.approx(limit, rel=1e-7)

    def test_large_x_negligible(self):
        assert kernel_j(40.0, 1.0) < 1e-16

    def test_exponential_decay_bound(self):
        xs = np.linspace(1.0, 35.0, 200)
        bound = DECAY_BOUND * np.exp(-xs) / np.sqrt(xs)
        assert np.all(kernel_j(xs, 1.0) <= bound)

    def test_mass_scaling(self):
        # J(x; m) = sqrt(m) J(m x; 1)
        assert kernel_j(0.7, 4.0) == pytest.approx(2.0 * kernel_j(2.8, 1.0), rel=1e-13)


class TestGrid:
    def test_kernel_integral_m1(self):
        grid = build_grid(1.0)
        assert kernel_integral(1.0, grid) == pytest.approx(
            1.0 / math.sqrt(2.0), rel=1e-9
        )

    def test_kernel_integral_m4(self):
        grid = build_grid(4.0)
        assert kernel_integral(4.0, grid) == pytest.approx(
            1.0 / math.sqrt(8.0), rel=1e-9
        )

    def test_coarse_tolerance_contract(self):
        grid = build_grid(1.0, rtol=1e-3, x_max_factor=20.0)
        assert kernel_integral(1.0, grid) == pytest.approx(
            1.0 / math.sqrt(2.0), rel=1e-3
        )

    def test_x_max_definition(self):
        grid = build_grid(2.0, rtol=1e-9, x_max_factor=40.0)
        assert grid.x_max == pytest.approx(20.0)
        assert np.all(np.abs(grid.nodes) <= 20.0)

    def test_nodes_ascending_and_split(self):
        grid = build_grid(1.0)
        assert np.all(np.diff(grid.nodes) > 0)
        assert not np.any(grid.nodes == 0.0)
        assert grid.singularity_split

    def test_mesh_override(self):
        coarse = build_grid(1.0)
        fine = build_grid(1.0, mesh=coarse.h / 2)
        assert fine.h <= coarse.h / 2
        assert len(fine.nodes) > len(coarse.nodes)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            build_grid(1.0, rtol=0.5)
        with pytest.raises(ValueError):
            build_grid(1.0, x_max_factor=5.0)
        with pytest.raises(ValueError):
            build_grid(-1.0)


class TestKernelTable:
    def test_matches_closed_form(self):
        tab = kernel_table(1.0, 40.0)
        rng = np.random.default_rng(0)
        xs = np.exp(rng.uniform(np.log(1e-20), np.log(39.9), 1000))
        for x in xs:
            approx = _j_lookup(x, 1.0, 0.0, tab.t0, tab.ht, tab.logj, tab.dlogj)
            assert approx == pytest.approx(kernel_j(x, 1.0), rel=2e-10)

    def test_cutoff_zeroes_inner_region(self):
        tab = kernel_table(1.0, 40.0)
        assert _j_lookup(1e-9, 1.0, 1e-8, tab.t0, tab.ht, tab.logj, tab.dlogj) == 0.0
