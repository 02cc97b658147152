"""Adjoint-method gradients of all ODE-defined observables.

One forward pass (the observable flow) and one backward pass (its block
adjoint seeded with the terminal trace weights) give the full gradient at
the same asymptotic cost as the observable itself.  The gradient matrix G
follows the convention

    d/d eps F(K + eps dK(W), R + eps W) |_0  =  Re tr[W^dag G],

where dK(W) = (R^dag W - W^dag R) / (2i) is the gauge-compatible update of
the Hermitian generator (it induces exactly dQ = -R^dag W, the standard
tangent gauge).  Starting the forward flow at the exact stationary
environment makes the initial-condition sensitivity vanish in the large
x_max limit: the backward adjoint relaxes to a multiple of the identity
outside the kernel support and the stationary perturbation is traceless.
"""

from __future__ import annotations

import numpy as np

from .core import CmpsState, stationary_state
from .kernel import QuadGrid
from .observables import _real
from .systems import (
    assemble_gradient,
    energy_system,
    energy_weights,
    kinetic_system,
    moment_system,
    vertex_system,
)


def _system_gradient(system, rho_ss, grid, tol, weights=None):
    forward = system.run_forward(rho_ss, grid, tol)
    backward = system.run_backward(grid, tol, weights)
    value = system.functional_value(forward.final, weights)
    return value, assemble_gradient(system, grid, forward, backward, rho_ss)


def grad_vertex(
    state: CmpsState,
    rho_ss: np.ndarray,
    b: float,
    grid: QuadGrid,
    tol: float = 1e-10,
) -> np.ndarray:
    """Gradient of <:exp(b phi):>; identically zero at b = 0."""
    if b == 0.0:
        return np.zeros((state.D, state.D), dtype=complex)
    _, G = _system_gradient(vertex_system(state, b), rho_ss, grid, tol)
    return G


def grad_phi_moment(
    state: CmpsState,
    rho_ss: np.ndarray,
    n: int,
    grid: QuadGrid,
    tol: float = 1e-10,
) -> np.ndarray:
    """Gradient of <:phi^n:>."""
    _, G = _system_gradient(moment_system(state, n), rho_ss, grid, tol)
    return G


def grad_kinetic(
    state: CmpsState,
    rho_ss: np.ndarray,
    grid: QuadGrid,
    tol: float = 1e-10,
) -> np.ndarray:
    """Gradient of the free-Hamiltonian density <:h_fb:>."""
    _, G = _system_gradient(kinetic_system(state), rho_ss, grid, tol)
    return G


def energy_and_gradient(
    state: CmpsState,
    g: float,
    grid: QuadGrid,
    tol: float = 1e-10,
    rho_ss: np.ndarray | None = None,
):
    """Energy density of the phi^4 model and its gradient matrix.

    The kinetic and quartic flows share the stationary block, so a single
    forward and a single backward integration of the combined system give
    E = <:h_fb:> + g <:phi^4:> and G consistently (gradients are linear in
    the terminal weights).
    """
    if g < 0:
        raise ValueError(f"coupling must be >= 0, got {g}")
    if rho_ss is None:
        rho_ss = stationary_state(state)
    system = energy_system(state)
    weights = energy_weights(state, g)
    value, G = _system_gradient(system, rho_ss, grid, tol, weights)
    return _real(value, "energy density"), G
