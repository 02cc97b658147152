"""ODE-based expectation values on an RCMPS.

Vertex operators, normal-ordered field monomials, the free-Hamiltonian
(kinetic + mass) density, and two-point functions of the smeared modes.
All quantities are translation invariant by construction; every flow
starts from the exact stationary environment at -x_max, so there is no
relaxation burn-in and no initial-condition sensitivity in the gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import CmpsState, lindblad_matrix, stationary_state
from .kernel import QuadGrid
from .systems import energy_system, energy_weights, kinetic_system, moment_system, vertex_system

#: largest exposed field-monomial order
MAX_MOMENT = 8

#: tolerated imaginary part in nominally real expectation values
IMAG_TOL = 1e-9


class NonHermitianResult(ArithmeticError):
    """A nominally real expectation value came out with a large imaginary
    part; signals a broken Hermiticity invariant upstream."""


def _real(value: complex, what: str) -> float:
    scale = max(1.0, abs(value))
    if abs(value.imag) > IMAG_TOL * scale:
        raise NonHermitianResult(f"{what} has imaginary part {value.imag:.3e}")
    return float(value.real)


@dataclass(frozen=True)
class ObservableSet:
    """Energy breakdown and low field moments of one state.

    energy_density = kinetic_part + coupling * phi_moments[3] (the stored
    moments are <:phi^n:> for n = 1..4).
    """

    energy_density: float
    kinetic_part: float
    quartic_part: float
    phi_moments: tuple
    vertex_samples: tuple = ()


def vertex_expectation(
    state: CmpsState,
    rho_ss: np.ndarray,
    b: float,
    grid: QuadGrid,
    tol: float = 1e-10,
) -> float:
    """<:exp(b phi):> as the terminal trace of the sourced transfer flow.

    Equals the generating functional with source b J; strictly positive
    for real b.  b = 0 short-circuits to 1 (the flow is trace preserving
    without source).
    """
    if b == 0.0:
        return 1.0
    system = vertex_system(state, b)
    traj = system.run_forward(rho_ss, grid, tol)
    return _real(system.functional_value(traj.final), "vertex expectation")


def phi_moments_up_to(
    state: CmpsState,
    rho_ss: np.ndarray,
    n: int,
    grid: QuadGrid,
    tol: float = 1e-10,
) -> list:
    """[<:phi^1:>, ..., <:phi^n:>] from one stacked forward integration."""
    if not 1 <= n <= MAX_MOMENT:
        raise ValueError(f"moment order must be in 1..{MAX_MOMENT}, got {n}")
    system = moment_system(state, n)
    traj = system.run_forward(rho_ss, grid, tol)
    blocks = traj.final.reshape(system.n_blocks, state.D, state.D)
    return [_real(np.trace(blocks[k]), f"<:phi^{k}:>") for k in range(1, n + 1)]


def phi_moment(
    state: CmpsState,
    rho_ss: np.ndarray,
    n: int,
    grid: QuadGrid,
    tol: float = 1e-10,
) -> float:
    """Normal-ordered field monomial <:phi^n:>."""
    return phi_moments_up_to(state, rho_ss, n, grid, tol)[-1]


def kinetic_density(
    state: CmpsState,
    rho_ss: np.ndarray,
    grid: QuadGrid,
    tol: float = 1e-10,
) -> float:
    """Free-Hamiltonian density <:h_fb:> (kinetic + mass term), >= 0."""
    system = kinetic_system(state)
    traj = system.run_forward(rho_ss, grid, tol)
    return _real(system.functional_value(traj.final), "kinetic density")


def compute_observables(
    state: CmpsState,
    rho_ss: np.ndarray,
    g: float,
    grid: QuadGrid,
    tol: float = 1e-10,
    vertex_bs=(),
) -> ObservableSet:
    """Kinetic density, moments n = 1..4 and the energy, in one forward pass."""
    system = energy_system(state)
    traj = system.run_forward(rho_ss, grid, tol)
    blocks = traj.final.reshape(system.n_blocks, state.D, state.D)
    kinetic = _real(
        2.0 * (state.m**2 * np.trace(blocks[3]) + np.trace(blocks[6])),
        "kinetic density",
    )
    moments = tuple(
        _real(np.trace(blocks[6 + k]), f"<:phi^{k}:>") for k in range(1, 5)
    )
    quartic = g * moments[3]
    samples = tuple(
        (b, vertex_expectation(state, rho_ss, b, grid, tol)) for b in vertex_bs
    )
    return ObservableSet(
        energy_density=kinetic + quartic,
        kinetic_part=kinetic,
        quartic_part=quartic,
        phi_moments=moments,
        vertex_samples=samples,
    )


def energy_density(
    state: CmpsState,
    g: float,
    grid: QuadGrid,
    tol: float = 1e-10,
    rho_ss: np.ndarray | None = None,
) -> float:
    """Energy density kin + g <:phi^4:> of the phi^4 model (one forward pass)."""
    if rho_ss is None:
        rho_ss = stationary_state(state)
    system = energy_system(state)
    traj = system.run_forward(rho_ss, grid, tol)
    return _real(
        system.functional_value(traj.final, energy_weights(state, g)),
        "energy density",
    )


def a_two_point(
    state: CmpsState,
    rho_ss: np.ndarray,
    s: float,
    kind: str = "pm",
) -> complex:
    """Two-point function of the smeared modes at separation s >= 0.

    kind "pm": <a^dag(s) a(0)> = tr[exp(s L).(R rho_ss) R^dag]
    kind "mm": <a(s) a(0)>     = tr[R exp(s L).(R rho_ss)]
    kind "pp": <a^dag(s) a^dag(0)> = tr[exp(s L).(rho_ss R^dag) R^dag]

    At s = 0 the "pm" kind is the density of relativistic modes; for
    s -> infinity all kinds cluster to products of one-point functions.
    """
    if s < 0:
        raise ValueError(f"separation must be >= 0, got {s}")
    if kind not in ("pm", "mm", "pp"):
        raise ValueError(f"unknown correlator kind {kind!r}")
    R = state.R
    start = R @ rho_ss if kind in ("pm", "mm") else rho_ss @ R.conj().T
    if s == 0.0 or state.D == 1:
        # the scalar generator vanishes identically, so the flow is trivial
        evolved = start
    else:
        L = lindblad_matrix(state)
        evolved = (scipy.linalg.expm(s * L) @ start.reshape(-1)).reshape(R.shape)
    if kind == "mm":
        return complex(np.trace(R @ evolved))
    return complex(np.trace(evolved @ R.conj().T))
