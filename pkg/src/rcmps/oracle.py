"""Independent slow-path validators for the fast ODE/adjoint machinery.

Three trust anchors: closed forms of the rank-one (coherent) state, naive
correlation-function integrals that bypass the ODE route entirely, and
finite-difference directional derivatives.  The quadrature helpers here are
deliberately self-contained so that, apart from the matrix core and the
kernel function itself, the oracle shares no code with the paths it checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import (
    CmpsState,
    apply_adjoint_lindblad,
    apply_lindblad,
    lindblad_matrix,
    stationary_state,
)
from .kernel import kernel_j
from .optimizer import retract

_HALF_PI = 0.5 * math.pi


# -- coherent-state closed forms -------------------------------------------


@dataclass(frozen=True)
class CoherentReference:
    """Exact rank-one (zero-momentum coherent state) expectation values.

    Everything follows from the kernel normalization int J = 1/sqrt(2m):
    the field expectation is (r + conj r)/sqrt(2m), normal-ordered moments
    are its powers, and the free-Hamiltonian density is m |r|^2.  Gradients
    use the convention dF = Re tr[W^dag G] with scalar W.
    """

    vertex: float
    phi_powers: tuple
    kinetic: float
    energy: float
    grad_vertex: complex
    grad_moment: complex
    grad_kinetic: complex
    grad_energy: complex


def coherent_closed_forms(
    r: complex, kappa: float, m: float, g: float, b: float, n: int
) -> CoherentReference:
    """Closed forms for the D = 1 state (K = kappa, R = r); kappa drops out."""
    c = 1.0 / math.sqrt(2.0 * m)
    phi = float((r + np.conj(r)).real) * c
    vertex = math.exp(b * phi)
    powers = tuple(phi**k for k in range(1, max(n, 4) + 1))
    kinetic = m * abs(r) ** 2
    energy = kinetic + g * phi**4
    grad_vertex = 2.0 * b * c * vertex
    grad_moment = 2.0 * n * c * phi ** (n - 1)
    grad_kinetic = 2.0 * m * complex(r)
    grad_energy = grad_kinetic + g * 8.0 * c * phi**3
    return CoherentReference(
        vertex=vertex,
        phi_powers=powers,
        kinetic=kinetic,
        energy=energy,
        grad_vertex=grad_vertex,
        grad_moment=grad_moment,
        grad_kinetic=grad_kinetic,
        grad_energy=grad_energy,
    )


# -- self-contained quadrature helpers --------------------------------------


def _tanh_sinh_rule(n_half: int = 90, h: float = 0.08):
    """Reference tanh-sinh nodes/weights on (-1, 1), saturation-safe.

    Nodes approach the endpoints to ~1e-15; inverse-square-root endpoint
    behavior then contributes < 1e-7 of untruncated mass, and the callers
    floor their singular arguments so rounding at the endpoints is safe.
    """
    t = h * np.arange(-n_half, n_half + 1)
    z = _HALF_PI * np.sinh(t)
    u = np.tanh(z)
    # sech^2 in log-safe form; underflows cleanly instead of inf/inf
    sech = 2.0 * np.exp(-np.abs(z)) / (1.0 + np.exp(-2.0 * np.abs(z)))
    w = h * _HALF_PI * np.cosh(t) * sech**2
    keep = (1.0 - np.abs(u)) > 1e-15
    return u[keep], w[keep]


def _tanh_sinh_finite(a: float, b: float, n_half: int = 90, h: float = 0.08):
    """Tanh-sinh nodes/weights on (a, b), double-exponential at both ends."""
    u, w = _tanh_sinh_rule(n_half, h)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * u, half * w


def _exp_sinh_half_line(
    x_lo: float, x_hi: float, n_half: int = 55, h: float = 0.12, scale: float = 1.0
):
    """Exp-sinh nodes/weights for (0, inf), truncated to [x_lo, x_hi]."""
    t = h * np.arange(-n_half, n_half + 1)
    x = scale * np.exp(_HALF_PI * np.sinh(t))
    w = h * _HALF_PI * np.cosh(t) * x
    keep = (x >= x_lo) & (x <= x_hi)
    return x[keep], w[keep]


def kernel_overlap(s: float, m: float, x_max: float) -> float:
    """B(s) = int J(y) J(y + s) dy by split quadrature (s > 0).

    The integrand has inverse-square-root points at y = 0 and y = -s; the
    two outer half-lines are equal by symmetry and the middle piece gets a
    rule clustering at both of its endpoints.
    """
    # the transformed head integrand decays only like sqrt(x), so the
    # truncation must go deep for the overlap to reach ~1e-9
    x, w = _exp_sinh_half_line(1e-22 / m, x_max, scale=1.0 / m)
    outer = 2.0 * float(np.sum(w * kernel_j(x, m) * kernel_j(x + s, m)))
    xm, wm = _tanh_sinh_finite(-s, 0.0)
    floor = 1e-17 * max(s, 1.0)
    middle = float(np.sum(
        wm
        * kernel_j(np.maximum(np.abs(xm), floor), m)
        * kernel_j(np.maximum(np.abs(xm + s), floor), m)
    ))
    return outer + middle


# -- transfer-eigenmode propagation ------------------------------------------


class _Propagator:
    """exp(s L) applied through one dense eigendecomposition of L."""

    def __init__(self, state: CmpsState):
        self.D = state.D
        L = lindblad_matrix(state)
        self.evals, self.V = scipy.linalg.eig(L)
        self.Vinv = scipy.linalg.inv(self.V)
        resid = np.linalg.norm(self.V * self.evals @ self.Vinv - L)
        if resid > 1e-8 * max(1.0, np.linalg.norm(L)):
            raise RuntimeError(
                "transfer generator too non-normal to diagonalize; perturb the state"
            )

    def chain_step(self, mats: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Apply exp(s_k L) to a stack of matrices for every s_k.

        mats has shape (..., D, D); the result gains a leading s-axis:
        (len(s), ..., D, D).
        """
        lead = mats.shape[:-2]
        coeff = mats.reshape(-1, self.D * self.D) @ self.Vinv.T  # (M, modes)
        phases = np.exp(np.multiply.outer(np.asarray(s), self.evals))  # (S, modes)
        out = np.einsum("sm,am,km->sak", phases, coeff, self.V, optimize=True)
        return out.reshape((len(s),) + lead + (self.D, self.D))


def naive_phi2(state: CmpsState, grid=None) -> float:
    """<:phi^2:> by direct integration of mode two-point functions.

    Translation invariance reduces the double smearing integral to one
    separation integral of G2(s) B(s), where G2 collects the four
    normal-ordered two-point orderings through the transfer eigenmodes and
    B is the kernel overlap.  Cost guard: D <= 4 (this is the sanity-check
    path, not the production one).
    """
    if state.D > 4:
        raise ValueError("naive phi^2 oracle is limited to D <= 4")
    m = state.m
    rho = stationary_state(state)
    R = state.R
    Rd = R.conj().T
    prop = _Propagator(state)

    x_max = 40.0 / m
    # dense separation rule: the two-point functions oscillate at the
    # imaginary parts of the transfer spectrum, which the kernel alone
    # would not force the rule to resolve
    s_nodes, s_weights = _exp_sinh_half_line(
        1e-12 / m, x_max, n_half=130, h=0.05, scale=1.0 / m
    )

    # combined insertion T.X = R X + X R^dag at both points; evolve between
    evolved = prop.chain_step(R @ rho + rho @ Rd, s_nodes)
    g2 = np.einsum("sij,ji->s", evolved, Rd) + np.einsum("ij,sji->s", R, evolved)
    overlap = np.array([kernel_overlap(s, m, x_max) for s in s_nodes])
    return 2.0 * float(np.sum(s_weights * overlap * g2.real))


def _w4_weight(s1, s2, s3, m: float, x_max: float) -> np.ndarray:
    """W4 = int J(y) J(y+s1) J(y+s1+s2) J(y+s1+s2+s3) dy on a gap-grid batch.

    s1, s2, s3 are broadcastable arrays of positive gaps; the y-integral is
    split at the four singular points, with half-line rules outside and
    both-end-clustered rules between consecutive points.
    """
    shape = np.broadcast_shapes(np.shape(s1), np.shape(s2), np.shape(s3))
    p1 = np.broadcast_to(s1, shape).ravel()
    p2 = (np.broadcast_to(s1, shape) + np.broadcast_to(s2, shape)).ravel()
    p3 = p2 + np.broadcast_to(s3, shape).ravel()

    floor = 1e-14 / m  # distance floor to the singular points (J ~ 3e6 there)

    def j4(y):
        # y: (nodes, batch); singular points at 0, -p1, -p2, -p3
        return (
            kernel_j(np.maximum(np.abs(y), floor), m)
            * kernel_j(np.maximum(np.abs(y + p1), floor), m)
            * kernel_j(np.maximum(np.abs(y + p2), floor), m)
            * kernel_j(np.maximum(np.abs(y + p3), floor), m)
        )

    x, w = _exp_sinh_half_line(1e-13 / m, x_max, n_half=40, h=0.16, scale=1.0 / m)
    total = w @ j4(x[:, None])  # (0, inf)
    total += w @ j4(-p3 - x[:, None])  # (-inf, -p3)

    # interior pieces on (-p_{k+1}, -p_k), mapped from a reference rule
    u_ref, w_ref = _tanh_sinh_rule(n_half=42, h=0.15)
    for lo, hi in ((-p1, np.zeros_like(p1)), (-p2, -p1), (-p3, -p2)):
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        y = mid[None, :] + half[None, :] * u_ref[:, None]
        total += np.einsum("n,nb,b->b", w_ref, j4(y), half)
    return total.reshape(shape)


def naive_phi4(state: CmpsState) -> float:
    """<:phi^4:> by a coarse triple-gap integral over four-point functions.

    Cost guard: D <= 2.  The four combined insertions are chained through
    the transfer eigenmodes over ordered separations (times 4! for the
    orderings) against the quadruple kernel weight.  Coarse grids; meant
    for ~1e-4 cross-checks of the quartic ODE path.
    """
    if state.D > 2:
        raise ValueError("naive phi^4 oracle is limited to D <= 2")
    m = state.m
    D = state.D
    rho = stationary_state(state)
    R = state.R
    Rd = R.conj().T
    prop = _Propagator(state)

    x_max = 25.0 / m
    s_nodes, s_weights = _exp_sinh_half_line(
        1e-8 / m, x_max, n_half=24, h=0.26, scale=1.0 / m
    )
    ns = len(s_nodes)

    T = lambda mats: R @ mats + mats @ Rd
    u1 = T(prop.chain_step(T(rho), s_nodes))  # (s1, D, D)
    u2 = T(prop.chain_step(u1, s_nodes))  # (s2, s1, D, D)
    u3 = T(prop.chain_step(u2, s_nodes))  # (s3, s2, s1, D, D)
    g4 = np.einsum("cbaii->abc", u3).real  # (s1, s2, s3)

    w4 = _w4_weight(
        s_nodes[:, None, None], s_nodes[None, :, None], s_nodes[None, None, :],
        m, x_max,
    )
    wts = (
        s_weights[:, None, None]
        * s_weights[None, :, None]
        * s_weights[None, None, :]
    )
    return 24.0 * float(np.sum(wts * w4 * g4))


# -- check suite ---------------------------------------------------------------


@dataclass(frozen=True)
class OracleReport:
    """One fast-path-versus-oracle comparison."""

    name: str
    fast: float
    oracle: float
    tolerance: float

    @property
    def abs_dev(self) -> float:
        return abs(self.fast - self.oracle)

    @property
    def rel_dev(self) -> float:
        return self.abs_dev / max(abs(self.oracle), 1e-300)

    @property
    def passed(self) -> bool:
        return self.abs_dev <= self.tolerance * max(1.0, abs(self.oracle))

    def line(self) -> str:
        mark = "pass" if self.passed else "FAIL"
        return (
            f"[{mark}] {self.name}: fast={self.fast:+.10e} "
            f"oracle={self.oracle:+.10e} |dev|={self.abs_dev:.2e} tol={self.tolerance:.0e}"
        )


def _random_state(rng, D: int, m: float = 1.0) -> CmpsState:
    A = rng.uniform(-1, 1, (D, D)) + 1j * rng.uniform(-1, 1, (D, D))
    R = (rng.uniform(-1, 1, (D, D)) + 1j * rng.uniform(-1, 1, (D, D))) / np.sqrt(D)
    return CmpsState(K=0.5 * (A + A.conj().T), R=R, m=m)


def _random_direction(rng, D: int) -> np.ndarray:
    return rng.uniform(-1, 1, (D, D)) + 1j * rng.uniform(-1, 1, (D, D))


def run_checks(level: str = "quick", numerics=None) -> list:
    """Oracle/invariant suite behind the ``check`` CLI command.

    quick: rank-one closed forms plus finite-difference gradients at D = 2.
    full: adds the naive-integral moments and gauge/parity/duality suites.
    """
    from .gradient import energy_and_gradient, grad_kinetic, grad_phi_moment, grad_vertex
    from .observables import (
        kinetic_density,
        phi_moment,
        vertex_expectation,
    )
    from .optimizer import Numerics

    if level not in ("quick", "full"):
        raise ValueError(f"unknown check level {level!r}")
    numerics = numerics or Numerics(ode_tol=1e-12, quad_mesh=0.02)
    grid = numerics.grid(1.0)
    tol = numerics.ode_tol
    reports = []
    rng = np.random.default_rng(20240817)

    # rank-one closed forms
    st = CmpsState(K=[[0.3]], R=[[0.5 + 0.2j]], m=1.0)
    rho = stationary_state(st)
    ref = coherent_closed_forms(0.5 + 0.2j, 0.3, m=1.0, g=1.0, b=0.8, n=4)
    reports.append(OracleReport(
        "coherent vertex b=0.8",
        vertex_expectation(st, rho, 0.8, grid, tol), ref.vertex, 1e-8,
    ))
    for k in range(1, 5):
        reports.append(OracleReport(
            f"coherent <:phi^{k}:>",
            phi_moment(st, rho, k, grid, tol), ref.phi_powers[k - 1], 1e-8,
        ))
    reports.append(OracleReport(
        "coherent kinetic", kinetic_density(st, rho, grid, tol), ref.kinetic, 1e-8,
    ))
    E, G = energy_and_gradient(st, 1.0, grid, tol, rho_ss=rho)
    reports.append(OracleReport("coherent energy g=1", E, ref.energy, 1e-8))
    reports.append(OracleReport(
        "coherent energy gradient", abs(G[0, 0]), abs(ref.grad_energy), 1e-8,
    ))

    # finite differences at D = 2
    st2 = _random_state(rng, 2)
    rho2 = stationary_state(st2)
    dirs = [_random_direction(rng, 2) for _ in range(3)]
    cases = {
        "vertex b=0.7": (
            lambda s: vertex_expectation(s, stationary_state(s), 0.7, grid, tol),
            grad_vertex(st2, rho2, 0.7, grid, tol),
        ),
        "moment n=2": (
            lambda s: phi_moment(s, stationary_state(s), 2, grid, tol),
            grad_phi_moment(st2, rho2, 2, grid, tol),
        ),
        "kinetic": (
            lambda s: kinetic_density(s, stationary_state(s), grid, tol),
            grad_kinetic(st2, rho2, grid, tol),
        ),
        "energy g=2": (
            lambda s: energy_and_gradient(s, 2.0, grid, tol)[0],
            energy_and_gradient(st2, 2.0, grid, tol, rho_ss=rho2)[1],
        ),
    }
    for name, (functional, Gmat) in cases.items():
        fd = finite_diff_gradient(st2, functional, dirs)
        for i, W in enumerate(dirs):
            adj = float(np.real(np.trace(W.conj().T @ Gmat)))
            reports.append(OracleReport(f"FD D=2 {name} dir{i}", adj, fd[i], 1e-5))

    if level == "quick":
        return reports

    # naive-integral moments
    for D in (1, 2, 3):
        stn = _random_state(rng, D)
        rhon = stationary_state(stn)
        reports.append(OracleReport(
            f"naive <:phi^2:> D={D}",
            phi_moment(stn, rhon, 2, grid, tol), naive_phi2(stn), 1e-6,
        ))
    st4 = _random_state(rng, 2)
    rho4 = stationary_state(st4)
    reports.append(OracleReport(
        "naive <:phi^4:> D=2",
        phi_moment(st4, rho4, 4, grid, tol), naive_phi4(st4), 1e-4,
    ))

    # gauge invariance / parity / duality / trace preservation
    for trial in range(3):
        stg = _random_state(rng, 3)
        rhog = stationary_state(stg)
        H = _random_direction(rng, 3)
        U = scipy.linalg.expm(1j * (H + H.conj().T))
        stu = CmpsState(K=U @ stg.K @ U.conj().T, R=U @ stg.R @ U.conj().T, m=stg.m)
        rhou = stationary_state(stu)
        reports.append(OracleReport(
            f"gauge kinetic trial{trial}",
            kinetic_density(stu, rhou, grid, tol),
            kinetic_density(stg, rhog, grid, tol), 1e-9,
        ))
        stp = CmpsState(K=stg.K, R=-stg.R, m=stg.m)
        rhop = stationary_state(stp)
        reports.append(OracleReport(
            f"parity <:phi^2:> trial{trial}",
            phi_moment(stp, rhop, 2, grid, tol),
            phi_moment(stg, rhog, 2, grid, tol), 1e-10,
        ))
        rho_r = _random_direction(rng, 3)
        rho_r = rho_r @ rho_r.conj().T
        obs_r = _random_direction(rng, 3)
        lhs = np.trace(obs_r @ apply_lindblad(stg, rho_r))
        rhs = np.trace(apply_adjoint_lindblad(stg, obs_r) @ rho_r)
        reports.append(OracleReport(
            f"adjoint duality trial{trial}", float(lhs.real), float(rhs.real), 1e-12,
        ))
        reports.append(OracleReport(
            f"trace preservation trial{trial}",
            float(abs(np.trace(apply_lindblad(stg, rho_r)))), 0.0, 1e-12,
        ))
    return reports


# -- finite differences ------------------------------------------------------


def finite_diff_gradient(state, functional, directions, h: float = 1e-4):
    """4th-order central differences of ``functional`` along retractions.

    ``functional`` maps a state to a real number; each direction W moves the
    state along retract(state, W, eps).  h must lie in [1e-6, 1e-3].
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"finite-difference step must be in [1e-6, 1e-3], got {h}")
    out = []
    for W in directions:
        W = np.asarray(W, dtype=complex)
        if not np.any(W):
            out.append(0.0)
            continue

        def f(eps):
            return functional(retract(state, W, eps))

        out.append((f(-2 * h) - 8 * f(-h) + 8 * f(h) - f(2 * h)) / (12 * h))
    return out
