"""Stacked linear ODE systems shared by the observable and gradient paths.

Every expectation value computed here is the terminal trace of a block
ODE du/dx = A(x) u with A(x) = A0 + J(x) A1, where the blocks are D x D
matrices, A0 applies the transfer generator to each block, and A1 collects
the kernel-weighted couplings (source insertions between blocks).  The
same structure describes

  * the vertex flow (single block, self-coupled through b J(x)),
  * field-monomial flows (chain of n+1 blocks),
  * the free-Hamiltonian flow (two 3-chains sharing the stationary block),

and their block adjoints, integrated backward for gradients.  Two
interchangeable evaluations are provided: a dense vectorized superoperator
pair (fast for small block counts) and batched per-block matrix products
(fast for larger D); both are exercised against each other in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

import scipy.linalg

from .core import CmpsState, adjoint_lindblad_matrix, gauge_q
from .kernel import QuadGrid, kernel_j, kernel_table
from .ode import StepUnderflow, Trajectory, integrate
from . import ode_fast

#: switch from dense vectorized superoperators to batched block products
#: once the stacked dimension exceeds this (cache-size crossover)
DENSE_LIMIT = 300

#: integration engine: "numba" (compiled hot loop) when available, else the
#: generic numpy integrator; tests pin both to cross-check
DEFAULT_ENGINE = "numba" if ode_fast.HAVE_NUMBA else "numpy"


@dataclass(frozen=True)
class Coupling:
    """J(x)-weighted source term: scale * J(x) * (mat @ u[src]) into u[target]
    (side "left") or scale * J(x) * (u[src] @ mat) (side "right").

    ``grad`` tags how the coefficient matrix varies with the tangent
    direction W: "W" for mat in {R, R^dag}, "QR" for mat in {[Q,R],
    [R^dag,Q^dag]}.
    """

    target: int
    source: int
    side: str  # "left" | "right"
    mat: np.ndarray
    scale: float
    grad: str  # "W" | "QR"


def _unique_rounds(indices):
    """Split index list into rounds with unique entries (fancy += safety)."""
    rounds = []
    remaining = list(enumerate(indices))
    while remaining:
        seen = set()
        round_pos = []
        rest = []
        for pos, idx in remaining:
            if idx in seen:
                rest.append((pos, idx))
            else:
                seen.add(idx)
                round_pos.append(pos)
        rounds.append(np.array(round_pos))
        remaining = rest
    return rounds


class BlockSystem:
    """A stacked linear system attached to one state.

    terminal maps block index -> scalar c so that the observable equals
    sum_b c_b * tr(u_b) at the forward terminal endpoint; the same weights
    seed the backward adjoint at c_b * identity.
    """

    def __init__(self, state: CmpsState, n_blocks: int, couplings, terminal):
        self.state = state
        self.n_blocks = n_blocks
        self.couplings = list(couplings)
        self.terminal = dict(terminal)
        D = state.D
        self.D = D
        self.Q = gauge_q(state)
        self.Qd = self.Q.conj().T
        self.R = state.R
        self.Rd = state.R.conj().T
        self.n = n_blocks * D * D
        self._dense = self.n <= DENSE_LIMIT
        if self._dense:
            self._build_dense()
        else:
            self._build_batched()

    # -- construction ---------------------------------------------------

    def _build_dense(self):
        D, B = self.D, self.n_blocks
        eye = np.eye(D)
        # row-major vec: vec(A u B) = kron(A, B.T) vec(u)
        L = np.kron(self.Q, eye) + np.kron(eye, self.Q.conj()) + np.kron(
            self.R, self.R.conj()
        )
        Ladj = np.kron(self.Qd, eye) + np.kron(eye, self.Q.T) + np.kron(
            self.Rd, self.R.T
        )
        n = self.n
        d2 = D * D
        A0 = np.zeros((n, n), dtype=complex)
        A0adj = np.zeros((n, n), dtype=complex)
        for b in range(B):
            sl = slice(b * d2, (b + 1) * d2)
            A0[sl, sl] = L
            A0adj[sl, sl] = Ladj
        A1 = np.zeros((n, n), dtype=complex)
        A1adj = np.zeros((n, n), dtype=complex)
        for c in self.couplings:
            t = slice(c.target * d2, (c.target + 1) * d2)
            s = slice(c.source * d2, (c.source + 1) * d2)
            if c.side == "left":
                A1[t, s] += c.scale * np.kron(c.mat, eye)
                A1adj[s, t] += c.scale * np.kron(eye, c.mat.T)
            else:
                A1[t, s] += c.scale * np.kron(eye, c.mat.T)
                A1adj[s, t] += c.scale * np.kron(c.mat, eye)
        self._A0, self._A1 = A0, A1
        self._A0adj, self._A1adj = A0adj, A1adj

    def _build_batched(self):
        left = [c for c in self.couplings if c.side == "left"]
        right = [c for c in self.couplings if c.side == "right"]

        def pack(cs):
            if not cs:
                return None
            return dict(
                tgt=np.array([c.target for c in cs]),
                src=np.array([c.source for c in cs]),
                mats=np.stack([c.mat for c in cs]),
                scale=np.array([c.scale for c in cs])[:, None, None],
                tgt_rounds=_unique_rounds([c.target for c in cs]),
                src_rounds=_unique_rounds([c.source for c in cs]),
            )

        self._left = pack(left)
        self._right = pack(right)

    # -- right-hand sides ------------------------------------------------

    def _j_fn(self, grid: QuadGrid):
        # the grid never places nodes inside (-cut, cut); dropping the
        # source there skips the integrable singularity at 0 with
        # negligible mass (~ sqrt(cut)) and keeps stage values finite
        cutoff = grid.inner_cutoff
        m = self.state.m

        def j(x: float) -> float:
            ax = abs(x)
            if ax < cutoff:
                return 0.0
            return float(kernel_j(ax, m))

        return j

    def forward_rhs(self, grid: QuadGrid):
        jfun = self._j_fn(grid)
        if self._dense:
            A0, A1 = self._A0, self._A1

            def rhs(x, u):
                jx = jfun(x)
                du = A0 @ u
                if jx:
                    du += jx * (A1 @ u)
                return du

            return rhs

        B, D = self.n_blocks, self.D
        Q, Qd, R, Rd = self.Q, self.Qd, self.R, self.Rd
        left, right = self._left, self._right

        def rhs(x, u):
            u = u.reshape(B, D, D)
            du = Q @ u + u @ Qd + R @ u @ Rd
            jx = jfun(x)
            if jx:
                if left is not None:
                    term = (jx * left["scale"]) * (left["mats"] @ u[left["src"]])
                    for rnd in left["tgt_rounds"]:
                        du[left["tgt"][rnd]] += term[rnd]
                if right is not None:
                    term = (jx * right["scale"]) * (u[right["src"]] @ right["mats"])
                    for rnd in right["tgt_rounds"]:
                        du[right["tgt"][rnd]] += term[rnd]
            return du.reshape(-1)

        return rhs

    def adjoint_rhs(self, grid: QuadGrid):
        """Backward generator: do/dx = -A*(x) o under the pairing tr[o u]."""
        jfun = self._j_fn(grid)
        if self._dense:
            A0, A1 = self._A0adj, self._A1adj

            def rhs(x, o):
                jx = jfun(x)
                do = A0 @ o
                if jx:
                    do += jx * (A1 @ o)
                return -do

            return rhs

        B, D = self.n_blocks, self.D
        Q, Qd, R, Rd = self.Q, self.Qd, self.R, self.Rd
        left, right = self._left, self._right

        def rhs(x, o):
            o = o.reshape(B, D, D)
            do = Qd @ o + o @ Q + Rd @ o @ R
            jx = jfun(x)
            if jx:
                if left is not None:
                    term = (jx * left["scale"]) * (o[left["tgt"]] @ left["mats"])
                    for rnd in left["src_rounds"]:
                        do[left["src"][rnd]] += term[rnd]
                if right is not None:
                    term = (jx * right["scale"]) * (right["mats"] @ o[right["tgt"]])
                    for rnd in right["src_rounds"]:
                        do[right["src"][rnd]] += term[rnd]
            return -do.reshape(-1)

        return rhs

    # -- boundary data ----------------------------------------------------

    def initial_blocks(self, rho_ss: np.ndarray) -> np.ndarray:
        u0 = np.zeros((self.n_blocks, self.D, self.D), dtype=complex)
        u0[0] = rho_ss
        return u0

    def terminal_blocks(self, weights=None) -> np.ndarray:
        weights = self.terminal if weights is None else weights
        o1 = np.zeros((self.n_blocks, self.D, self.D), dtype=complex)
        eye = np.eye(self.D)
        for b, c in weights.items():
            o1[b] = c * eye
        return o1

    def functional_value(self, final_blocks: np.ndarray, weights=None) -> complex:
        weights = self.terminal if weights is None else weights
        blocks = final_blocks.reshape(self.n_blocks, self.D, self.D)
        return sum(c * np.trace(blocks[b]) for b, c in weights.items())

    # -- integration ------------------------------------------------------

    def _coupling_pack(self, adjoint: bool):
        left = [c for c in self.couplings if c.side == "left"]
        right = [c for c in self.couplings if c.side == "right"]
        if adjoint:
            # dual of a left coupling acts on the source block from the
            # right, and vice versa
            left, right = (
                [Coupling(c.source, c.target, "left", c.mat, c.scale, c.grad)
                 for c in right],
                [Coupling(c.source, c.target, "right", c.mat, c.scale, c.grad)
                 for c in left],
            )

        def arrays(cs):
            if cs:
                return (
                    np.array([c.target for c in cs], dtype=np.int64),
                    np.array([c.source for c in cs], dtype=np.int64),
                    np.stack([c.mat for c in cs]).astype(np.complex128),
                    np.array([c.scale for c in cs], dtype=np.float64),
                )
            D = self.D
            return (
                np.empty(0, dtype=np.int64),
                np.empty(0, dtype=np.int64),
                np.empty((0, D, D), dtype=np.complex128),
                np.empty(0, dtype=np.float64),
            )

        return arrays(left) + arrays(right)

    def _run_packed(self, init_blocks, grid, tol, forward: bool) -> Trajectory:
        table = kernel_table(self.state.m, grid.x_max)
        if forward:
            E, F, G, H, sign = self.Q, self.Qd, self.R, self.Rd, 1.0
            checkpoints = np.concatenate([grid.nodes, [grid.x_max]])
            x_start = -grid.x_max
        else:
            E, F, G, H, sign = self.Qd, self.Q, self.Rd, self.R, -1.0
            checkpoints = np.concatenate([grid.nodes[::-1], [-grid.x_max]])
            x_start = grid.x_max
        pack = self._coupling_pack(adjoint=not forward)
        y = init_blocks.astype(np.complex128).copy()
        values = np.empty((len(grid.nodes),) + y.shape, dtype=np.complex128)
        status, x_stop = ode_fast._rk45_packed(
            y, values, checkpoints, len(grid.nodes), forward,
            E, F, G, H, *pack, sign,
            x_start, tol, self.state.m, grid.inner_cutoff,
            table.t0, table.ht, table.logj, table.dlogj,
            ode_fast._A, ode_fast._C, ode_fast._B5, ode_fast._E,
        )
        if status == ode_fast.STATUS_UNDERFLOW:
            raise StepUnderflow(f"step collapsed at x={x_stop:.6g}")
        if status == ode_fast.STATUS_BUDGET:
            raise StepUnderflow("step budget exhausted (rhs misconfigured?)")
        n = self.n
        return Trajectory(
            grid=grid,
            values=values.reshape(len(grid.nodes), n),
            direction="forward" if forward else "backward",
            final=y.reshape(n),
        )

    def run_forward(self, rho_ss, grid, tol, engine=None) -> Trajectory:
        engine = engine or DEFAULT_ENGINE
        if engine == "numba" and ode_fast.HAVE_NUMBA:
            return self._run_packed(self.initial_blocks(rho_ss), grid, tol, True)
        return integrate(
            self.forward_rhs(grid),
            self.initial_blocks(rho_ss).reshape(-1),
            grid,
            direction="forward",
            tol=tol,
        )

    def run_backward(self, grid, tol, weights=None, engine=None) -> Trajectory:
        engine = engine or DEFAULT_ENGINE
        if engine == "numba" and ode_fast.HAVE_NUMBA:
            return self._run_packed(self.terminal_blocks(weights), grid, tol, False)
        return integrate(
            self.adjoint_rhs(grid),
            self.terminal_blocks(weights).reshape(-1),
            grid,
            direction="backward",
            tol=tol,
        )


# -- system builders ------------------------------------------------------


def vertex_system(state: CmpsState, b: float) -> BlockSystem:
    """Single-block flow of the vertex operator :e^{b phi}:."""
    cs = [
        Coupling(0, 0, "left", state.R, b, "W"),
        Coupling(0, 0, "right", state.R.conj().T, b, "W"),
    ]
    return BlockSystem(state, 1, cs, {0: 1.0})


def moment_system(state: CmpsState, n: int) -> BlockSystem:
    """Chain of n+1 blocks; tr of block k converges to <:phi^k:>.

    Block k carries the k-th derivative of the vertex flow in its exponent,
    so the source from block k-1 enters with weight k.
    """
    cs = []
    for k in range(1, n + 1):
        cs.append(Coupling(k, k - 1, "left", state.R, float(k), "W"))
        cs.append(Coupling(k, k - 1, "right", state.R.conj().T, float(k), "W"))
    return BlockSystem(state, n + 1, cs, {n: 1.0})


def _kinetic_couplings(state: CmpsState, base: int, rho_block: int):
    """Two 3-chains for the free-Hamiltonian density, sharing rho_block.

    Blocks base..base+5 are (rho10, rho01, rho11, sig10, sig01, sig11); the
    sigma chain is sourced by [Q, R] on the left and [R^dag, Q^dag] on the
    right.
    """
    Q, R = gauge_q(state), state.R
    C = Q @ R - R @ Q
    Cd = C.conj().T
    Rd = R.conj().T
    r10, r01, r11 = base, base + 1, base + 2
    s10, s01, s11 = base + 3, base + 4, base + 5
    return [
        Coupling(r10, rho_block, "left", R, 1.0, "W"),
        Coupling(r01, rho_block, "right", Rd, 1.0, "W"),
        Coupling(r11, r01, "left", R, 1.0, "W"),
        Coupling(r11, r10, "right", Rd, 1.0, "W"),
        Coupling(s10, rho_block, "left", C, 1.0, "QR"),
        Coupling(s01, rho_block, "right", Cd, 1.0, "QR"),
        Coupling(s11, s01, "left", C, 1.0, "QR"),
        Coupling(s11, s10, "right", Cd, 1.0, "QR"),
    ]


def kinetic_system(state: CmpsState) -> BlockSystem:
    """<:h_fb:> = 2 lim tr[m^2 rho11 + sig11]; 7 blocks, one integration."""
    m2 = state.m**2
    cs = _kinetic_couplings(state, base=1, rho_block=0)
    return BlockSystem(state, 7, cs, {3: 2.0 * m2, 6: 2.0})


def energy_system(state: CmpsState) -> BlockSystem:
    """Kinetic blocks plus the moment chain up to phi^4, sharing block 0.

    Layout: [rho_ss, rho10, rho01, rho11, sig10, sig01, sig11,
    mu1, mu2, mu3, mu4].  One forward pass yields the kinetic density and
    all moments n <= 4; the terminal weights for a coupling g give the
    total energy density and seed a single backward pass for its gradient.
    """
    cs = _kinetic_couplings(state, base=1, rho_block=0)
    R, Rd = state.R, state.R.conj().T
    for k in range(1, 5):
        blk = 6 + k
        src = blk - 1 if k > 1 else 0
        cs.append(Coupling(blk, src, "left", R, float(k), "W"))
        cs.append(Coupling(blk, src, "right", Rd, float(k), "W"))
    m2 = state.m**2
    return BlockSystem(state, 11, cs, {3: 2.0 * m2, 6: 2.0, 10: 1.0})


def energy_weights(state: CmpsState, g: float) -> dict:
    """Terminal weights on :func:`energy_system` for energy = kin + g phi^4."""
    return {3: 2.0 * state.m**2, 6: 2.0, 10: g}


# -- gradient assembly -----------------------------------------------------


def _add_generator_variation_pair(M_W, M_Wd, O, u, R, Rd):
    """Pairing tr[O dL(W).u] with dL.u = -R^dag W u - u W^dag R + W u R^dag
    + R u W^dag, accumulated into the two gradient matrices."""
    uO = u @ O
    Ou = O @ u
    M_W += -uO @ Rd + u @ Rd @ O
    M_Wd += -R @ Ou + O @ R @ u
    return M_W, M_Wd


def initial_condition_gradient(
    state: CmpsState, rho_ss: np.ndarray, obs0_final: np.ndarray
) -> tuple:
    """Gradient contribution of the stationary initial condition.

    The forward flow starts at rho_ss(K, R), whose variation solves
    L.d(rho_ss) = -dL.rho_ss with fixed trace.  Pairing with the adjoint
    block O_0(-x_max) and transferring the pseudo-inverse onto the adjoint
    side turns this into one more generator-variation pairing,

        tr[O_0 d(rho_ss)] = -tr[Y dL.rho_ss],  L*.Y = O_0 - tr[O_0 rho_ss] 1,

    exact at any spectral gap (the solve is what the long-relaxation
    argument approximates when the gap times x_max is large).
    """
    D = state.D
    M_W = np.zeros((D, D), dtype=complex)
    M_Wd = np.zeros((D, D), dtype=complex)
    if D == 1:
        return M_W, M_Wd
    trace_part = complex(np.trace(obs0_final @ rho_ss))
    rhs = obs0_final - trace_part * np.eye(D)
    Ladj = adjoint_lindblad_matrix(state)
    y, *_ = scipy.linalg.lstsq(Ladj, rhs.reshape(-1), lapack_driver="gelsd")
    Y = y.reshape(D, D)
    # minus sign from transferring L^+ across the pairing
    return _add_generator_variation_pair(
        M_W, M_Wd, -Y, rho_ss, state.R, state.R.conj().T
    )


def assemble_gradient(
    system: BlockSystem,
    grid: QuadGrid,
    forward: Trajectory,
    backward: Trajectory,
    rho_ss: np.ndarray,
) -> np.ndarray:
    """Quadrature of the two gradient matrices; returns G = M_W^dag + M_Wd.

    The directional derivative of the system's functional along a tangent
    direction W (with the induced gauge shift of K) is Re tr[W^dag G].  The
    integrand pairs the forward blocks u with the adjoint blocks o: the
    generator variation contributes on every block, each kernel coupling
    contributes through the variation of its coefficient matrix, and the
    stationary initial condition adds one pseudo-inverse pairing.
    """
    B, D = system.n_blocks, system.D
    N = len(grid.nodes)
    U = forward.values.reshape(N, B, D, D)
    O = backward.values.reshape(N, B, D, D)
    w = grid.weights
    jw = w * kernel_j(grid.nodes, system.state.m)
    Q, Qd, R, Rd = system.Q, system.Qd, system.R, system.Rd

    # generator variation, all blocks:  M_W += -u o R^dag + u R^dag o
    #                                   M_Wd += -R o u + o R u
    T_uo = np.einsum("n,nbij,nbjk->ik", w, U, O, optimize=True)
    T_uRdO = np.einsum("n,nbij,jk,nbkl->il", w, U, Rd, O, optimize=True)
    T_ou = np.einsum("n,nbij,nbjk->ik", w, O, U, optimize=True)
    T_oRu = np.einsum("n,nbij,jk,nbkl->il", w, O, R, U, optimize=True)
    M_W = -T_uo @ Rd + T_uRdO
    M_Wd = -R @ T_ou + T_oRu

    RRd = R @ Rd
    for c in system.couplings:
        u_s = U[:, c.source]
        o_t = O[:, c.target]
        if c.side == "left":
            P = c.scale * np.einsum("n,nij,njk->ik", jw, u_s, o_t, optimize=True)
            if c.grad == "W":
                M_W += P
            else:  # mat = [Q, R]: delta = [-R^dag W, R] + [Q, W]
                M_W += -R @ P @ Rd + P @ RRd + P @ Q - Q @ P
        else:
            P = c.scale * np.einsum("n,nij,njk->ik", jw, o_t, u_s, optimize=True)
            if c.grad == "W":
                M_Wd += P
            else:  # mat = [R^dag, Q^dag]: delta is the dagger of the left rule
                M_Wd += -R @ P @ Rd + RRd @ P + Qd @ P - P @ Qd

    ic_W, ic_Wd = initial_condition_gradient(
        system.state, rho_ss, backward.final.reshape(B, D, D)[0]
    )
    M_W += ic_W
    M_Wd += ic_Wd
    return M_W.conj().T + M_Wd
