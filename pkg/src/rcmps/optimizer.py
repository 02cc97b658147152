"""Natural-gradient descent on the RCMPS manifold.

The tangent metric induced by the Hilbert-space inner product is
Re tr[W2 rho_ss W1^dag]; acting with its (Tikhonov-regularized) inverse on
the gradient gives the descent direction, equivalent to tangent-projected
imaginary time evolution.  Steps are chosen by Armijo backtracking with a
doubling heuristic, which keeps the step optimally large away from the
minimum.  The metric degenerates near convergence, so the regularization
escalates automatically when the solve becomes singular.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import CmpsState, DegenerateSteadyState, stationary_state
from .kernel import build_grid
from .observables import _real
from .systems import assemble_gradient, energy_system, energy_weights


class SingularMetric(RuntimeError):
    """rho_ss + delta*I is numerically singular even after escalation."""


class LineSearchFailed(RuntimeError):
    """No Armijo-acceptable step after the backtracking budget; the
    gradient and metric are inconsistent with the energy evaluation."""


#: backtracking attempts before giving up
MAX_BACKTRACKS = 40

#: iterations over which the relative energy plateau is measured
PLATEAU_WINDOW = 20

#: metric regularization ceiling reached by x100 escalation
METRIC_REG_MAX = 1e-6


@dataclass(frozen=True)
class Numerics:
    """Shared numerical tolerances (config file section "numerics").

    quad_mesh caps the grid mesh size; None leaves it to the kernel-integral
    adaptation.  Descent only needs a descent direction, so the default grid
    is kept cheap; validation suites pass a finer mesh.
    """

    ode_tol: float = 1e-10
    quad_rtol: float = 1e-9
    x_max_factor: float = 40.0
    quad_mesh: float | None = None

    def grid(self, m: float):
        return build_grid(m, self.quad_rtol, self.x_max_factor, self.quad_mesh)


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs of the descent loop (config file section "optimizer")."""

    max_iters: int = 20000
    grad_norm_tol: float = 1e-6
    energy_rel_tol: float = 1e-10
    metric_reg: float = 1e-10
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    init_scale: float | None = None  # None -> 1/sqrt(D)
    seed: int = 0
    step_init: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.armijo_c < 1.0):
            raise ValueError("armijo_c must be in (0, 1)")
        if not (0.0 < self.backtrack_factor < 1.0):
            raise ValueError("backtrack_factor must be in (0, 1)")
        for name in ("max_iters", "grad_norm_tol", "energy_rel_tol", "step_init"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.metric_reg < 0:
            raise ValueError("metric_reg must be >= 0")
        if self.init_scale is not None and self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")


@dataclass
class OptimizationResult:
    """Trace of one descent run; the energy trace is non-increasing."""

    state: CmpsState
    energies: list
    grad_norms: list
    step_sizes: list
    termination: str
    iterations: int
    wall_time: float


def metric_inverse_apply(rho_ss: np.ndarray, G: np.ndarray, delta: float) -> np.ndarray:
    """Descent direction W = -G (rho_ss + delta I)^{-1}.

    This W solves the natural-gradient system exactly: the metric pairing
    Re tr[W' (rho_ss + delta I) W^dag] equals -Re tr[W'^dag G] for every
    direction W' (the CMPS metric acts by right multiplication).
    """
    D = rho_ss.shape[0]
    M = rho_ss + delta * np.eye(D)
    evals = scipy.linalg.eigvalsh(M)
    if evals.min() <= 1e-14 * max(evals.max(), 1e-300):
        raise SingularMetric(
            f"metric condition beyond 1e14 at delta={delta:.1e}"
        )
    # right-multiplication solve: W M = -G
    return -scipy.linalg.solve(M.T, G.T).T


def retract(state: CmpsState, W: np.ndarray, eps: float) -> CmpsState:
    """First-order gauge-compatible update of (K, R) along W.

    R -> R + eps W and K -> K + eps (R^dag W - W^dag R)/(2i); the induced
    drift change is dQ = -eps R^dag W, matching the tangent gauge in which
    the metric and gradients are expressed.
    """
    R = state.R
    dK = (R.conj().T @ W - W.conj().T @ R) / 2j
    return CmpsState(K=state.K + eps * dK, R=R + eps * W, m=state.m)


def line_search(
    state: CmpsState,
    W: np.ndarray,
    E0: float,
    G: np.ndarray,
    cfg: OptimizerConfig,
    evaluator,
    step_init: float | None = None,
):
    """Armijo-Goldstein backtracking along the retraction of W.

    Returns (accepted step, new state, new energy, next step hint).  The
    hint doubles after a first-try acceptance, which lets the optimizer
    ride optimally large steps.  Trial states whose environment is
    degenerate are treated as rejections and backtracked past.
    """
    slope = float(np.real(np.trace(W.conj().T @ G)))
    if not slope < 0:
        raise ValueError(f"not a descent direction (slope {slope:.3e})")
    step = cfg.step_init if step_init is None else step_init
    for k in range(MAX_BACKTRACKS):
        eps = step * cfg.backtrack_factor**k
        trial = retract(state, W, eps)
        try:
            E = evaluator(trial)
        except DegenerateSteadyState:
            continue
        if E <= E0 + cfg.armijo_c * eps * slope:
            hint = 2.0 * eps if k == 0 else eps
            return eps, trial, E, hint
    raise LineSearchFailed(
        f"no acceptable step within {MAX_BACKTRACKS} backtracks from {step:.3e}"
    )


def random_init(D: int, m: float, cfg: OptimizerConfig) -> CmpsState:
    """Seeded uniform initialization; K is Hermitian-symmetrized."""
    if D < 1:
        raise ValueError(f"bond dimension must be >= 1, got {D}")
    scale = cfg.init_scale if cfg.init_scale is not None else 1.0 / np.sqrt(D)
    rng = np.random.default_rng(cfg.seed)

    def uniform():
        return scale * (
            rng.uniform(-1, 1, (D, D)) + 1j * rng.uniform(-1, 1, (D, D))
        )

    A = uniform()
    K = 0.5 * (A + A.conj().T)
    return CmpsState(K=K, R=uniform(), m=m)


def embed_state(state: CmpsState, D_new: int, cfg: OptimizerConfig) -> CmpsState:
    """Warm start: converged state in the top-left block plus small noise.

    The noise on the new rows/columns keeps the enlarged state away from
    reducible (degenerate-environment) configurations.
    """
    D = state.D
    if D_new < D:
        raise ValueError(f"cannot embed D={D} into smaller D={D_new}")
    if D_new == D:
        return state
    scale = cfg.init_scale if cfg.init_scale is not None else 1.0 / np.sqrt(D_new)
    rng = np.random.default_rng(cfg.seed + 7919 * D_new)
    noise = 1e-2 * scale

    def pad(M):
        out = noise * (
            rng.uniform(-1, 1, (D_new, D_new)) + 1j * rng.uniform(-1, 1, (D_new, D_new))
        )
        out[:D, :D] = M
        return out

    return CmpsState(K=pad(state.K), R=pad(state.R), m=state.m)


def optimize(
    D: int,
    m: float,
    g: float,
    cfg: OptimizerConfig,
    numerics: Numerics = Numerics(),
    init_state: CmpsState | None = None,
) -> OptimizationResult:
    """Minimize the phi^4 energy density over the rank-D manifold.

    Iterates stationary environment -> energy+gradient -> inverse-metric
    descent direction -> Armijo step, until the gradient norm or the
    relative energy decrease over a window falls below tolerance.

    Raises
    ------
    DegenerateSteadyState, SingularMetric, LineSearchFailed
        Annotated with the iteration index at which they occurred.
    """
    t0 = time.perf_counter()
    grid = numerics.grid(m)
    tol = numerics.ode_tol
    state = init_state if init_state is not None else random_init(D, m, cfg)
    if state.D != D or state.m != m:
        raise ValueError("init_state is inconsistent with (D, m)")

    # one-slot cache: the accepted line-search trial already carries the
    # stationary state and forward flow the next gradient pass needs
    cache: dict = {}

    def evaluate(s: CmpsState):
        if cache.get("state") is s:
            return cache["data"]
        rho = stationary_state(s)
        system = energy_system(s)
        weights = energy_weights(s, g)
        forward = system.run_forward(rho, grid, tol)
        E = _real(system.functional_value(forward.final, weights), "energy density")
        cache["state"] = s
        cache["data"] = (E, rho, system, weights, forward)
        return cache["data"]

    def evaluator(s: CmpsState) -> float:
        return evaluate(s)[0]

    energies: list = []
    grad_norms: list = []
    steps: list = []
    termination = "max_iters"
    step_hint = cfg.step_init
    iteration = 0
    try:
        for iteration in range(cfg.max_iters):
            E, rho, system, weights, forward = evaluate(state)
            backward = system.run_backward(grid, tol, weights)
            G = assemble_gradient(system, grid, forward, backward, rho)
            if not energies:
                energies.append(E)
            gnorm = float(np.linalg.norm(G))
            grad_norms.append(gnorm)
            if gnorm <= cfg.grad_norm_tol:
                termination = "gradient_converged"
                break
            if len(energies) > PLATEAU_WINDOW:
                drop = energies[-1 - PLATEAU_WINDOW] - energies[-1]
                if drop <= cfg.energy_rel_tol * max(abs(energies[-1]), 1e-30):
                    termination = "energy_plateau"
                    break

            # a nearly rank-deficient environment (warm starts, late
            # iterations) makes the raw natural-gradient direction huge;
            # escalate the Tikhonov floor until a step is accepted
            delta = cfg.metric_reg
            while True:
                try:
                    W = metric_inverse_apply(rho, G, delta)
                    slope = float(np.real(np.trace(W.conj().T @ G)))
                    if slope >= 0:
                        raise SingularMetric(f"non-descent direction at {delta:.1e}")
                    eps, state, E_new, step_hint = line_search(
                        state, W, E, G, cfg, evaluator, step_hint
                    )
                    break
                except (SingularMetric, LineSearchFailed):
                    delta = max(delta, 1e-16) * 100.0
                    if delta > METRIC_REG_MAX:
                        raise
            energies.append(E_new)
            steps.append(eps)
    except (DegenerateSteadyState, SingularMetric, LineSearchFailed) as exc:
        exc.args = (f"iteration {iteration}: {exc.args[0]}",) + exc.args[1:]
        raise

    return OptimizationResult(
        state=state,
        energies=energies,
        grad_norms=grad_norms,
        step_sizes=steps,
        termination=termination,
        iterations=iteration,
        wall_time=time.perf_counter() - t0,
    )
