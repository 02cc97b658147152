"""Dense complex matrix core: the RCMPS state record and its transfer algebra.

A translation-invariant relativistic continuous matrix product state is
parameterized by two D x D complex matrices: a Hermitian gauge generator K
and a coupling matrix R.  In the left gauge the auxiliary drift is
Q = -iK - R^dag R / 2, the transfer operator acts on density matrices as a
Lindblad generator, and its trace-one fixed point rho_ss encodes the
thermodynamic-limit environment used by every observable.

Everything here is dense linear algebra; bond dimensions are desk scale
(D <= 32) so no sparsity is exploited.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class DegenerateSteadyState(RuntimeError):
    """The transfer generator has a (numerically) non-unique fixed point.

    Raised for reducible states, e.g. R = 0, where the stationary density
    matrix is ill-defined.  Callers should perturb or reject the state.
    """


#: second-smallest |eigenvalue| of the vectorized generator below this
#: threshold means the fixed point is not unique
DEGENERACY_TOL = 1e-10

#: required Frobenius residual of the fixed point, relative to ||L||
STATIONARY_RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class CmpsState:
    """Gauge-fixed variational state (K Hermitian, R general complex).

    K is re-Hermitized on construction; the drift Q = -iK - R^dag R/2 is
    always derived, never stored.
    """

    K: np.ndarray
    R: np.ndarray
    m: float = 1.0

    def __post_init__(self):
        K = np.asarray(self.K, dtype=complex)
        R = np.asarray(self.R, dtype=complex)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError(f"K must be square, got shape {K.shape}")
        if R.shape != K.shape:
            raise ValueError(f"R shape {R.shape} != K shape {K.shape}")
        if not np.isfinite(K).all() or not np.isfinite(R).all():
            raise ValueError("state matrices must have finite entries")
        if not self.m > 0:
            raise ValueError(f"mass must be positive, got {self.m}")
        K = 0.5 * (K + K.conj().T)
        K.setflags(write=False)
        R = R.copy()
        R.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)

    @property
    def D(self) -> int:
        return self.K.shape[0]


def gauge_q(state: CmpsState) -> np.ndarray:
    """Left-gauge drift Q = -iK - R^dag R / 2, recomputed from (K, R)."""
    R = state.R
    return -1j * state.K - 0.5 * (R.conj().T @ R)


def _check_dims(state: CmpsState, rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (state.D, state.D):
        raise ValueError(f"matrix shape {rho.shape} does not match D={state.D}")
    return rho


def apply_lindblad(state: CmpsState, rho: np.ndarray) -> np.ndarray:
    """Transfer generator L.rho = -i[K, rho] + R rho R^dag - {R^dag R, rho}/2.

    Trace free for any rho; maps Hermitian to Hermitian.
    """
    rho = _check_dims(state, rho)
    K, R = state.K, state.R
    RdR = R.conj().T @ R
    return (
        -1j * (K @ rho - rho @ K)
        + R @ rho @ R.conj().T
        - 0.5 * (RdR @ rho + rho @ RdR)
    )


def apply_adjoint_lindblad(state: CmpsState, obs: np.ndarray) -> np.ndarray:
    """Adjoint generator L*.O = Q^dag O + O Q + R^dag O R.

    Dual to :func:`apply_lindblad` under the pairing tr[O (L.rho)]; kills
    the identity (trace preservation of the forward map).
    """
    obs = _check_dims(state, obs)
    Q = gauge_q(state)
    return Q.conj().T @ obs + obs @ Q + state.R.conj().T @ obs @ state.R


def lindblad_matrix(state: CmpsState) -> np.ndarray:
    """Vectorized transfer generator as a dense D^2 x D^2 matrix.

    Row-major vec convention: vec(A rho B) = kron(A, B.T) vec(rho).
    """
    D = state.D
    K, R = state.K, state.R
    eye = np.eye(D)
    RdR = R.conj().T @ R
    return (
        -1j * (np.kron(K, eye) - np.kron(eye, K.T))
        + np.kron(R, R.conj())
        - 0.5 * (np.kron(RdR, eye) + np.kron(eye, RdR.T))
    )


def adjoint_lindblad_matrix(state: CmpsState) -> np.ndarray:
    """Vectorized adjoint generator O -> Q^dag O + O Q + R^dag O R."""
    D = state.D
    eye = np.eye(D)
    Q = gauge_q(state)
    R = state.R
    return np.kron(Q.conj().T, eye) + np.kron(eye, Q.T) + np.kron(R.conj().T, R.T)


def _fixed_point_from_vector(vec: np.ndarray, D: int) -> np.ndarray:
    rho = vec.reshape(D, D)
    # rotate away the arbitrary eigenvector phase before Hermitizing, so a
    # phase near i does not wipe out the Hermitian part
    tr = np.trace(rho)
    if abs(tr) > 1e-14 * np.linalg.norm(rho):
        rho = rho * (tr.conjugate() / abs(tr))
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if abs(tr) < 1e-12 * max(np.linalg.norm(rho), 1e-300):
        raise DegenerateSteadyState("fixed point has (near) vanishing trace")
    return rho / tr


def stationary_state(state: CmpsState) -> np.ndarray:
    """Trace-one stationary density matrix of the transfer generator.

    Dense eigen-decomposition of the vectorized generator (cost D^6, fine at
    desk scale); the eigenvector nearest eigenvalue 0 is Hermitized and
    normalized.  Falls back to long-time integration exp(T L) (1/D) if the
    eigen-solver fails.

    Raises
    ------
    DegenerateSteadyState
        If the numerical null space has dimension > 1 (e.g. R = 0), i.e.
        the second-smallest |eigenvalue| is below ``DEGENERACY_TOL``.
    """
    D = state.D
    if D == 1:
        return np.ones((1, 1), dtype=complex)

    L = lindblad_matrix(state)
    norm_L = np.linalg.norm(L)
    gap_est = None
    try:
        evals, evecs = scipy.linalg.eig(L)
        order = np.argsort(np.abs(evals))
        gap_est = abs(evals[order[1]])
        if gap_est < DEGENERACY_TOL * max(1.0, norm_L):
            raise DegenerateSteadyState(
                f"second eigenvalue |{evals[order[1]]:.3e}| below degeneracy "
                f"threshold; state is reducible or too close to it"
            )
        rho = _fixed_point_from_vector(evecs[:, order[0]], D)
    except scipy.linalg.LinAlgError:
        rho = _longtime_fixed_point(L, D, gap_est)

    residual = np.linalg.norm(apply_lindblad(state, rho))
    if residual > STATIONARY_RESIDUAL_TOL * max(norm_L, 1.0):
        rho = _longtime_fixed_point(L, D, gap_est, start=rho)
        residual = np.linalg.norm(apply_lindblad(state, rho))
        if residual > STATIONARY_RESIDUAL_TOL * max(norm_L, 1.0):
            raise DegenerateSteadyState(
                f"stationary residual {residual:.3e} did not converge"
            )

    min_eig = scipy.linalg.eigvalsh(rho).min()
    if min_eig < -1e-12:
        raise DegenerateSteadyState(
            f"fixed point not positive semidefinite (min eig {min_eig:.3e})"
        )
    return rho


def _longtime_fixed_point(L, D, gap_est, start=None):
    """Relax 1/D (or a given start) with exp(T L) until stationary."""
    gap = gap_est if gap_est and gap_est > 0 else 1e-3
    T = 1e3 / gap
    rho = (np.eye(D, dtype=complex) / D) if start is None else start
    vec = rho.reshape(-1)
    # two applications guard against an underestimated relaxation time
    for _ in range(2):
        vec = scipy.linalg.expm(L * T) @ vec
    return _fixed_point_from_vector(vec, D)


def matrix_to_pairs(mat: np.ndarray) -> list:
    """Row-major list of [re, im] pairs (JSON checkpoint encoding)."""
    flat = np.asarray(mat, dtype=complex).reshape(-1)
    return [[float(z.real), float(z.imag)] for z in flat]


def matrix_from_pairs(pairs, D: int) -> np.ndarray:
    """Inverse of :func:`matrix_to_pairs`."""
    arr = np.asarray(pairs, dtype=float)
    if arr.shape != (D * D, 2):
        raise ValueError(f"expected {D * D} [re, im] pairs, got shape {arr.shape}")
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(D, D)
