"""Self-referential coupling of two mirrored real dynamics.

Conventions, fixed once:

* ``rho = P_s + P_a / i = P_s - i P_a`` with ``P_s``/``P_a`` the symmetric and
  antisymmetric parts of a real probability matrix ``P``;
* ``H = H_s + H_a / i = -hbar J_s + i hbar J_a``.

Density matrices are kernels over the grid: ``Tr(rho) dx = 1``.  Hamiltonians
are operators (quadrature weight already folded in), so ``H @ rho`` is again a
kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cycle import ProbabilityMatrix
from .errors import DimensionError, EigenDecompositionError, HermiticityError, TraceError
from .kernels import DynamicalMatrix, Factor

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SrcState:
    """Alice's matrix ``P_A`` and Bob's mirrored matrix ``P_B``."""

    P_A: np.ndarray
    P_B: np.ndarray
    step_index: int = 0

    @classmethod
    def from_matrix(cls, P: np.ndarray | ProbabilityMatrix) -> "SrcState":
        P = P.P if isinstance(P, ProbabilityMatrix) else np.asarray(P, dtype=float)
        return cls(P.copy(), P.T.copy(), 0)

    @property
    def transpose_defect(self) -> float:
        return float(np.max(np.abs(self.P_B - self.P_A.T)))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    rho: np.ndarray
    hbar_cycle: float = 1.0
    weight: float = 1.0

    def __post_init__(self):
        r = np.array(self.rho, dtype=complex)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise DimensionError(f"density matrix must be square, got {r.shape}")
        r.setflags(write=False)
        object.__setattr__(self, "rho", r)

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.rho) * self.weight)

    @property
    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    @property
    def purity(self) -> float:
        # Tr(rho^2) for a kernel: sum_ij rho_ij rho_ji dx^2
        return float(np.real(np.sum(self.rho * self.rho.T)) * self.weight**2)

    def position_moments(self, x: np.ndarray) -> tuple[float, float]:
        p = np.real(np.diag(self.rho)) * self.weight
        mean = float(p @ x)
        return mean, float(p @ (x - mean) ** 2)


def _require_hermitian(H: np.ndarray, what: str, tol: float = HERMITIAN_TOL) -> None:
    scale = max(1.0, float(np.max(np.abs(H))) if H.size else 1.0)
    if np.max(np.abs(H - H.conj().T)) > tol * scale:
        raise HermiticityError(f"{what} is not Hermitian")


def src_step(state: SrcState, J: DynamicalMatrix, epsilon: float) -> SrcState:
    """``dP_A = eps([J_a, P_A] - [J_s, P_B])``, ``dP_B = eps([J_a, P_B] + [J_s, P_A])``."""
    A, B = state.P_A, state.P_B
    Js, Ja = J.J_s, J.J_a

    def comm(X, Y):
        return X @ Y - Y @ X

    dA = epsilon * (comm(Ja, A) - comm(Js, B))
    dB = epsilon * (comm(Ja, B) + comm(Js, A))
    return SrcState(A + dA, B + dB, state.step_index + 1)


def assemble_density(
    P: np.ndarray | ProbabilityMatrix,
    hbar_cycle: float = 1.0,
    weight: float | None = None,
    tol: float = 1e-8,
) -> DensityMatrix:
    """``rho = (P + P^T)/2 - i (P - P^T)/2``."""
    if isinstance(P, ProbabilityMatrix):
        w = P.weight if weight is None else weight
        P = P.P
    else:
        P = np.asarray(P, dtype=float)
        w = 1.0 if weight is None else weight
    tr = np.trace(P) * w
    if abs(tr - 1.0) > tol:
        raise TraceError(f"Tr(P) dx = {tr}, expected 1")
    Ps = 0.5 * (P + P.T)
    Pa = 0.5 * (P - P.T)
    return DensityMatrix(Ps - 1j * Pa, hbar_cycle, w)


def decompose_pair(rho: DensityMatrix) -> tuple[np.ndarray, np.ndarray]:
    """``P_s = Re(rho)``, ``P_a = -Im(rho)``."""
    _require_hermitian(rho.rho, "density matrix")
    return rho.rho.real.copy(), -rho.rho.imag.copy()


def vn_step(rho: DensityMatrix, H: np.ndarray, epsilon: float) -> DensityMatrix:
    """Euler step ``rho' = rho - (i eps / hbar) [H, rho]``."""
    H = np.asarray(H, dtype=complex)
    if H.shape != rho.rho.shape:
        raise DimensionError("Hamiltonian and density matrix sizes differ")
    _require_hermitian(H, "Hamiltonian")
    r = rho.rho
    new = r - (1j * epsilon / rho.hbar_cycle) * (H @ r - r @ H)
    return DensityMatrix(new, rho.hbar_cycle, rho.weight)


def evolve_euler(rho0: DensityMatrix, H: np.ndarray, epsilon: float, n_steps: int) -> DensityMatrix:
    rho = rho0
    for _ in range(n_steps):
        rho = vn_step(rho, H, epsilon)
    return rho


def initial_state(F_tilde: Factor | np.ndarray, weight: float | None = None) -> ProbabilityMatrix:
    """``P_0 = F~ F~^T`` normalized to ``Tr(P_0) dx = 1``."""
    if isinstance(F_tilde, Factor):
        M = F_tilde.matrix
        w = F_tilde.quadrature_weight if weight is None else weight
        grid = F_tilde.grid
    else:
        M = np.asarray(F_tilde, dtype=float)
        w = 1.0 if weight is None else weight
        grid = None
    P = M @ M.T * w
    tr = np.trace(P) * w
    if not tr > 0:
        raise TraceError("F~ F~^T has zero trace")
    return ProbabilityMatrix(P / tr, 0, w, grid if grid is not None and hasattr(grid, "points") else None)


def prepare_state(
    rho0: DensityMatrix, hamiltonians: Sequence[np.ndarray], epsilon: float
) -> tuple[DensityMatrix, float]:
    """``U rho0 U^dagger`` with ``U = U_m ... U_0``, ``U_l = I - i eps H_l / hbar``.

    Also returns the unitarity defect ``||U U^dagger - I||_2``.
    """
    n = rho0.rho.shape[0]
    U = np.eye(n, dtype=complex)
    for H in hamiltonians:
        H = np.asarray(H, dtype=complex)
        _require_hermitian(H, "preparation Hamiltonian")
        U = (np.eye(n) - 1j * epsilon / rho0.hbar_cycle * H) @ U
    rho = U @ rho0.rho @ U.conj().T
    defect = float(np.linalg.norm(U @ U.conj().T - np.eye(n), 2))
    return DensityMatrix(rho, rho0.hbar_cycle, rho0.weight), defect


def oracle_evolve(rho0: DensityMatrix, H: np.ndarray, t: float) -> DensityMatrix:
    """``exp(-iHt/hbar) rho0 exp(iHt/hbar)`` by dense eigendecomposition."""
    H = np.asarray(H, dtype=complex)
    _require_hermitian(H, "Hamiltonian")
    try:
        evals, V = np.linalg.eigh(0.5 * (H + H.conj().T))
    except np.linalg.LinAlgError as exc:
        raise EigenDecompositionError(str(exc)) from exc
    U = (V * np.exp(-1j * evals * t / rho0.hbar_cycle)) @ V.conj().T
    return DensityMatrix(U @ rho0.rho @ U.conj().T, rho0.hbar_cycle, rho0.weight)


def observables(rho: DensityMatrix, x: np.ndarray | None = None) -> dict[str, float]:
    x = np.arange(rho.rho.shape[0], dtype=float) if x is None else x
    mean, var = rho.position_moments(x)
    return {"trace_re": rho.trace.real, "purity": rho.purity, "pos_mean": mean, "pos_var": var}
