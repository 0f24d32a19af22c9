"""Cyclic factor-graph models and their probability matrices.

A cycle of ``k = 2n`` factors assigns a closed path ``(x_0, ..., x_{k-1})``
the weight ``prod_l F_l(x_{l+1}, x_l)`` with ``x_k = x_0``.  Cutting the
cycle at step ``l`` gives the probability matrix ``P_l``; its diagonal holds
the single-time marginal.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DimensionError,
    EnumerationBudgetError,
    LengthMismatchError,
    SingularFactorError,
    SpecError,
)
from .kernels import DynamicalMatrix, EnergySpec, Factor, build_factor
from .lattice import Grid, TimeMesh

CONDITION_LIMIT = 1e12
ENUMERATION_BUDGET = 10**7


@dataclass(frozen=True, eq=False)
class CycleModel:
    factors: tuple[Factor, ...]
    lam: float
    total_T: float
    grid: Grid | None = None
    _log_Z: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        k = len(self.factors)
        if k == 0 or k % 2:
            raise LengthMismatchError(f"a cycle needs an even number of factors, got {k}")
        n = self.factors[0].size
        weight = self.factors[0].quadrature_weight
        for f in self.factors:
            if f.size != n or f.quadrature_weight != weight:
                raise DimensionError("all factors of a cycle must share one grid")
        if not self.lam > 0:
            raise SpecError("lambda must be > 0")
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def k(self) -> int:
        return len(self.factors)

    @property
    def n(self) -> int:
        return self.k // 2

    @property
    def size(self) -> int:
        return self.factors[0].size

    @property
    def dx(self) -> float:
        return self.factors[0].quadrature_weight

    @property
    def hbar_cycle(self) -> float:
        return self.total_T / self.lam

    @property
    def log_Z(self) -> float:
        """``log Tr(W_{k-1} ... W_0)`` with ``W = F dx``."""
        if not self._log_Z:
            M, log_scale = _scaled_product([f.operator for f in self.factors])
            self._log_Z.append(math.log(np.trace(M)) + log_scale)
        return self._log_Z[0]

    @property
    def Z(self) -> float:
        return math.exp(self.log_Z)


def _scaled_product(ops: Sequence[np.ndarray]) -> tuple[np.ndarray, float]:
    """``ops[-1] @ ... @ ops[0]`` rescaled to unit max entry, plus the log scale."""
    n = ops[0].shape[0] if ops else 0
    M = np.eye(n)
    log_scale = 0.0
    for W in ops:
        M = W @ M
        s = np.max(np.abs(M))
        if s == 0:
            raise SingularFactorError("factor product vanished", math.inf)
        M = M / s
        log_scale += math.log(s)
    return M, log_scale


def cycle_from_factors(factors: Sequence[Factor], lam: float = 1.0, total_T: float | None = None) -> CycleModel:
    grid = factors[0].grid if isinstance(factors[0].grid, Grid) else None
    T = float(len(factors) + 1) if total_T is None else total_T
    return CycleModel(tuple(factors), lam, T, grid)


def maxcal_cycle(
    energy_specs: EnergySpec | Sequence[EnergySpec],
    lam: float,
    mesh: TimeMesh,
    grid: Grid,
    strict: bool = False,
) -> CycleModel:
    """Cycle whose path weight is ``exp(-(lam/T) sum_l H_l eps)``.

    One spec per step (``k`` of them) or a single spec reused at every step.
    Time-dependent potentials are sampled at ``t = l * eps``.
    """
    if not lam > 0:
        raise SpecError(f"lambda must be > 0, got {lam}")
    k = mesh.cycle_steps
    if not isinstance(energy_specs, (list, tuple)):
        specs = [energy_specs] * k
    else:
        specs = list(energy_specs)
    if len(specs) != k:
        raise LengthMismatchError(f"got {len(specs)} energy specs for a cycle of {k} steps")
    hbar = mesh.total_T / lam
    factors = tuple(
        build_factor(s, grid, mesh.epsilon, hbar, t=l * mesh.epsilon, strict=strict)
        for l, s in enumerate(specs)
    )
    return CycleModel(factors, lam, mesh.total_T, grid)


def cycle_path_prob(model: CycleModel, path: Sequence[int]) -> float:
    """Probability of the closed path ``(x_0, ..., x_{k-1})`` on the grid cells."""
    if len(path) != model.k:
        raise LengthMismatchError(f"path length {len(path)} != cycle length {model.k}")
    log_w = 0.0
    for l, F in enumerate(model.factors):
        w = F.matrix[path[(l + 1) % model.k], path[l]] * F.quadrature_weight
        if w <= 0:
            return 0.0
        log_w += math.log(w)
    return math.exp(log_w - model.log_Z)


# --------------------------------------------------------------------------
# probability matrices


@dataclass(frozen=True, eq=False)
class ProbabilityMatrix:
    """Real matrix ``P_l`` normalized so that ``Tr(P) dx = 1``."""

    P: np.ndarray
    step_index: int = 0
    weight: float = 1.0
    grid: Grid | None = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise DimensionError(f"probability matrix must be square, got {P.shape}")
        P = P.copy()
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def marginal(self) -> np.ndarray:
        return np.diag(self.P).copy()

    @property
    def trace(self) -> float:
        return float(np.trace(self.P) * self.weight)

    @property
    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.P, self.P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.P).max())))

    def normalized(self) -> "ProbabilityMatrix":
        return ProbabilityMatrix(self.P / self.trace, self.step_index, self.weight, self.grid)


def marginal_matrix(model: CycleModel, step: int) -> ProbabilityMatrix:
    """``P_l = W_{l-1} ... W_0 W_{k-1} ... W_l / (Z dx)``."""
    k = model.k
    if not 0 <= step <= k:
        raise IndexError(f"step must lie in [0, {k}], got {step}")
    order = [model.factors[(step + j) % k].operator for j in range(k)]
    M, _ = _scaled_product(order)
    return ProbabilityMatrix(M / (np.trace(M) * model.dx), step, model.dx, model.grid)


def step_probability_matrix(P: ProbabilityMatrix, factor: Factor) -> ProbabilityMatrix:
    """Markov-like update ``P' = W P W^{-1}`` with a condition-number guard."""
    W = factor.operator
    if W.shape != P.P.shape:
        raise DimensionError("factor and probability matrix sizes differ")
    cond = float(np.linalg.cond(W))
    if not cond < CONDITION_LIMIT:
        raise SingularFactorError(
            f"factor condition number {cond:.3e} exceeds {CONDITION_LIMIT:.0e}; "
            "use marginal_matrix instead",
            cond,
        )
    # P W^{-1} = (W^{-T} P^T)^T, solved with a pivoted LU factorization
    PWinv = np.linalg.solve(W.T, (W @ P.P).T).T
    return ProbabilityMatrix(PWinv, P.step_index + 1, P.weight, P.grid)


def imaginary_vn_step(P: ProbabilityMatrix, J: DynamicalMatrix | np.ndarray, epsilon: float) -> ProbabilityMatrix:
    """``P' = P + eps (J P - P J)``."""
    Jm = J.J if isinstance(J, DynamicalMatrix) else np.asarray(J, dtype=float)
    new = P.P + epsilon * (Jm @ P.P - P.P @ Jm)
    return ProbabilityMatrix(new, P.step_index + 1, P.weight, P.grid)


def pure_state_matrix(
    forward: Sequence[np.ndarray], backward: Sequence[np.ndarray], weights: Sequence[float] | None = None, dx: float = 1.0
) -> ProbabilityMatrix:
    """``P_0(x, x') = sum_a lambda_a mu_fwd^a(x) mu_bwd^a(x')`` normalized."""
    forward = [np.asarray(f, dtype=float) for f in forward]
    backward = [np.asarray(b, dtype=float) for b in backward]
    if len(forward) != len(backward):
        raise LengthMismatchError("need one backward message per forward message")
    if weights is None:
        weights = [1.0 / len(forward)] * len(forward)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
        raise SpecError("mixture weights must be non-negative and sum to 1")
    P = sum(w * np.outer(f, b) / (f @ b * dx) for w, f, b in zip(weights, forward, backward))
    out = ProbabilityMatrix(P, 0, dx)
    if not out.is_symmetric:
        warnings.warn("asymmetric initial probability matrix: non-standard initial data", stacklevel=2)
    return out


# --------------------------------------------------------------------------
# objectivity mirroring


def mirror_factors(external: Sequence[Factor]) -> list[Factor]:
    """Complete ``F_0 ... F_{n-1}`` to a cycle with ``F_{2n-1-l} = F_l^T``."""
    external = list(external)
    return external + [f.T for f in reversed(external)]


# --------------------------------------------------------------------------
# Bernstein decomposition


@dataclass(frozen=True, eq=False)
class BernsteinForm:
    """``P(x_0..x_n) = p(x_0, x_n) prod_{l<n-1} P_l(x_{l+1} | x_l, x_n)``.

    ``endpoint_joint[x0, xn]``; ``conditionals[l, x_next, x, xn]``.
    """

    endpoint_joint: np.ndarray
    conditionals: np.ndarray

    @property
    def n(self) -> int:
        return self.conditionals.shape[0] + 1

    def path_probability(self, path: Sequence[int]) -> float:
        if len(path) != self.n + 1:
            raise LengthMismatchError(f"external path must have {self.n + 1} entries")
        xn = path[-1]
        p = self.endpoint_joint[path[0], xn]
        for l in range(self.n - 1):
            p *= self.conditionals[l, path[l + 1], path[l], xn]
        return float(p)

    def to_json(self) -> str:
        return json.dumps(
            {
                "endpoint_joint": self.endpoint_joint.tolist(),
                "conditionals": self.conditionals.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "BernsteinForm":
        d = json.loads(text)
        return cls(np.asarray(d["endpoint_joint"]), np.asarray(d["conditionals"]))


def bernstein_decompose(model: CycleModel) -> BernsteinForm:
    """Endpoint joint and endpoint-conditioned kernels over the external half.

    Works on state probabilities (quadrature weight folded into the factors).
    """
    S, n = model.size, model.n
    if S ** (n + 1) > ENUMERATION_BUDGET:
        raise EnumerationBudgetError(
            f"{S}^{n + 1} external paths exceed the budget of {ENUMERATION_BUDGET}"
        )
    W = [f.operator for f in model.factors]
    Z = math.exp(model.log_Z)
    # internal half F~_n = W_{k-1} ... W_n maps x_n back to x_0
    internal = np.eye(S)
    for l in range(n, model.k):
        internal = W[l] @ internal
    # B[l] = W_{n-1} ... W_l, indexed B[l][x_n, x_l]; B[n] = I
    B = [None] * (n + 1)
    B[n] = np.eye(S)
    for l in range(n - 1, -1, -1):
        B[l] = B[l + 1] @ W[l]
    joint = (B[0] * internal.T) / Z  # joint[x_n, x_0]
    cond = np.zeros((max(n - 1, 0), S, S, S))
    for l in range(n - 1):
        num = W[l][:, :, None] * B[l + 1].T[:, None, :]  # [x_next, x, x_n]
        den = B[l].T[None, :, :]  # [., x, x_n]
        with np.errstate(divide="ignore", invalid="ignore"):
            cond[l] = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return BernsteinForm(joint.T.copy(), cond)
