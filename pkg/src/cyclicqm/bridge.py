"""Message passing on chains and bridges with fixed endpoint marginals.

Forward messages run ``mu_fwd[l+1] = F_l mu_fwd[l] dx`` and backward messages
run ``mu_bwd[l] = F_l^T mu_bwd[l+1] dx``.  Their pointwise product is the
marginal at step ``l`` up to one global constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DimensionError,
    InconsistentMarginalsError,
    NonConvergenceError,
    ProbabilityError,
    ZeroSupportError,
)
from .kernels import Factor, NonRelativistic
from .lattice import Grid


@dataclass(frozen=True, eq=False)
class MessagePair:
    """Per-step forward and backward messages, shape ``(n + 1, S)`` each.

    ``log_offset`` is the log of the global constant that turns the stored
    vectors into normalized messages (product integrating to one).
    """

    forward: np.ndarray
    backward: np.ndarray
    weight: float = 1.0
    grid: Grid | None = None
    log_offset: float = 0.0
    iterations: int = 0
    residual: float = 0.0

    def __post_init__(self):
        f = np.array(self.forward, dtype=float)
        b = np.array(self.backward, dtype=float)
        if f.shape != b.shape or f.ndim != 2:
            raise DimensionError("forward and backward messages must share shape (steps, states)")
        f.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "forward", f)
        object.__setattr__(self, "backward", b)

    @property
    def n_steps(self) -> int:
        return self.forward.shape[0] - 1

    def born(self) -> np.ndarray:
        """All normalized marginals, shape ``(n + 1, S)``."""
        prod = self.forward * self.backward
        mass = prod.sum(axis=1, keepdims=True) * self.weight
        if np.any(mass <= 0):
            raise ZeroSupportError("message product vanishes at some step")
        return prod / mass

    def probability_matrix(self, step: int) -> np.ndarray:
        """Pure-state matrix ``mu_fwd(x) mu_bwd(x')`` normalized to unit trace."""
        f, b = self.forward[step], self.backward[step]
        return np.outer(f, b) / (f @ b * self.weight)


def _check(message: np.ndarray, factor: Factor) -> np.ndarray:
    message = np.asarray(message, dtype=float)
    if message.shape != (factor.size,):
        raise DimensionError(f"message of shape {message.shape} does not match factor size {factor.size}")
    return message


def bp_forward(message: np.ndarray, factor: Factor) -> np.ndarray:
    """``mu'(x) = sum_x' F(x, x') mu(x') dx``."""
    return factor.apply(_check(message, factor))


def bp_backward(message: np.ndarray, factor: Factor) -> np.ndarray:
    """``mu'(x) = sum_x' mu(x') F(x', x) dx``."""
    return factor.apply_transpose(_check(message, factor))


def born_marginal(pair: MessagePair, step: int) -> np.ndarray:
    prod = pair.forward[step] * pair.backward[step]
    mass = prod.sum() * pair.weight
    if not mass > 0:
        raise ZeroSupportError(f"message product vanishes at step {step}")
    return prod / mass


def _sweep_forward(factors: Sequence[Factor], start: np.ndarray) -> np.ndarray:
    out = np.empty((len(factors) + 1, start.size))
    out[0] = start
    for l, F in enumerate(factors):
        out[l + 1] = F.apply(out[l])
    return out


def _sweep_backward(factors: Sequence[Factor], end: np.ndarray) -> np.ndarray:
    n = len(factors)
    out = np.empty((n + 1, end.size))
    out[n] = end
    for l in range(n - 1, -1, -1):
        out[l] = factors[l].apply_transpose(out[l + 1])
    return out


def chain_messages(
    factors: Sequence[Factor],
    start: np.ndarray | None = None,
    end: np.ndarray | None = None,
) -> MessagePair:
    """Exact messages on an open chain with optional leaf potentials."""
    S = factors[0].size
    start = np.ones(S) if start is None else np.asarray(start, dtype=float)
    end = np.ones(S) if end is None else np.asarray(end, dtype=float)
    fwd = _sweep_forward(factors, start)
    bwd = _sweep_backward(factors, end)
    w = factors[0].quadrature_weight
    Z = float(fwd[0] @ bwd[0] * w)
    grid = factors[0].grid if isinstance(factors[0].grid, Grid) else None
    return MessagePair(fwd, bwd, w, grid, -0.5 * math.log(Z))


# --------------------------------------------------------------------------
# bridges


@dataclass(frozen=True, eq=False)
class BridgeProblem:
    factors: tuple[Factor, ...]
    p0: np.ndarray
    pn: np.ndarray
    tolerance: float = 1e-10
    max_iterations: int = 10_000
    clip_zeros: bool = False

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise DimensionError("a bridge needs at least one factor")
        w = self.factors[0].quadrature_weight
        for name in ("p0", "pn"):
            p = np.array(getattr(self, name), dtype=float)
            if p.shape != (self.factors[0].size,):
                raise DimensionError(f"{name} does not match the factor size")
            if np.any(p < 0) or not np.all(np.isfinite(p)):
                raise ProbabilityError(f"{name} must be finite and non-negative")
            if np.any(p == 0):
                if not self.clip_zeros:
                    raise ZeroSupportError(f"{name} has zeros; endpoint marginals must be strictly positive")
                p = np.maximum(p, 1e-30)
            mass = p.sum() * w
            if not math.isclose(mass, 1.0, rel_tol=1e-8):
                raise ProbabilityError(f"{name} integrates to {mass}, expected 1")
            p = p / mass
            p.setflags(write=False)
            object.__setattr__(self, name, p)

    @property
    def weight(self) -> float:
        return self.factors[0].quadrature_weight


def _l1(a: np.ndarray, b: np.ndarray, w: float) -> float:
    return float(np.abs(a - b).sum() * w)


def solve_bridge(problem: BridgeProblem, raise_on_failure: bool = True) -> MessagePair:
    """Alternating endpoint rescaling until both boundary products match.

    Each sweep propagates the backward message to step 0, divides ``p0`` by
    it, propagates forward to step ``n`` and divides ``pn`` by the result.
    The returned messages satisfy both recursions exactly; the final-step
    product matches ``pn`` exactly and the initial-step residual is reported.
    """
    factors, p0, pn, w = problem.factors, problem.p0, problem.pn, problem.weight
    S = p0.size
    grid = factors[0].grid if isinstance(factors[0].grid, Grid) else None
    end = np.ones(S)
    residual = math.inf
    fwd = bwd = None
    for it in range(1, problem.max_iterations + 1):
        end = end / end.max()
        bwd = _sweep_backward(factors, end)
        if np.any(bwd[0] <= 0):
            raise ZeroSupportError("backward message vanishes at step 0")
        fwd = _sweep_forward(factors, p0 / bwd[0])
        if np.any(fwd[-1] <= 0):
            raise ZeroSupportError("forward message vanishes at the final step")
        end = pn / fwd[-1]
        bwd = _sweep_backward(factors, end)
        residual = _l1(fwd[0] * bwd[0], p0, w) + _l1(fwd[-1] * bwd[-1], pn, w)
        if residual <= problem.tolerance:
            break
    pair = MessagePair(fwd, bwd, w, grid, 0.0, it, residual)
    if residual > problem.tolerance and raise_on_failure:
        raise NonConvergenceError(
            f"bridge did not converge in {problem.max_iterations} sweeps (residual {residual:.3e})",
            residual,
            problem.max_iterations,
        )
    return pair


def endpoint_residuals(pair: MessagePair, p0: np.ndarray, pn: np.ndarray) -> tuple[float, float]:
    w = pair.weight
    return (
        _l1(pair.forward[0] * pair.backward[0], p0, w),
        _l1(pair.forward[-1] * pair.backward[-1], pn, w),
    )


def solve_mixed_bridge(
    factors: Sequence[Factor],
    components: Sequence[tuple[float, np.ndarray, np.ndarray]],
    tolerance: float = 1e-10,
    max_iterations: int = 10_000,
) -> tuple[list[MessagePair], np.ndarray]:
    """Solve one bridge per ``(lambda_a, p0_a, pn_a)`` and mix the marginals."""
    lams = np.array([c[0] for c in components], dtype=float)
    if np.any(lams < 0) or not math.isclose(lams.sum(), 1.0, abs_tol=1e-12):
        raise ProbabilityError("mixture weights must be non-negative and sum to 1")
    pairs = [solve_bridge(BridgeProblem(tuple(factors), p0, pn, tolerance, max_iterations)) for _, p0, pn in components]
    mixed = sum(lam * pair.born() for lam, pair in zip(lams, pairs))
    return pairs, mixed


def forward_transition(pair: MessagePair, factor: Factor, step: int) -> np.ndarray:
    """``P+[x', x] = F(x', x) mu_bwd[l+1](x') / mu_bwd[l](x)``; each column integrates to one."""
    return factor.matrix * pair.backward[step + 1][:, None] / pair.backward[step][None, :]


def backward_transition(pair: MessagePair, factor: Factor, step: int) -> np.ndarray:
    """``P-[x, x'] = F(x', x) mu_fwd[l](x) / mu_fwd[l+1](x')``; each column integrates to one."""
    return factor.matrix.T * pair.forward[step][:, None] / pair.forward[step + 1][None, :]


def internal_messages(pair: MessagePair) -> MessagePair:
    """Messages of the mirrored internal chain over steps ``n .. 2n``.

    Row ``j`` holds step ``n + j``: ``nu_fwd[n + j] = mu_bwd[n - j]`` and
    ``nu_bwd[n + j] = mu_fwd[n - j]``.
    """
    return MessagePair(
        pair.backward[::-1].copy(),
        pair.forward[::-1].copy(),
        pair.weight,
        pair.grid,
        pair.log_offset,
    )


# --------------------------------------------------------------------------
# square-root kernels


def sqrt_markov_kernel(
    forward: np.ndarray,
    p: np.ndarray,
    p_next: np.ndarray,
    weight: float = 1.0,
    tol: float = 1e-10,
) -> np.ndarray:
    """``K(x', x) = sqrt(P+(x'|x) P-(x|x'))`` with ``P-`` from Bayes' rule.

    ``forward[x', x]`` is the forward transition table (columns integrate to
    one with ``weight``).  The result propagates square roots:
    ``sqrt(p_next) = K sqrt(p) weight``.
    """
    forward = np.asarray(forward, dtype=float)
    p = np.asarray(p, dtype=float)
    p_next = np.asarray(p_next, dtype=float)
    pushed = forward @ p * weight
    if np.abs(pushed - p_next).sum() * weight > tol:
        raise InconsistentMarginalsError("p_next is not the forward image of p")
    with np.errstate(divide="ignore", invalid="ignore"):
        backward = np.where(p_next[:, None] > 0, forward * p[None, :] / p_next[:, None], 0.0)
    return np.sqrt(forward * backward)


# --------------------------------------------------------------------------
# continuum limit


def second_derivative(f: np.ndarray, dx: float) -> np.ndarray:
    """Fourth-order central second difference; the two edge nodes on each side are NaN."""
    out = np.full_like(f, np.nan, dtype=float)
    out[2:-2] = (-f[4:] + 16 * f[3:-1] - 30 * f[2:-2] + 16 * f[1:-3] - f[:-4]) / (12 * dx * dx)
    return out


def first_derivative(f: np.ndarray, dx: float) -> np.ndarray:
    """Fourth-order central first difference; the two edge nodes on each side are NaN."""
    out = np.full_like(f, np.nan, dtype=float)
    out[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * dx)
    return out


def continuum_residual(
    pair: MessagePair,
    spec: NonRelativistic,
    epsilon: float,
    lam: float,
    total_T: float,
    t0: float = 0.0,
    margin: int | None = None,
) -> tuple[float, float]:
    """Sup-norm residuals of the imaginary-time equation and its adjoint.

    Forward: ``hbar d_t mu = (hbar^2/2m) mu'' - V mu``.
    Backward: ``hbar d_t mu = -(hbar^2/2m) mu'' + V mu``.
    Time derivatives are one-step differences; ``margin`` nodes are dropped
    at each edge of the grid.
    """
    if pair.grid is None:
        raise DimensionError("continuum residual needs messages on a position grid")
    grid = pair.grid
    hbar = total_T / lam
    x = grid.points
    margin = max(2, grid.n_points // 10) if margin is None else max(2, margin)
    inner = slice(margin, grid.n_points - margin)
    c = hbar * hbar / (2 * spec.mass)
    r_fwd = r_bwd = 0.0
    for l in range(pair.n_steps):
        t = t0 + l * epsilon
        V = spec.V(x, t)
        f0, f1 = pair.forward[l], pair.forward[l + 1]
        rf = hbar * (f1 - f0) / epsilon - (c * second_derivative(f0, grid.dx) - V * f0)
        b0, b1 = pair.backward[l], pair.backward[l + 1]
        Vn = spec.V(x, t + epsilon)
        rb = hbar * (b1 - b0) / epsilon - (-c * second_derivative(b1, grid.dx) + Vn * b1)
        r_fwd = max(r_fwd, float(np.max(np.abs(rf[inner]))))
        r_bwd = max(r_bwd, float(np.max(np.abs(rb[inner]))))
    return r_fwd, r_bwd
