"""End-to-end scenarios: two slits, least-energy paths, pointer readout, coin, drift."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bridge import first_derivative, second_derivative
from .errors import (
    NonConvergenceError,
    PointerRangeError,
    ProbabilityError,
    SlitOffGridError,
    SpecError,
)
from .kernels import (
    DriftDiffusion,
    Factor,
    NonRelativistic,
    build_factor,
    split_sym_antisym,
)
from .lattice import Grid, TimeMesh

# --------------------------------------------------------------------------
# two slits


@dataclass(frozen=True, eq=False)
class SlitSetup:
    """Source at ``source``, delta slits at ``+-x_slit``, screen on ``grid``.

    ``F0`` carries the source to the slits, ``F1`` the slits to the screen;
    ``G1`` and ``G0`` bring the path back.  Objectivity means ``G = F^T``.
    """

    x_slit: float
    F0: Factor
    F1: Factor
    G1: Factor
    G0: Factor
    grid: Grid
    source: float = 0.0

    @property
    def objective(self) -> bool:
        return bool(
            np.array_equal(self.G1.matrix, self.F1.matrix.T) and np.array_equal(self.G0.matrix, self.F0.matrix.T)
        )


def make_slit_setup(
    grid: Grid,
    x_slit: float = 1.0,
    eps_source: float = 0.5,
    eps_screen: float = 2.0,
    mass: float = 1.0,
    hbar_cycle: float = 1.0,
    internal_spec: Optional[NonRelativistic] = None,
    strict: bool = False,
) -> SlitSetup:
    """Gaussian factors for both legs.

    With ``internal_spec`` the return path uses its own kernels (objectivity
    off); otherwise ``G_l = F_l^T``.
    """
    spec = NonRelativistic(mass)
    F0 = build_factor(spec, grid, eps_source, hbar_cycle, strict=strict)
    F1 = build_factor(spec, grid, eps_screen, hbar_cycle, strict=strict)
    if internal_spec is None:
        G0, G1 = F0.T, F1.T
    else:
        G0 = build_factor(internal_spec, grid, eps_source, hbar_cycle, strict=strict).T
        G1 = build_factor(internal_spec, grid, eps_screen, hbar_cycle, strict=strict).T
    return SlitSetup(x_slit, F0, F1, G1, G0, grid)


@dataclass(frozen=True, eq=False)
class TwoSlitResult:
    x: np.ndarray
    P_plus: np.ndarray
    P_minus: np.ndarray
    P_both: np.ndarray
    P_both_raw: np.ndarray
    interference_term: np.ndarray
    delta_S: np.ndarray
    C: float
    Z_plus: float
    Z_minus: float
    Z_both: float

    @property
    def closed_form_gap(self) -> float:
        return float(np.max(np.abs(self.P_both - self.P_both_raw)))

    @property
    def non_additivity(self) -> float:
        dx = self.x[1] - self.x[0]
        return float(np.abs(self.P_both - 0.5 * (self.P_plus + self.P_minus)).sum() * dx)


def two_slit(setup: SlitSetup) -> TwoSlitResult:
    """Single-slit and both-slit screen densities, closed form and raw path sum."""
    g = setup.grid
    idx = {}
    for name, pos in (("plus", setup.x_slit), ("minus", -setup.x_slit), ("source", setup.source)):
        i = g.index_of(pos)
        if i is None:
            raise SlitOffGridError(f"{name} position {pos} is not a grid node")
        idx[name] = i
    s, ip, im = idx["source"], idx["plus"], idx["minus"]
    dx = g.dx
    F0, F1, G1, G0 = setup.F0.matrix, setup.F1.matrix, setup.G1.matrix, setup.G0.matrix

    # outbound and return legs through each slit, as functions of the screen point
    a = {sl: F0[i, s] * F1[:, i] for sl, i in (("+", ip), ("-", im))}
    b = {sl: G1[i, :] * G0[s, i] for sl, i in (("+", ip), ("-", im))}

    raw = sum(a[x1] * b[x3] for x1 in "+-" for x3 in "+-")
    Z_both = float(raw.sum() * dx)
    P_both_raw = raw / Z_both

    Zp = float((a["+"] * b["+"]).sum() * dx)
    Zm = float((a["-"] * b["-"]).sum() * dx)
    Pp = a["+"] * b["+"] / Zp
    Pm = a["-"] * b["-"] / Zm
    with np.errstate(divide="ignore", invalid="ignore"):
        S_plus = 0.5 * np.log(a["+"] / b["+"])
        S_minus = 0.5 * np.log(a["-"] / b["-"])
        dS = np.where((Pp > 0) & (Pm > 0), S_plus - S_minus, 0.0)
    Z_one = math.sqrt(Zp * Zm)
    C = 2.0 * Z_one / Z_both
    interference = C * np.sqrt(Pp * Pm) * np.cosh(dS)
    P_both = C * (0.5 * (Zp * Pp + Zm * Pm) / Z_one) + interference
    return TwoSlitResult(g.points.copy(), Pp, Pm, P_both, P_both_raw, interference, dS, C, Zp, Zm, Z_both)


# --------------------------------------------------------------------------
# least-energy paths


@dataclass(frozen=True)
class PathProblem:
    x0: float
    xn: float
    spec: NonRelativistic
    mesh: TimeMesh

    def __post_init__(self):
        if self.mesh.n_steps < 2:
            raise SpecError("a path problem needs at least two steps")


@dataclass(frozen=True, eq=False)
class PathResult:
    times: np.ndarray
    path: np.ndarray
    residuals: np.ndarray
    iterations: int
    method: str
    note: str = ""

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0


def _grad_V(spec: NonRelativistic, x: np.ndarray, t: float) -> np.ndarray:
    if spec.potential_grad is not None:
        return np.asarray(spec.potential_grad(x, t), dtype=float) * np.ones_like(x)
    if spec.potential is None:
        return np.zeros_like(x)
    h = 1e-6 * np.maximum(1.0, np.abs(x))
    return (spec.V(x + h, t) - spec.V(x - h, t)) / (2 * h)


def _hess_V(spec: NonRelativistic, x: np.ndarray, t: float) -> np.ndarray:
    if spec.potential_hess is not None:
        return np.asarray(spec.potential_hess(x, t), dtype=float) * np.ones_like(x)
    if spec.potential is None:
        return np.zeros_like(x)
    h = 1e-4 * np.maximum(1.0, np.abs(x))
    return (_grad_V(spec, x + h, t) - _grad_V(spec, x - h, t)) / (2 * h)


def solve_tridiagonal(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray | None:
    """Thomas algorithm; returns ``None`` when a pivot is not positive."""
    n = diag.size
    c = np.empty(n)
    d = np.empty(n)
    piv = diag[0]
    if not piv > 0:
        return None
    c[0] = upper[0] / piv if n > 1 else 0.0
    d[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - lower[i - 1] * c[i - 1]
        if not piv > 0:
            return None
        c[i] = upper[i] / piv if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / piv
    out = np.empty(n)
    out[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        out[i] = d[i] - c[i] * out[i + 1]
    return out


def path_energy(path: np.ndarray, spec: NonRelativistic, epsilon: float, t0: float = 0.0) -> float:
    v = np.diff(path) / epsilon
    Vx = spec.V(path, t0)
    return float(np.sum(0.5 * spec.mass * v**2 + 0.5 * (Vx[1:] + Vx[:-1])))


def newton_residual(path: np.ndarray, spec: NonRelativistic, epsilon: float, t0: float = 0.0) -> np.ndarray:
    """``m (x_{l+1} - 2 x_l + x_{l-1}) / eps^2 - V'(x_l)`` at interior nodes."""
    acc = spec.mass * (path[2:] - 2 * path[1:-1] + path[:-2]) / epsilon**2
    return acc - _grad_V(spec, path[1:-1], t0)


def classical_path(problem: PathProblem, tol: float = 1e-10, max_iterations: int = 200) -> PathResult:
    """Minimize ``sum_l H(x_{l+1}, x_l)`` with both endpoints clamped.

    Damped Newton on the tridiagonal Hessian; when the Hessian is not
    positive definite a Levenberg shift is added, which degrades the step
    toward gradient descent.
    """
    spec, eps, n = problem.spec, problem.mesh.epsilon, problem.mesh.n_steps
    m = spec.mass
    path = np.linspace(problem.x0, problem.xn, n + 1)
    path[0], path[-1] = problem.x0, problem.xn
    method = "newton"
    note = ""
    k2 = m / eps**2
    energy = path_energy(path, spec, eps)
    for it in range(1, max_iterations + 1):
        grad = -newton_residual(path, spec, eps)
        if np.max(np.abs(grad)) <= tol:
            break
        diag = 2 * k2 + _hess_V(spec, path[1:-1], 0.0)
        off = np.full(n - 2, -k2)
        shift = 0.0
        step = solve_tridiagonal(off, diag, off, -grad)
        while step is None:
            shift = max(2 * shift, 1.0)
            method = "levenberg"
            note = "Hessian not positive definite (inverted-potential regime); shifted Newton used"
            step = solve_tridiagonal(off, diag + shift * k2, off, -grad)
        alpha = 1.0
        while True:
            trial = path.copy()
            trial[1:-1] += alpha * step
            e_trial = path_energy(trial, spec, eps)
            if e_trial <= energy + 1e-12 * max(1.0, abs(energy)) or alpha < 1e-8:
                break
            alpha *= 0.5
        path, energy = trial, e_trial
    else:
        res = newton_residual(path, spec, eps)
        raise NonConvergenceError(
            f"path minimizer did not converge (residual {np.max(np.abs(res)):.3e})",
            float(np.max(np.abs(res))),
            max_iterations,
        )
    times = np.arange(n + 1) * eps
    return PathResult(times, path, newton_residual(path, spec, eps), it, method, note)


def harmonic_continuum_path(x0: float, xn: float, omega: float, times: np.ndarray) -> np.ndarray:
    """Solution of ``x'' = omega^2 x`` with clamped ends."""
    T = times[-1]
    return (x0 * np.sinh(omega * (T - times)) + xn * np.sinh(omega * times)) / np.sinh(omega * T)


# --------------------------------------------------------------------------
# pointer-based momentum readout


@dataclass(frozen=True, eq=False)
class PointerSetup:
    k_values: np.ndarray
    amplitudes: np.ndarray
    sigma: float
    g: float
    tau: float
    pointer_grid: Grid
    hbar: float = 1.0

    def __post_init__(self):
        k = np.atleast_1d(np.asarray(self.k_values, dtype=float))
        c = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex))
        if k.shape != c.shape:
            raise SpecError("one amplitude per wavenumber is required")
        if not self.sigma > 0:
            raise SpecError("pointer width must be > 0")
        norm = np.sum(np.abs(c) ** 2)
        if not norm > 0:
            raise SpecError("amplitudes are all zero")
        object.__setattr__(self, "k_values", k)
        object.__setattr__(self, "amplitudes", c / math.sqrt(norm))

    @property
    def centers(self) -> np.ndarray:
        return self.g * self.tau * self.hbar * self.k_values

    @property
    def weights(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True, eq=False)
class PointerResult:
    X: np.ndarray
    density: np.ndarray
    centers: np.ndarray
    weights: np.ndarray

    def peak_weights(self) -> np.ndarray:
        """Mass in the window around each peak, cut at midpoints between peaks."""
        order = np.argsort(self.centers)
        c = self.centers[order]
        cuts = np.concatenate([[-np.inf], 0.5 * (c[1:] + c[:-1]), [np.inf]])
        dX = self.X[1] - self.X[0]
        out = np.empty(c.size)
        for j in range(c.size):
            sel = (self.X >= cuts[j]) & (self.X < cuts[j + 1])
            out[j] = self.density[sel].sum() * dX
        result = np.empty_like(out)
        result[order] = out
        return result


def momentum_measurement(setup: PointerSetup, coverage: float = 6.0) -> PointerResult:
    """Pointer density ``sum_k |c_k|^2 N(X; g tau hbar k, sigma^2)``."""
    X = setup.pointer_grid.points
    centers = setup.centers
    lo, hi = centers.min() - coverage * setup.sigma, centers.max() + coverage * setup.sigma
    if lo < setup.pointer_grid.x_min or hi > setup.pointer_grid.x_max:
        raise PointerRangeError(
            f"pointer grid [{setup.pointer_grid.x_min}, {setup.pointer_grid.x_max}] does not cover [{lo}, {hi}]"
        )
    s2 = setup.sigma**2
    dens = np.zeros_like(X)
    for c, w in zip(centers, setup.weights):
        dens += w * np.exp(-((X - c) ** 2) / (2 * s2)) / math.sqrt(2 * math.pi * s2)
    return PointerResult(X.copy(), dens, centers, setup.weights)


# --------------------------------------------------------------------------
# coin


@dataclass(frozen=True)
class CoinResult:
    p: float
    exact: tuple[float, float]
    noise: tuple[float, float]
    flip_probability: float
    empirical: tuple[float, float]
    n_samples: int
    seed: int

    @property
    def sigma(self) -> float:
        q = self.exact[0]
        return math.sqrt(q * (1 - q) / self.n_samples) if self.n_samples else 0.0

    @property
    def deviation(self) -> float:
        return abs(self.empirical[0] - self.exact[0])

    @property
    def within_band(self) -> bool:
        return self.deviation <= 3 * self.sigma + 1e-15


def coin_law(p: float) -> tuple[tuple[float, float], tuple[float, float], float]:
    """Exact (heads, tails) law, the signed correction, and the stage-two flip probability."""
    if not 0.0 <= p <= 1.0:
        raise ProbabilityError(f"p must lie in [0, 1], got {p}")
    d = 0.5 * (1.0 - 2.0 * p)
    exact = (0.5 + d, 0.5 - d)
    return exact, (d, -d), abs(1.0 - 2.0 * p)


def coin_two_stage(p: float, n_samples: int, seed: int) -> CoinResult:
    """Fair toss followed by a one-way flip.

    For ``p <= 1/2`` tails turn into heads with probability ``1 - 2p``; for
    ``p > 1/2`` heads turn into tails with probability ``2p - 1``.  Heads
    end with probability ``1 - p``.
    """
    exact, noise, flip = coin_law(p)
    rng = np.random.default_rng(seed)
    heads = rng.random(n_samples) < 0.5
    u = rng.random(n_samples)
    if p <= 0.5:
        heads = heads | (u < flip)
    else:
        heads = heads & ~(u < flip)
    h = float(heads.mean()) if n_samples else exact[0]
    return CoinResult(p, exact, noise, flip, (h, 1.0 - h), n_samples, seed)


# --------------------------------------------------------------------------
# drift frame


@dataclass(frozen=True)
class DriftCheck:
    sym_residual: float
    antisym_residual: float


def _default_density(x: np.ndarray, width: float = 1.0):
    p = np.exp(-(x**2) / (2 * width**2)) / math.sqrt(2 * math.pi * width**2)
    dp = -x / width**2 * p
    d2p = (x**2 / width**4 - 1 / width**2) * p
    return p, dp, d2p


def drift_frame_check(
    gamma: float,
    v: float,
    epsilon: float,
    h_diff: float,
    grid: Grid,
    density: Optional[np.ndarray] = None,
    margin: float = 0.1,
) -> DriftCheck:
    """Generator residuals of the symmetric and antisymmetric kernel parts.

    ``sym_residual = sup |(K_sym p - p)/eps - (h/2 gamma) p''|`` and
    ``antisym_residual = sup |K_anti p / eps + v p'|`` over the interior.
    Both shrink linearly in ``eps``.
    """
    x = grid.points
    if density is None:
        p, dp, d2p = _default_density(x)
    else:
        p = np.asarray(density, dtype=float)
        dp = first_derivative(p, grid.dx)
        d2p = second_derivative(p, grid.dx)
    F = build_factor(DriftDiffusion(gamma, v, h_diff), grid, epsilon)
    Ks, Ka = split_sym_antisym(F)
    ds = (Ks.apply(p) - p) / epsilon - h_diff / (2 * gamma) * d2p
    da = Ka.apply(p) / epsilon + v * dp
    cut = max(2, int(margin * grid.n_points))
    inner = slice(cut, grid.n_points - cut)
    return DriftCheck(float(np.max(np.abs(ds[inner]))), float(np.max(np.abs(da[inner]))))


def transported_gaussian_error(
    gamma: float,
    v: float,
    epsilon: float,
    h_diff: float,
    grid: Grid,
    n_steps: int,
    width: float = 1.0,
) -> float:
    """Sup error between drift-kernel evolution and the shifted driftless solution."""
    x = grid.points
    F = build_factor(DriftDiffusion(gamma, v, h_diff), grid, epsilon)
    p = _default_density(x, width)[0]
    for _ in range(n_steps):
        p = F.apply(p)
    t = n_steps * epsilon
    var = width**2 + h_diff * t / gamma
    exact = np.exp(-((x - v * t) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)
    return float(np.max(np.abs(p - exact)))


def fit_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
