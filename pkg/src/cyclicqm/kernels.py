"""Real transition kernels built from energy functions.

A factor ``F`` is stored as a matrix ``F[i, j] = F(x_i, x_j)`` whose first
index is the destination and second the source.  Applying it to a vector is
the discretized convolution ``(F v)(x) = sum_j F(x, x_j) v(x_j) dx``, so the
operator acting on vectors is ``F.matrix * dx``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .errors import (
    BoundaryMassError,
    BoundaryMassWarning,
    CouplingRangeError,
    DimensionError,
    IllConditionedWarning,
    NegativeEntryError,
    NonPositiveEpsilonError,
    SpecError,
)
from .lattice import Grid

Potential = Callable[[np.ndarray, float], np.ndarray]

BOUNDARY_MASS_LIMIT = 1e-10


# --------------------------------------------------------------------------
# energy specifications


@dataclass(frozen=True)
class NonRelativistic:
    """Particle of mass ``mass`` in a potential ``V(x, t)``.

    ``potential_grad`` and ``potential_hess`` are optional analytic first and
    second derivatives, used by the classical path solver.
    """

    mass: float
    potential: Optional[Potential] = None
    potential_grad: Optional[Potential] = None
    potential_hess: Optional[Potential] = None

    def __post_init__(self):
        if not self.mass > 0:
            raise SpecError(f"mass must be > 0, got {self.mass}")

    def V(self, x, t: float = 0.0):
        x = np.asarray(x, dtype=float)
        if self.potential is None:
            return np.zeros_like(x)
        return np.broadcast_to(np.asarray(self.potential(x, t), dtype=float), x.shape)


@dataclass(frozen=True)
class Electromagnetic:
    """Charged particle in scalar and vector potentials.

    Both potentials receive positions with a trailing spatial axis of size
    ``d``; ``scalar_potential`` returns shape ``(...)`` and
    ``vector_potential`` returns shape ``(..., d)``.
    """

    mass: float
    charge: float
    c: float = 1.0
    scalar_potential: Optional[Potential] = None
    vector_potential: Optional[Potential] = None

    def __post_init__(self):
        if not self.mass > 0:
            raise SpecError(f"mass must be > 0, got {self.mass}")
        if not self.c > 0:
            raise SpecError(f"lightspeed must be > 0, got {self.c}")


@dataclass(frozen=True)
class DriftDiffusion:
    """Overdamped diffusion with friction ``gamma`` in a frame moving at ``drift``.

    ``h_diff`` (twice the thermal energy) takes the place of hbar.
    """

    gamma: float
    drift: float = 0.0
    h_diff: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise SpecError(f"gamma must be > 0, got {self.gamma}")
        if not self.h_diff > 0:
            raise SpecError(f"h_diff must be > 0, got {self.h_diff}")


@dataclass(frozen=True)
class MeasurementCoupling:
    """System particle of mass ``m`` coupled to a pointer particle of mass ``M``."""

    system_mass: float
    device_mass: float
    coupling: float

    def __post_init__(self):
        if not (self.system_mass > 0 and self.device_mass > 0):
            raise SpecError("system and device masses must be > 0")
        if not abs(self.coupling) < 1:
            raise CouplingRangeError(f"|a| must be < 1, got a = {self.coupling}")


@dataclass(frozen=True)
class Tabulated:
    """Energy given directly as a table ``H[x_next, x]`` over discrete states.

    No ``Z`` normalization is applied; the factor is ``exp(-eps * H / hbar)``.
    """

    energy: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energy, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise SpecError("tabulated energy must be a square matrix")
        if not np.all(np.isfinite(e)):
            raise SpecError("tabulated energy must be finite")


EnergySpec = Union[NonRelativistic, Electromagnetic, DriftDiffusion, MeasurementCoupling, Tabulated]


def free_particle(mass: float = 1.0) -> NonRelativistic:
    return NonRelativistic(mass)


def harmonic(mass: float, kappa: float, center: float = 0.0) -> NonRelativistic:
    """``V(x) = kappa (x - center)^2 / 2`` with analytic derivatives."""
    return NonRelativistic(
        mass,
        potential=lambda x, t: 0.5 * kappa * (x - center) ** 2,
        potential_grad=lambda x, t: kappa * (x - center),
        potential_hess=lambda x, t: np.full_like(np.asarray(x, dtype=float), kappa),
    )


# --------------------------------------------------------------------------
# factors


@dataclass(frozen=True)
class ProductGrid:
    """Product of a system grid and a device grid; flat index ``i * n_dev + j``."""

    system: Grid
    device: Grid

    @property
    def n_points(self) -> int:
        return self.system.n_points * self.device.n_points

    @property
    def dx(self) -> float:
        return self.system.dx * self.device.dx

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        xs, Xs = np.meshgrid(self.system.points, self.device.points, indexing="ij")
        return xs.ravel(), Xs.ravel()


@dataclass(frozen=True, eq=False)
class Factor:
    """Real kernel matrix over a grid."""

    matrix: np.ndarray
    grid: Union[Grid, ProductGrid, None] = None
    includes_normalization: bool = True
    quadrature_weight: float = 1.0
    stoquastic: bool = True
    kind: str = "generic"
    boundary_mass: float = field(default=0.0, compare=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"factor must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("factor entries must be finite")
        if self.stoquastic and np.any(m < 0):
            raise NegativeEntryError(f"{self.kind} factor has negative entries")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def operator(self) -> np.ndarray:
        """Matrix acting on vectors, quadrature weight included."""
        return self.matrix * self.quadrature_weight

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v * self.quadrature_weight

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        return self.matrix.T @ v * self.quadrature_weight

    @property
    def T(self) -> "Factor":
        return replace(self, matrix=self.matrix.T)

    def row_mass(self) -> np.ndarray:
        """``sum_x F(x, x') dx`` for every source ``x'``."""
        return self.matrix.sum(axis=0) * self.quadrature_weight


def matrix_factor(matrix: np.ndarray, weight: float = 1.0, grid=None, stoquastic: bool = True) -> Factor:
    """Wrap a raw matrix (e.g. a discrete-state transfer table) as a Factor."""
    return Factor(np.asarray(matrix, dtype=float), grid, False, weight, stoquastic, "matrix")


def energy_nonrel(x_next, x, spec: NonRelativistic, epsilon: float, t: float = 0.0):
    """``(m/2)((x_next - x)/eps)^2 + [V(x) + V(x_next)]/2``."""
    if not epsilon > 0:
        raise NonPositiveEpsilonError("epsilon must be > 0")
    x_next = np.asarray(x_next, dtype=float)
    x = np.asarray(x, dtype=float)
    kinetic = 0.5 * spec.mass * ((x_next - x) / epsilon) ** 2
    return kinetic + 0.5 * (spec.V(x, t) + spec.V(x_next, t))


def build_em_energy(x_next, x, spec: Electromagnetic, epsilon: float, t: float = 0.0):
    """Real energy of a step for a charged particle.

    Positions carry a trailing spatial axis.  Potentials are sampled at the
    midpoint; the squared vector potential term stands in for the Gaussian
    average of the second-order phase.
    """
    if not epsilon > 0:
        raise NonPositiveEpsilonError("epsilon must be > 0")
    x_next = np.asarray(x_next, dtype=float)
    x = np.asarray(x, dtype=float)
    velocity = (x_next - x) / epsilon
    mid = 0.5 * (x_next + x)
    energy = 0.5 * spec.mass * np.sum(velocity**2, axis=-1)
    if spec.scalar_potential is not None:
        energy = energy + np.asarray(spec.scalar_potential(mid, t), dtype=float)
    if spec.vector_potential is not None:
        A = np.broadcast_to(np.asarray(spec.vector_potential(mid, t), dtype=float), mid.shape)
        energy = energy + (spec.charge / spec.c) * np.sum(velocity * A, axis=-1)
        energy = energy + spec.charge**2 / (spec.mass * spec.c**2) * np.sum(A**2, axis=-1)
    return energy


def energy_drift(y_next, y, spec: DriftDiffusion, epsilon: float):
    """``gamma/2 (u/eps)^2 - gamma v u/eps + gamma v^2/2`` with ``u = y_next - y``."""
    u = (np.asarray(y_next, dtype=float) - np.asarray(y, dtype=float)) / epsilon
    g, v = spec.gamma, spec.drift
    return 0.5 * g * u**2 - g * v * u + 0.5 * g * v**2


def energy_measurement(dx_sys, dX_dev, spec: MeasurementCoupling, epsilon: float):
    """Joint step energy with (1 - a^2)-renormalized masses and a cross term."""
    m, M, a = spec.system_mass, spec.device_mass, spec.coupling
    r = 1.0 - a * a
    u = np.asarray(dx_sys, dtype=float) / epsilon
    w = np.asarray(dX_dev, dtype=float) / epsilon
    return 0.5 * m / r * u**2 + 0.5 * M / r * w**2 - a * math.sqrt(m * M) / r * u * w


def kernel_width(spec: EnergySpec, epsilon: float, hbar_cycle: float = 1.0) -> float:
    """Standard deviation of the kinetic Gaussian for one step."""
    if isinstance(spec, (NonRelativistic, Electromagnetic)):
        return math.sqrt(hbar_cycle * epsilon / spec.mass)
    if isinstance(spec, DriftDiffusion):
        return math.sqrt(spec.h_diff * epsilon / spec.gamma)
    raise SpecError(f"no kinetic width for {type(spec).__name__}")


def boundary_mass(width: float, grid: Grid, offset: float = 0.0) -> float:
    """Gaussian mass leaving the grid for a step started at the grid center.

    ``offset`` shifts the Gaussian center (drift kernels).
    """
    half = 0.5 * grid.length
    s2 = width * math.sqrt(2.0)
    return 0.5 * math.erfc((half - offset) / s2) + 0.5 * math.erfc((half + offset) / s2)


def _check_boundary(mass: float, strict: bool, what: str) -> None:
    if mass < BOUNDARY_MASS_LIMIT:
        return
    msg = f"{what}: boundary mass {mass:.3e} exceeds {BOUNDARY_MASS_LIMIT:.0e}; widen the grid"
    if strict:
        raise BoundaryMassError(msg)
    warnings.warn(msg, BoundaryMassWarning, stacklevel=3)


def build_factor(
    spec: EnergySpec,
    grid: Union[Grid, ProductGrid],
    epsilon: float,
    hbar_cycle: float = 1.0,
    t: float = 0.0,
    strict: bool = False,
) -> Factor:
    """``F(x, x') = exp(-eps * H(x, x') / hbar) / Z_eps``.

    ``Z_eps = sqrt(2 pi hbar eps / m_eff)`` with the kinetic mass of the energy model.
    Drift-diffusion kernels use ``h_diff`` in place of ``hbar``.
    """
    if not epsilon > 0:
        raise NonPositiveEpsilonError(f"epsilon must be > 0, got {epsilon}")
    if not hbar_cycle > 0:
        raise SpecError(f"hbar_cycle must be > 0, got {hbar_cycle}")

    if isinstance(spec, MeasurementCoupling):
        if not isinstance(grid, ProductGrid):
            raise DimensionError("measurement coupling needs a ProductGrid")
        return measurement_kernel(spec, grid.system, grid.device, epsilon, hbar_cycle, strict)

    if isinstance(spec, Tabulated):
        table = np.asarray(spec.energy, dtype=float)
        if table.shape[0] != grid.n_points:
            raise DimensionError("tabulated energy does not match the grid")
        F = np.exp(-epsilon * table / hbar_cycle)
        return Factor(F, grid, False, grid.dx, True, "tabulated")

    x = grid.points
    X_next, X = x[:, None], x[None, :]

    if isinstance(spec, NonRelativistic):
        H = energy_nonrel(X_next, X, spec, epsilon, t)
        Z = math.sqrt(2 * math.pi * hbar_cycle * epsilon / spec.mass)
        F = np.exp(-epsilon * H / hbar_cycle) / Z
        leak = boundary_mass(kernel_width(spec, epsilon, hbar_cycle), grid)
        _check_boundary(leak, strict, "non-relativistic factor")
        return Factor(F, grid, True, grid.dx, True, "nonrelativistic", leak)

    if isinstance(spec, Electromagnetic):
        H = build_em_energy(X_next[..., None], X[..., None], spec, epsilon, t)
        Z = math.sqrt(2 * math.pi * hbar_cycle * epsilon / spec.mass)
        F = np.exp(-epsilon * H / hbar_cycle) / Z
        leak = boundary_mass(kernel_width(spec, epsilon, hbar_cycle), grid)
        _check_boundary(leak, strict, "electromagnetic factor")
        return Factor(F, grid, True, grid.dx, True, "electromagnetic", leak)

    if isinstance(spec, DriftDiffusion):
        H = energy_drift(X_next, X, spec, epsilon)
        Z = math.sqrt(2 * math.pi * spec.h_diff * epsilon / spec.gamma)
        F = np.exp(-epsilon * H / spec.h_diff) / Z
        leak = boundary_mass(kernel_width(spec, epsilon), grid, spec.drift * epsilon)
        _check_boundary(leak, strict, "drift-diffusion factor")
        return Factor(F, grid, True, grid.dx, True, "drift", leak)

    raise SpecError(f"unsupported energy spec {type(spec).__name__}")


def split_sym_antisym(factor: Factor) -> tuple[Factor, Factor]:
    """``K_s = (F + F^T)/2`` and ``K_a = (F - F^T)/2``."""
    F = factor.matrix
    Ks = replace(factor, matrix=0.5 * (F + F.T), kind=factor.kind + "-sym")
    Ka = replace(factor, matrix=0.5 * (F - F.T), stoquastic=False, kind=factor.kind + "-anti")
    return Ks, Ka


# --------------------------------------------------------------------------
# dynamical matrix


@dataclass(frozen=True, eq=False)
class DynamicalMatrix:
    """``J = (F dx - I)/eps`` split into symmetric and antisymmetric parts."""

    J: np.ndarray
    J_s: np.ndarray
    J_a: np.ndarray
    hbar_cycle: float = 1.0
    step_norm: float = 0.0

    @property
    def H_s(self) -> np.ndarray:
        return -self.hbar_cycle * self.J_s

    @property
    def H_a(self) -> np.ndarray:
        return -self.hbar_cycle * self.J_a

    @property
    def hamiltonian(self) -> np.ndarray:
        """``-hbar (J_s + J_a / i) = -hbar J_s + i hbar J_a``."""
        return self.H_s - 1j * self.H_a


def _from_J(J: np.ndarray, hbar_cycle: float, step_norm: float = 0.0) -> DynamicalMatrix:
    J = np.asarray(J, dtype=float)
    J_s = 0.5 * (J + J.T)
    J_a = 0.5 * (J - J.T)
    return DynamicalMatrix(J_s + J_a, J_s, J_a, hbar_cycle, step_norm)


def dynamical_matrix(factor: Factor, epsilon: float, hbar_cycle: float = 1.0, warn: bool = True) -> DynamicalMatrix:
    if not epsilon > 0:
        raise NonPositiveEpsilonError("epsilon must be > 0")
    W = factor.operator
    D = W - np.eye(W.shape[0])
    step_norm = float(np.linalg.norm(D, 2))
    if warn and step_norm >= 0.5:
        warnings.warn(
            f"||F - I|| = {step_norm:.3g} >= 0.5; first-order expansion is coarse",
            IllConditionedWarning,
            stacklevel=2,
        )
    return _from_J(D / epsilon, hbar_cycle, step_norm)


def dynamical_from_hamiltonian(H: np.ndarray, hbar_cycle: float = 1.0) -> DynamicalMatrix:
    """Inverse of ``H = -hbar J_s + i hbar J_a`` for a Hermitian ``H``."""
    H = np.asarray(H, dtype=complex)
    J_s = -H.real / hbar_cycle
    J_a = H.imag / hbar_cycle
    return DynamicalMatrix(J_s + J_a, J_s, J_a, hbar_cycle)


# --------------------------------------------------------------------------
# two-level truncation


SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]])


@dataclass(frozen=True)
class TwoLevelParams:
    """Two lowest levels ``E0 < E1`` driven by ``D cos(omega t)``."""

    E0: float
    E1: float
    omega: float
    D: float
    hbar: float = 1.0

    def __post_init__(self):
        if not self.omega0 > 0:
            raise SpecError("transition frequency must be > 0 (E1 > E0)")

    @property
    def omega0(self) -> float:
        return (self.E1 - self.E0) / self.hbar


def truncate_two_level(params: TwoLevelParams, t: float) -> np.ndarray:
    """``Ebar I - (hbar omega0 / 2) sigma_z + D cos(omega t) sigma_x``."""
    E_bar = 0.5 * (params.E0 + params.E1)
    return (
        E_bar * np.eye(2)
        - 0.5 * params.hbar * params.omega0 * SIGMA_Z
        + params.D * math.cos(params.omega * t) * SIGMA_X
    )


def two_level_factor(params: TwoLevelParams, t: float, epsilon: float) -> Factor:
    """First-order factor ``I - eps H_eff / hbar``; may carry negative entries."""
    H = truncate_two_level(params, t)
    return Factor(np.eye(2) - epsilon * H / params.hbar, None, False, 1.0, False, "two-level")


# --------------------------------------------------------------------------
# measurement coupling


def measurement_covariance(spec: MeasurementCoupling, epsilon: float, hbar_cycle: float = 1.0) -> np.ndarray:
    m, M, a = spec.system_mass, spec.device_mass, spec.coupling
    off = a / math.sqrt(m * M)
    return hbar_cycle * epsilon * np.array([[1.0 / m, off], [off, 1.0 / M]])


def induced_coupling(spec: MeasurementCoupling) -> float:
    """Coefficient ``g`` of ``g p P`` generated by the coupled kernel.

    With ``p = -i hbar d/dx`` the cross moment ``<dx dX> = hbar eps a/sqrt(mM)``
    yields ``g = a / sqrt(m M)``.
    """
    return spec.coupling / math.sqrt(spec.system_mass * spec.device_mass)


def measurement_kernel(
    spec: MeasurementCoupling,
    grid_sys: Grid,
    grid_dev: Grid,
    epsilon: float,
    hbar_cycle: float = 1.0,
    strict: bool = False,
) -> Factor:
    """Joint Gaussian kernel on the product grid."""
    if not abs(spec.coupling) < 1:
        raise CouplingRangeError(f"|a| must be < 1, got {spec.coupling}")
    pg = ProductGrid(grid_sys, grid_dev)
    xs, Xs = pg.coordinates()
    H = energy_measurement(xs[:, None] - xs[None, :], Xs[:, None] - Xs[None, :], spec, epsilon)
    C = measurement_covariance(spec, epsilon, hbar_cycle)
    Z = 2 * math.pi * math.sqrt(np.linalg.det(C))
    F = np.exp(-epsilon * H / hbar_cycle) / Z
    leak = max(
        boundary_mass(math.sqrt(C[0, 0]), grid_sys),
        boundary_mass(math.sqrt(C[1, 1]), grid_dev),
    )
    _check_boundary(leak, strict, "measurement kernel")
    return Factor(F, pg, True, pg.dx, True, "measurement", leak)


def kernel_moments(factor: Factor, source: int) -> tuple[np.ndarray, np.ndarray]:
    """First and raw second moments of the step ``(x - x', X - X')`` out of one source node."""
    pg = factor.grid
    if not isinstance(pg, ProductGrid):
        raise DimensionError("kernel_moments needs a product-grid factor")
    xs, Xs = pg.coordinates()
    w = factor.matrix[:, source] * factor.quadrature_weight
    d = np.stack([xs - xs[source], Xs - Xs[source]])
    mass = w.sum()
    return d @ w / mass, (d * w) @ d.T / mass
