"""Position grids, time meshes and Riemann quadrature."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateRangeError, GridSizeError, NonPositiveEpsilonError


@dataclass(frozen=True)
class Grid:
    """Uniform 1-D grid with ``n_points`` nodes from ``x_min`` to ``x_max``.

    Node ``i`` sits at ``x_min + i * dx``.  Every node carries the same
    quadrature weight ``dx``.
    """

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise DegenerateRangeError(
                f"x_max ({self.x_max}) must exceed x_min ({self.x_min})"
            )
        if self.n_points < 2:
            raise GridSizeError(f"n_points must be >= 2, got {self.n_points}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @cached_property
    def points(self) -> np.ndarray:
        pts = self.x_min + np.arange(self.n_points) * self.dx
        pts.setflags(write=False)
        return pts

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_points, self.dx)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    def point(self, i: int) -> float:
        if not 0 <= i < self.n_points:
            raise IndexError(f"grid index {i} out of range [0, {self.n_points})")
        return self.x_min + i * self.dx

    def nearest_index(self, x: float) -> int:
        i = int(round((x - self.x_min) / self.dx))
        return min(max(i, 0), self.n_points - 1)

    def index_of(self, x: float, tol: float = 1e-9) -> int | None:
        """Index of the node at ``x`` or ``None`` when ``x`` is off-grid."""
        i = self.nearest_index(x)
        if abs(self.point(i) - x) <= tol * max(self.dx, 1.0):
            return i
        return None

    def integrate(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        return np.sum(values, axis=axis) * self.dx


@dataclass(frozen=True)
class TimeMesh:
    """Time stepping for a cycle of ``k = 2n`` factors and duration ``(k+1)eps``."""

    epsilon: float
    n_steps: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise NonPositiveEpsilonError(f"epsilon must be > 0, got {self.epsilon}")
        if self.n_steps < 1:
            raise GridSizeError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def cycle_steps(self) -> int:
        return 2 * self.n_steps

    @property
    def total_T(self) -> float:
        return (self.cycle_steps + 1) * self.epsilon

    def times(self) -> np.ndarray:
        return np.arange(self.cycle_steps + 1) * self.epsilon


def make_grid(x_min: float, x_max: float, n_points: int) -> Grid:
    return Grid(float(x_min), float(x_max), int(n_points))


def make_time_mesh(epsilon: float, n_steps: int) -> TimeMesh:
    return TimeMesh(float(epsilon), int(n_steps))


def discrete_grid(n_states: int) -> Grid:
    """Grid over ``n_states`` labelled states with unit weight."""
    return make_grid(0, n_states - 1, n_states)
