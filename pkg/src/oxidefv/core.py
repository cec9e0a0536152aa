"""Shared domain types: model parameters, reference mesh, time grid,
discrete states and trajectories.

All types are immutable snapshots after construction and safe to share
across threads.  The moving domain [X0(t), X1(t)] is mapped onto the fixed
reference interval [0, 1]; a state therefore carries the cell and boundary
concentrations on the reference mesh plus the interface positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

# 3-point Gauss-Legendre rule on [-1, 1], used to average profiles without
# a closed-form antiderivative.
_GAUSS3_NODES = np.array([-0.7745966692414834, 0.0, 0.7745966692414834])
_GAUSS3_WEIGHTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


@dataclass(frozen=True)
class ExponentialProfile:
    """Initial concentration profile c1 * exp(c2 * x) + c3."""

    c1: float
    c2: float
    c3: float

    def __call__(self, x):
        return self.c1 * np.exp(self.c2 * np.asarray(x, dtype=float)) + self.c3

    def average(self, x_lo: float, x_hi: float) -> float:
        """Exact mean value over [x_lo, x_hi] via the antiderivative."""
        width = x_hi - x_lo
        if width <= 0.0:
            raise ValueError("average: interval must have positive width")
        z = self.c2 * width
        if z == 0.0:
            exp_part = self.c1 * np.exp(self.c2 * x_lo)
        else:
            # (e^{c2 x_hi} - e^{c2 x_lo}) / (c2 w) = e^{c2 x_lo} expm1(z) / z
            exp_part = self.c1 * np.exp(self.c2 * x_lo) * np.expm1(z) / z
        return float(exp_part + self.c3)

    def integral(self, x_lo: float, x_hi: float) -> float:
        return self.average(x_lo, x_hi) * (x_hi - x_lo)

    def bounds(self, x_lo: float, x_hi: float) -> tuple[float, float]:
        """(inf, sup) over [x_lo, x_hi]; the profile is monotone."""
        lo = float(self(x_lo))
        hi = float(self(x_hi))
        return (min(lo, hi), max(lo, hi))


@dataclass(frozen=True)
class TabulatedProfile:
    """Piecewise-linear interpolation of sampled initial data."""

    x: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.x) != len(self.values) or len(self.x) < 2:
            raise ValueError("tabulated profile needs matching x/values, at least 2 samples")
        if np.any(np.diff(self.x) <= 0.0):
            raise ValueError("tabulated profile abscissae must be strictly increasing")

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.x, self.values)

    def average(self, x_lo: float, x_hi: float) -> float:
        width = x_hi - x_lo
        if width <= 0.0:
            raise ValueError("average: interval must have positive width")
        mid = 0.5 * (x_lo + x_hi)
        pts = mid + 0.5 * width * _GAUSS3_NODES
        return float(np.dot(_GAUSS3_WEIGHTS, self(pts)) / 2.0)

    def integral(self, x_lo: float, x_hi: float) -> float:
        return self.average(x_lo, x_hi) * (x_hi - x_lo)

    def bounds(self, x_lo: float, x_hi: float) -> tuple[float, float]:
        xs = np.asarray(self.x)
        if x_lo < xs[0] or x_hi > xs[-1]:
            raise ValueError("tabulated profile does not cover the requested interval")
        inside = (xs > x_lo) & (xs < x_hi)
        cands = np.concatenate(([self(x_lo)], np.asarray(self.values)[inside], [self(x_hi)]))
        return (float(cands.min()), float(cands.max()))


InitialProfile = Union[ExponentialProfile, TabulatedProfile]


@dataclass(frozen=True)
class ModelParams:
    """Kinetic constants, molar-volume ratio, initial width and profile.

    a, b govern the solution-side exchange flux; alpha0/beta0 the
    dissolution speed; alpha1/beta1 the oxidation speed; R is the
    Pilling-Bedworth molar-volume ratio; L0 the initial layer width.
    """

    a: float
    b: float
    alpha0: float
    beta0: float
    alpha1: float
    beta1: float
    R: float
    L0: float
    u_init: InitialProfile

    def __post_init__(self):
        for name in ("a", "b", "alpha0", "beta0", "alpha1", "beta1", "R", "L0"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ValueError(f"ModelParams.{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Partition of the reference interval [0, 1] into cells.

    edges has length I+1 with edges[0] = 0 and edges[-1] = 1.  centers has
    length I+2: the two boundary points 0 and 1 plus the I cell midpoints.
    cell_sizes are the I cell widths; gaps are the I+1 distances between
    consecutive centers (boundary points included), pairing each edge with
    the concentrations it connects.
    """

    edges: np.ndarray
    centers: np.ndarray
    cell_sizes: np.ndarray
    gaps: np.ndarray

    def __post_init__(self):
        for arr in (self.edges, self.centers, self.cell_sizes, self.gaps):
            arr.setflags(write=False)

    @classmethod
    def from_edges(cls, edges) -> "Mesh":
        e = np.array(edges, dtype=float)
        if e.ndim != 1 or e.size < 2:
            raise ValueError("mesh needs at least two edges")
        if e[0] != 0.0 or e[-1] != 1.0:
            raise ValueError("mesh edges must start at 0 and end at 1")
        if np.any(np.diff(e) <= 0.0):
            raise ValueError("mesh edges must be strictly increasing")
        centers = np.concatenate(([0.0], 0.5 * (e[:-1] + e[1:]), [1.0]))
        return cls(
            edges=e,
            centers=centers,
            cell_sizes=np.diff(e),
            gaps=np.diff(centers),
        )

    @property
    def num_cells(self) -> int:
        return self.edges.size - 1


def uniform_mesh(cells: int) -> Mesh:
    """Uniform mesh of [0, 1] with the given number of cells (at least 1)."""
    if int(cells) != cells or cells < 1:
        raise ValueError(f"uniform_mesh: cell count must be a positive integer, got {cells!r}")
    return Mesh.from_edges(np.linspace(0.0, 1.0, int(cells) + 1))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time discretization with N steps of size dt up to t_final."""

    dt: float
    n_steps: int
    t_final: float

    def __post_init__(self):
        if self.dt <= 0.0 or not np.isfinite(self.dt):
            raise ValueError("TimeGrid.dt must be positive")
        if self.n_steps < 1:
            raise ValueError("TimeGrid.n_steps must be at least 1")
        defect = abs(self.n_steps * self.dt - self.t_final)
        if defect > 1e-12 * max(1.0, abs(self.t_final)):
            raise ValueError("TimeGrid: n_steps * dt must equal t_final")

    @classmethod
    def from_step(cls, dt: float, n_steps: int) -> "TimeGrid":
        return cls(dt=dt, n_steps=n_steps, t_final=dt * n_steps)

    @classmethod
    def from_horizon(cls, t_final: float, n_steps: int) -> "TimeGrid":
        if n_steps < 1:
            raise ValueError("TimeGrid.n_steps must be at least 1")
        return cls(dt=t_final / n_steps, n_steps=n_steps, t_final=t_final)

    @classmethod
    def from_step_and_horizon(cls, dt: float, t_final: float) -> "TimeGrid":
        if dt <= 0.0:
            raise ValueError("TimeGrid.dt must be positive")
        n = int(round(t_final / dt))
        if n < 1 or abs(n * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
            raise ValueError(f"time step {dt!r} does not divide the horizon {t_final!r}")
        return cls(dt=dt, n_steps=n, t_final=t_final)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True, eq=False)
class State:
    """One time level: concentrations u (length I+2, entries 0 and I+1 are
    the boundary traces), interface positions X0 and X1, and width L."""

    u: np.ndarray
    X0: float
    X1: float
    L: float

    def __post_init__(self):
        arr = np.array(self.u, dtype=float)
        if arr.ndim != 1 or arr.size < 3:
            raise ValueError("State.u must be a 1-d vector of length I+2 with I >= 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("State.u must be finite")
        if np.any(arr < 0.0):
            raise ValueError("State.u must be nonnegative")
        if not (np.isfinite(self.L) and self.L > 0.0):
            raise ValueError("State.L must be strictly positive")
        if not (np.isfinite(self.X0) and np.isfinite(self.X1)):
            raise ValueError("State interfaces must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "u", arr)

    @property
    def num_cells(self) -> int:
        return self.u.size - 2

    def closure_defect(self) -> float:
        """|L - (X1 - X0)|; solvers keep this at their tolerance."""
        return abs(self.L - (self.X1 - self.X0))


class InitialMode(str, Enum):
    """How the initial profile is put on the mesh: exact cell averages, or
    point samples at the cell centers (used to seed travelling waves)."""

    CELL_AVERAGE = "average"
    CENTER_SAMPLE = "sample"


def discretize_initial(
    params: ModelParams,
    mesh: Mesh,
    mode: InitialMode = InitialMode.CELL_AVERAGE,
) -> State:
    """Discretize the initial profile on [0, L0] onto the reference mesh.

    Cell averages are exact for the exponential family and 3-point Gauss
    otherwise; boundary entries are the endpoint traces in both modes.
    """
    profile = params.u_init
    L0 = params.L0
    lo, _ = profile.bounds(0.0, L0)
    if lo < 0.0:
        raise ValueError("initial profile must be nonnegative on [0, L0]")

    mode = InitialMode(mode)
    u = np.empty(mesh.num_cells + 2)
    u[0] = profile(0.0)
    u[-1] = profile(L0)
    if mode is InitialMode.CELL_AVERAGE:
        phys = L0 * mesh.edges
        for i in range(mesh.num_cells):
            u[i + 1] = profile.average(phys[i], phys[i + 1])
    else:
        u[1:-1] = profile(L0 * mesh.centers[1:-1])
    return State(u=u, X0=0.0, X1=L0, L=L0)


class TerminationKind(Enum):
    COMPLETED = "completed"
    WIDTH_COLLAPSED = "width_collapsed"
    SOLVER_FAILED = "solver_failed"


@dataclass(frozen=True)
class Termination:
    """Why a run ended; step is the offending step index when not completed."""

    kind: TerminationKind
    step: int | None = None


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored time levels of one run.

    step_indices maps stored states to time-step indices (0 .. N'); with the
    default storage stride of 1 it is simply 0, 1, ..., N'.  newton_iters
    and residual_inf are aligned with states[1:].
    """

    states: tuple[State, ...]
    time_grid: TimeGrid
    termination: Termination
    step_indices: tuple[int, ...]
    newton_iters: tuple[int, ...]
    residual_inf: tuple[float, ...]

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.step_indices, dtype=float) * self.time_grid.dt

    @property
    def final_state(self) -> State:
        return self.states[-1]

    @property
    def completed(self) -> bool:
        return self.termination.kind is TerminationKind.COMPLETED

    def is_contiguous(self) -> bool:
        ids = self.step_indices
        return all(b - a == 1 for a, b in zip(ids[:-1], ids[1:]))
