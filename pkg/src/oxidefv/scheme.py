"""Fully implicit time stepping of the moving-boundary scheme.

Each step solves a nonlinear system in the unknowns (u_0, ..., u_{I+1},
X0, X1, L): I interior balances with exponential-fitting two-point fluxes,
the two boundary flux conditions, the two interface motion laws and the
width closure.  Newton iteration with an analytic Jacobian and a
bordered-banded linear solve does the work; a lambda-continuation solver
starting from an explicitly solvable system serves as fallback.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import solve_banded

from .bernoulli import bernoulli, bernoulli_prime
from .core import (
    InitialMode,
    Mesh,
    ModelParams,
    State,
    Termination,
    TerminationKind,
    TimeGrid,
    Trajectory,
    discretize_initial,
)

# Continuation schedules double until this many lambda increments.
HOMOTOPY_MAX_STEPS = 1024
# A converged Newton point must also satisfy the equations to this residual
# sup-norm; otherwise the iteration merely stalled (e.g. pinned at the
# width floor during a collapse).
_STALL_RESIDUAL = 1e-6
_MAX_HALVINGS = 30


@dataclass(frozen=True)
class SolverOptions:
    """Newton / continuation controls.

    width_floor None means 1e-8 * L0, resolved per problem.
    """

    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    homotopy_steps: int = 16
    width_floor: float | None = None

    def __post_init__(self):
        if self.newton_tol <= 0.0:
            raise ValueError("newton_tol must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be at least 1")
        if self.homotopy_steps < 1:
            raise ValueError("homotopy_steps must be at least 1")
        if self.width_floor is not None and self.width_floor <= 0.0:
            raise ValueError("width_floor must be positive")

    def resolved_floor(self, params: ModelParams) -> float:
        return self.width_floor if self.width_floor is not None else 1e-8 * params.L0


class StepStatus(Enum):
    CONVERGED = "converged"
    NO_CONVERGENCE = "no_convergence"
    WIDTH_COLLAPSED = "width_collapsed"


@dataclass(frozen=True)
class StepResult:
    """Outcome of one nonlinear solve: the new state on success, the
    iteration count, and the final residual sup-norm."""

    state: State | None
    status: StepStatus
    iterations: int
    residual_inf: float


def velocities(prev: State, nxt: State, mesh: Mesh, dt: float, R: float) -> np.ndarray:
    """Edge velocities of the moving frame mapped onto [0, 1], one per edge:
    (1 - R) d[X1] - xi_edge * d[L] - d[X0], with d[f] = (f_next - f_prev)/dt.

    They are affine in the edge coordinate, so consecutive differences
    telescope to -d[L] * h_i exactly.
    """
    if dt <= 0.0:
        raise ValueError("velocities: dt must be positive")
    dX0 = (nxt.X0 - prev.X0) / dt
    dX1 = (nxt.X1 - prev.X1) / dt
    dL = (nxt.L - prev.L) / dt
    return (1.0 - R) * dX1 - mesh.edges * dL - dX0


def sg_flux(u_left, u_right, v, L, h_edge):
    """Exponential-fitting flux through one edge:
    (B(-L h v) u_left - B(L h v) u_right) / (L h).

    Reduces to central diffusion (u_left - u_right) / (L h) when v = 0 and
    vanishes identically on exponential steady profiles.
    """
    L = np.asarray(L, dtype=float)
    h_edge = np.asarray(h_edge, dtype=float)
    if np.any(L <= 0.0):
        raise ValueError("sg_flux: width L must be positive")
    if np.any(h_edge <= 0.0):
        raise ValueError("sg_flux: edge gap must be positive")
    w = L * h_edge * np.asarray(v, dtype=float)
    value = (bernoulli(-w) * u_left - bernoulli(w) * u_right) / (L * h_edge)
    return float(value) if np.ndim(value) == 0 else value


# ---------------------------------------------------------------------------
# Direct scheme: residual, Jacobian, Newton
# ---------------------------------------------------------------------------


def _edge_fields(u, X0, X1, L, prev: State, mesh: Mesh, dt: float, params: ModelParams):
    """Velocities, Peclet arguments, Bernoulli weights and fluxes per edge."""
    dX0 = (X0 - prev.X0) / dt
    dX1 = (X1 - prev.X1) / dt
    dL = (L - prev.L) / dt
    v = (1.0 - params.R) * dX1 - mesh.edges * dL - dX0
    w = (L * mesh.gaps) * v
    Bp = bernoulli(w)
    Bm = bernoulli(-w)
    F = (Bm * u[:-1] - Bp * u[1:]) / (L * mesh.gaps)
    return v, w, Bp, Bm, F


def _residual_raw(u, X0, X1, L, prev: State, mesh: Mesh, dt: float, params: ModelParams):
    cells = mesh.num_cells
    _, _, _, _, F = _edge_fields(u, X0, X1, L, prev, mesh, dt, params)
    r = np.empty(cells + 5)
    r[:cells] = (
        mesh.cell_sizes * (L * u[1:-1] - prev.L * prev.u[1:-1]) / dt + F[1:] - F[:-1]
    )
    r[cells] = F[0] - params.a + params.b * u[0]
    r[cells + 1] = F[-1]
    r[cells + 2] = (
        (X0 - prev.X0) / dt
        - params.alpha0
        + params.beta0 * u[0]
        - (1.0 - params.R) * (X1 - prev.X1) / dt
    )
    r[cells + 3] = (X1 - prev.X1) / dt + params.alpha1 - params.beta1 * u[-1]
    r[cells + 4] = L - X1 + X0
    return r


def residual(prev: State, cand: State, mesh: Mesh, dt: float, params: ModelParams) -> np.ndarray:
    """Stacked residual of the implicit step, length I+5: the I interior
    balances, the left and right flux conditions, the two interface motion
    laws, and the width closure.  A root defines the next state."""
    if dt <= 0.0:
        raise ValueError("residual: dt must be positive")
    return _residual_raw(cand.u, cand.X0, cand.X1, cand.L, prev, mesh, dt, params)


def _flux_derivatives(u, v, w, Bp, Bm, F, L, mesh: Mesh, dt: float, params: ModelParams):
    """Partial derivatives of each edge flux w.r.t. its neighbors and the
    interface unknowns of the direct scheme."""
    denom = L * mesh.gaps
    dF_ul = Bm / denom
    dF_ur = -Bp / denom
    # dF/dw times L*h; the chain rule factors below keep it compact.
    Nw = -bernoulli_prime(-w) * u[:-1] - bernoulli_prime(w) * u[1:]
    dF_X0 = -Nw / dt
    dF_X1 = Nw * (1.0 - params.R) / dt
    dF_L = Nw * (v / L - mesh.edges / dt) - F / L
    return dF_ul, dF_ur, dF_X0, dF_X1, dF_L


def _jacobian_raw(u, X0, X1, L, prev: State, mesh: Mesh, dt: float, params: ModelParams):
    cells = mesh.num_cells
    n = cells + 5
    v, w, Bp, Bm, F = _edge_fields(u, X0, X1, L, prev, mesh, dt, params)
    dF_ul, dF_ur, dF_X0, dF_X1, dF_L = _flux_derivatives(
        u, v, w, Bp, Bm, F, L, mesh, dt, params
    )
    h = mesh.cell_sizes
    J = np.zeros((n, n))
    cols = np.arange(1, cells + 1)
    rows = cols - 1
    J[rows, cols - 1] = -dF_ul[:-1]
    J[rows, cols] = h * L / dt + dF_ul[1:] - dF_ur[:-1]
    J[rows, cols + 1] = dF_ur[1:]
    J[rows, cells + 2] = dF_X0[1:] - dF_X0[:-1]
    J[rows, cells + 3] = dF_X1[1:] - dF_X1[:-1]
    J[rows, cells + 4] = h * u[1:-1] / dt + dF_L[1:] - dF_L[:-1]

    J[cells, 0] = dF_ul[0] + params.b
    J[cells, 1] = dF_ur[0]
    J[cells, cells + 2] = dF_X0[0]
    J[cells, cells + 3] = dF_X1[0]
    J[cells, cells + 4] = dF_L[0]

    J[cells + 1, cells] = dF_ul[-1]
    J[cells + 1, cells + 1] = dF_ur[-1]
    J[cells + 1, cells + 2] = dF_X0[-1]
    J[cells + 1, cells + 3] = dF_X1[-1]
    J[cells + 1, cells + 4] = dF_L[-1]

    J[cells + 2, 0] = params.beta0
    J[cells + 2, cells + 2] = 1.0 / dt
    J[cells + 2, cells + 3] = -(1.0 - params.R) / dt

    J[cells + 3, cells + 1] = -params.beta1
    J[cells + 3, cells + 3] = 1.0 / dt

    J[cells + 4, cells + 2] = 1.0
    J[cells + 4, cells + 3] = -1.0
    J[cells + 4, cells + 4] = 1.0
    return J


def jacobian(prev: State, cand: State, mesh: Mesh, dt: float, params: ModelParams) -> np.ndarray:
    """Analytic Jacobian of residual() w.r.t. (u_0..u_{I+1}, X0, X1, L),
    a tridiagonal concentration core bordered by three dense rows/columns."""
    if dt <= 0.0:
        raise ValueError("jacobian: dt must be positive")
    return _jacobian_raw(cand.u, cand.X0, cand.X1, cand.L, prev, mesh, dt, params)


def _solve_newton_system(u, X0, X1, L, r, prev, mesh, dt, params):
    """Newton increment via block elimination of the bordered banded system.

    The rows are permuted (left flux condition, interior balances, right
    flux condition) so the concentration block is tridiagonal; the three
    interface unknowns are eliminated through a 3x3 Schur complement.
    Falls back to a dense solve when the band factorization breaks down.
    """
    cells = mesh.num_cells
    m = cells + 2
    v, w, Bp, Bm, F = _edge_fields(u, X0, X1, L, prev, mesh, dt, params)
    dF_ul, dF_ur, dF_X0, dF_X1, dF_L = _flux_derivatives(
        u, v, w, Bp, Bm, F, L, mesh, dt, params
    )
    h = mesh.cell_sizes

    ab = np.zeros((3, m))
    ab[1, 0] = dF_ul[0] + params.b
    ab[0, 1:] = dF_ur
    ab[1, 1 : cells + 1] = h * L / dt + dF_ul[1:] - dF_ur[:-1]
    ab[1, cells + 1] = dF_ur[-1]
    ab[2, :cells] = -dF_ul[:cells]
    ab[2, cells] = dF_ul[-1]

    border = np.empty((m, 3))
    border[0] = (dF_X0[0], dF_X1[0], dF_L[0])
    border[1 : cells + 1, 0] = dF_X0[1:] - dF_X0[:-1]
    border[1 : cells + 1, 1] = dF_X1[1:] - dF_X1[:-1]
    border[1 : cells + 1, 2] = h * u[1:-1] / dt + dF_L[1:] - dF_L[:-1]
    border[cells + 1] = (dF_X0[-1], dF_X1[-1], dF_L[-1])

    D = np.array(
        [
            [1.0 / dt, -(1.0 - params.R) / dt, 0.0],
            [0.0, 1.0 / dt, 0.0],
            [1.0, -1.0, 1.0],
        ]
    )

    b_u = np.empty(m)
    b_u[0] = -r[cells]
    b_u[1 : cells + 1] = -r[:cells]
    b_u[cells + 1] = -r[cells + 1]
    b_x = -r[cells + 2 :]

    try:
        sol = solve_banded((1, 1), ab, np.column_stack((b_u, border)))
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("non-finite band solution")
        y = sol[:, 0]
        Y = sol[:, 1:]
        # Border rows act only on u_0 (beta0) and u_{I+1} (-beta1).
        Cy = np.array([params.beta0 * y[0], -params.beta1 * y[-1], 0.0])
        CY = np.vstack(
            (params.beta0 * Y[0], -params.beta1 * Y[-1], np.zeros(3))
        )
        z = np.linalg.solve(D - CY, b_x - Cy)
        du = y - Y @ z
        delta = np.concatenate((du, z))
    except np.linalg.LinAlgError:
        J = _jacobian_raw(u, X0, X1, L, prev, mesh, dt, params)
        delta = np.linalg.solve(J, -r)
    if not np.all(np.isfinite(delta)):
        raise np.linalg.LinAlgError("Newton increment is not finite")
    return delta


def _damped_substep(u, L, du, dL, floor, enforce_positivity=True):
    """Step fraction keeping the width above the floor and (optionally) the
    concentrations nonnegative: fraction-to-the-boundary backoff, never
    closer than 0.5% to a constraint and never smaller than
    2^-_MAX_HALVINGS.  Returns (fraction, width_blocked) or
    (None, width_blocked) when fully stalled."""
    t_width = np.inf
    if dL < 0.0:
        t_width = (L - floor) / (-dL)
    t_pos = np.inf
    if enforce_positivity:
        neg = du < 0.0
        if np.any(neg):
            t_pos = float(np.min(u[neg] / (-du[neg])))
    t = min(1.0, 0.995 * t_width, 0.995 * t_pos)
    width_blocked = t < 1.0 and t_width <= t_pos
    if t <= 2.0**-_MAX_HALVINGS:
        return None, width_blocked
    return t, width_blocked


def newton_step_solve(
    prev: State,
    mesh: Mesh,
    dt: float,
    params: ModelParams,
    opts: SolverOptions = SolverOptions(),
) -> StepResult:
    """Advance one time step with damped Newton from the previous state.

    Terminates when the applied increment drops below newton_tol in the
    sup norm; the final residual sup-norm is reported.  Steps that would
    push the width to the floor or a concentration negative are cut back
    to a fraction of the distance to the constraint.
    """
    floor = opts.resolved_floor(params)
    u = prev.u.copy()
    X0, X1, L = prev.X0, prev.X1, prev.L
    cells = mesh.num_cells
    converged = False
    iters = 0

    for iters in range(1, opts.max_newton_iters + 1):
        r = _residual_raw(u, X0, X1, L, prev, mesh, dt, params)
        if not np.all(np.isfinite(r)):
            return StepResult(None, StepStatus.NO_CONVERGENCE, iters - 1, np.inf)
        try:
            delta = _solve_newton_system(u, X0, X1, L, r, prev, mesh, dt, params)
        except np.linalg.LinAlgError:
            return StepResult(
                None, StepStatus.NO_CONVERGENCE, iters - 1, float(np.abs(r).max())
            )
        du = delta[: cells + 2]
        dX0, dX1, dL = delta[cells + 2 :]
        t, width_blocked = _damped_substep(u, L, du, dL, floor)
        if t is None:
            status = StepStatus.WIDTH_COLLAPSED if width_blocked else StepStatus.NO_CONVERGENCE
            return StepResult(None, status, iters, float(np.abs(r).max()))
        u = u + t * du
        X0 += t * dX0
        X1 += t * dX1
        L += t * dL
        if t * float(np.abs(delta).max()) <= opts.newton_tol:
            converged = True
            break

    r = _residual_raw(u, X0, X1, L, prev, mesh, dt, params)
    resid_inf = float(np.abs(r).max())
    if not converged:
        return StepResult(None, StepStatus.NO_CONVERGENCE, iters, resid_inf)
    if resid_inf > _STALL_RESIDUAL:
        status = (
            StepStatus.WIDTH_COLLAPSED if L <= 10.0 * floor else StepStatus.NO_CONVERGENCE
        )
        return StepResult(None, status, iters, resid_inf)
    if L <= floor:
        return StepResult(None, StepStatus.WIDTH_COLLAPSED, iters, resid_inf)
    state = State(u=u, X0=X0, X1=X1, L=L)
    return StepResult(state, StepStatus.CONVERGED, iters, resid_inf)


# ---------------------------------------------------------------------------
# Continuation fallback
# ---------------------------------------------------------------------------


def _homotopy_edge_fields(u, X1, L, prev: State, mesh: Mesh, dt: float, params: ModelParams):
    """Edge quantities of the lambda-parameterized system, whose velocity is
    written in terms of u_0 and X1 only (X0 is reconstructed afterwards)."""
    xi = mesh.edges
    dX1 = (X1 - prev.X1) / dt
    v = -params.R * dX1 * xi + (1.0 - xi) * (params.beta0 * u[0] - params.alpha0)
    w = (L * mesh.gaps) * v
    Bp = bernoulli(w)
    Bm = bernoulli(-w)
    F = (Bm * u[:-1] - Bp * u[1:]) / (L * mesh.gaps)
    return v, w, Bp, Bm, F


def _homotopy_residual(u, X1, L, lam, prev: State, mesh: Mesh, dt: float, params: ModelParams):
    cells = mesh.num_cells
    _, _, _, _, F = _homotopy_edge_fields(u, X1, L, prev, mesh, dt, params)
    h = mesh.cell_sizes
    r = np.empty(cells + 4)
    r[0] = lam * (F[0] - params.a + params.b * u[0]) + (1.0 - lam) * (
        params.beta0 * u[0] - params.alpha0
    )
    r[1 : cells + 1] = (
        (lam * (L - prev.L) * u[1:-1] + prev.L * (u[1:-1] - prev.u[1:-1])) * h / dt
        + lam * (F[1:] - F[:-1])
    )
    r[cells + 1] = lam * F[-1] + (1.0 - lam) * (params.beta1 * u[-1] - params.alpha1)
    r[cells + 2] = (
        params.R * (X1 - prev.X1) / dt
        - (L - prev.L) / dt
        - params.alpha0
        + params.beta0 * u[0]
    )
    r[cells + 3] = (X1 - prev.X1) / dt + params.alpha1 - params.beta1 * u[-1]
    return r


def _homotopy_jacobian(u, X1, L, lam, prev: State, mesh: Mesh, dt: float, params: ModelParams):
    cells = mesh.num_cells
    n = cells + 4
    xi = mesh.edges
    v, w, Bp, Bm, F = _homotopy_edge_fields(u, X1, L, prev, mesh, dt, params)
    denom = L * mesh.gaps
    dF_ul = Bm / denom
    dF_ur = -Bp / denom
    Nw = -bernoulli_prime(-w) * u[:-1] - bernoulli_prime(w) * u[1:]
    dF_u0 = Nw * (1.0 - xi) * params.beta0  # through the velocity
    dF_X1 = -Nw * params.R * xi / dt
    dF_L = (Nw * v - F) / L
    h = mesh.cell_sizes

    J = np.zeros((n, n))
    J[0, 0] = lam * (dF_ul[0] + dF_u0[0] + params.b) + (1.0 - lam) * params.beta0
    J[0, 1] = lam * dF_ur[0]
    J[0, cells + 2] = lam * dF_X1[0]
    J[0, cells + 3] = lam * dF_L[0]

    rows = np.arange(1, cells + 1)
    J[rows[1:], rows[1:] - 1] = -lam * dF_ul[1:cells]
    J[rows, rows] += (lam * (L - prev.L) + prev.L) * h / dt
    J[rows, rows] += lam * (dF_ul[1:] - dF_ur[:-1])
    # the i = 1 row's left-neighbor flux derivative acts on u_0
    J[1, 0] += -lam * dF_ul[0]
    J[rows, rows + 1] += lam * dF_ur[1:]
    J[rows, 0] += lam * (dF_u0[1:] - dF_u0[:-1])
    J[rows, cells + 2] += lam * (dF_X1[1:] - dF_X1[:-1])
    J[rows, cells + 3] += lam * (u[1:-1] * h / dt + dF_L[1:] - dF_L[:-1])

    J[cells + 1, cells] = lam * dF_ul[-1]
    J[cells + 1, cells + 1] = lam * dF_ur[-1] + (1.0 - lam) * params.beta1
    J[cells + 1, 0] += lam * dF_u0[-1]
    J[cells + 1, cells + 2] = lam * dF_X1[-1]
    J[cells + 1, cells + 3] = lam * dF_L[-1]

    J[cells + 2, 0] = params.beta0
    J[cells + 2, cells + 2] = params.R / dt
    J[cells + 2, cells + 3] = -1.0 / dt

    J[cells + 3, cells + 1] = -params.beta1
    J[cells + 3, cells + 2] = 1.0 / dt
    return J


def _homotopy_correct(u, X1, L, lam, prev, mesh, dt, params, opts, floor):
    """Newton-correct the lambda-system at fixed lambda (dense solve).

    Returns ((u, X1, L) or None, width_blocked, iterations)."""
    cells = mesh.num_cells
    iters = 0
    for iters in range(1, opts.max_newton_iters + 1):
        r = _homotopy_residual(u, X1, L, lam, prev, mesh, dt, params)
        if not np.all(np.isfinite(r)):
            return None, False, iters
        J = _homotopy_jacobian(u, X1, L, lam, prev, mesh, dt, params)
        try:
            delta = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            # a lambda grid point can make one boundary coefficient
            # degenerate; the minimum-norm step keeps the path moving
            delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        if not np.all(np.isfinite(delta)):
            return None, False, iters
        du = delta[: cells + 2]
        dX1, dL = delta[cells + 2 :]
        # The intermediate lambda systems are solver scaffolding: their
        # solution branch may leave the positive cone, so only the width
        # stays floored here; the final state is validated at lambda = 1.
        t, width_blocked = _damped_substep(u, L, du, dL, floor, enforce_positivity=False)
        if t is None:
            return None, width_blocked, iters
        u = u + t * du
        X1 += t * dX1
        L += t * dL
        if t * float(np.abs(delta).max()) <= opts.newton_tol:
            return (u, X1, L), False, iters
    return None, False, iters


def homotopy_solve(
    prev: State,
    mesh: Mesh,
    dt: float,
    params: ModelParams,
    opts: SolverOptions = SolverOptions(),
) -> StepResult:
    """Continuation fallback: follow the lambda-parameterized family from
    its explicitly solvable member at lambda = 0 (previous interior
    concentrations, boundary traces at the kinetic ratios, frozen
    interfaces) to the full scheme at lambda = 1, Newton-correcting at each
    increment.  The schedule doubles on failure up to a fixed cap.  X0 is
    reconstructed from X1 and L at the end."""
    floor = opts.resolved_floor(params)
    cells = mesh.num_cells
    steps = opts.homotopy_steps
    schedule_cap = max(HOMOTOPY_MAX_STEPS, opts.homotopy_steps)
    width_collapse_seen = False

    while steps <= schedule_cap:
        u = prev.u.copy()
        u[0] = params.alpha0 / params.beta0
        u[-1] = params.alpha1 / params.beta1
        X1, L = prev.X1, prev.L
        total_iters = 0
        failed = False
        for k in range(1, steps + 1):
            lam = k / steps
            corrected, width_blocked, used = _homotopy_correct(
                u, X1, L, lam, prev, mesh, dt, params, opts, floor
            )
            total_iters += used
            if corrected is None:
                width_collapse_seen = width_collapse_seen or width_blocked
                failed = True
                break
            u, X1, L = corrected
        if not failed:
            X0 = X1 - L
            r = _residual_raw(u, X0, X1, L, prev, mesh, dt, params)
            resid_inf = float(np.abs(r).max())
            if resid_inf > _STALL_RESIDUAL:
                status = (
                    StepStatus.WIDTH_COLLAPSED
                    if L <= 10.0 * floor
                    else StepStatus.NO_CONVERGENCE
                )
                return StepResult(None, status, total_iters, resid_inf)
            if L <= floor:
                return StepResult(None, StepStatus.WIDTH_COLLAPSED, total_iters, resid_inf)
            # roundoff may leave a trace infinitesimally negative
            u = np.where((u < 0.0) & (u > -1e-12), 0.0, u)
            if np.any(u < 0.0):
                return StepResult(None, StepStatus.NO_CONVERGENCE, total_iters, resid_inf)
            state = State(u=u, X0=X0, X1=X1, L=L)
            return StepResult(state, StepStatus.CONVERGED, total_iters, resid_inf)
        steps *= 2

    status = (
        StepStatus.WIDTH_COLLAPSED if width_collapse_seen else StepStatus.NO_CONVERGENCE
    )
    return StepResult(None, status, 0, np.inf)


# ---------------------------------------------------------------------------
# Time loop
# ---------------------------------------------------------------------------


def run(
    params: ModelParams,
    mesh: Mesh,
    time_grid: TimeGrid,
    opts: SolverOptions = SolverOptions(),
    initial_mode: InitialMode = InitialMode.CELL_AVERAGE,
    initial_state: State | None = None,
    stride: int = 1,
) -> Trajectory:
    """Iterate the implicit step over the time grid, escalating failed
    Newton solves to the continuation solver, and stopping early when the
    width collapses to the floor.

    stride > 1 thins storage (step 0 and the last reached step are always
    kept); per-step diagnostics require the default stride of 1.
    """
    if stride < 1:
        raise ValueError("run: stride must be at least 1")
    floor = opts.resolved_floor(params)
    first = (
        initial_state
        if initial_state is not None
        else discretize_initial(params, mesh, initial_mode)
    )
    if first.num_cells != mesh.num_cells:
        raise ValueError("run: initial state does not match the mesh")

    states = [first]
    stored_steps = [0]
    newton_iters: list[int] = []
    residuals: list[float] = []
    termination = Termination(TerminationKind.COMPLETED)
    prev = first
    last_result: tuple[State, int, int, float] | None = None

    def store(state, n, iters, resid):
        states.append(state)
        stored_steps.append(n)
        newton_iters.append(iters)
        residuals.append(resid)

    for n in range(1, time_grid.n_steps + 1):
        result = newton_step_solve(prev, mesh, time_grid.dt, params, opts)
        if result.status is not StepStatus.CONVERGED:
            fallback = homotopy_solve(prev, mesh, time_grid.dt, params, opts)
            if fallback.status is StepStatus.CONVERGED:
                result = fallback
            else:
                collapse = StepStatus.WIDTH_COLLAPSED in (result.status, fallback.status)
                termination = Termination(
                    TerminationKind.WIDTH_COLLAPSED if collapse else TerminationKind.SOLVER_FAILED,
                    step=n,
                )
                if stored_steps[-1] != n - 1 and last_result is not None:
                    store(*last_result)
                break
        state = result.state
        if state.closure_defect() > 1e-6 * max(1.0, state.L):
            termination = Termination(TerminationKind.SOLVER_FAILED, step=n)
            break
        prev = state
        last_result = (state, n, result.iterations, result.residual_inf)
        if n % stride == 0 or n == time_grid.n_steps:
            store(*last_result)
        if state.L <= 2.0 * floor:
            if stored_steps[-1] != n:
                store(*last_result)
            termination = Termination(TerminationKind.WIDTH_COLLAPSED, step=n)
            break

    return Trajectory(
        states=tuple(states),
        time_grid=time_grid,
        termination=termination,
        step_indices=tuple(stored_steps),
        newton_iters=tuple(newton_iters),
        residual_inf=tuple(residuals),
    )
