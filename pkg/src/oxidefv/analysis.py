"""Quantitative diagnostics and experiment harnesses: distance to the
travelling wave, discrete norms, nested-mesh projection, the grid
refinement study, and post-hoc verification of the scheme's a priori
bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    InitialMode,
    Mesh,
    ModelParams,
    State,
    TimeGrid,
    Trajectory,
    uniform_mesh,
)
from .formatting import format_float
from .scheme import SolverOptions, run, velocities
from .waves import RegimeKind, TravellingWave, classify

_EDGE_MATCH_TOL = 1e-12


def wave_distance(state: State, mesh: Mesh, wave: TravellingWave) -> float:
    """Squared weighted distance L * sum h_i (u_i - u_hat_i)^2 between the
    state and the wave, both rescaled onto [0, 1]; interior cells only.

    The wave is rescaled by mapping its own domain [0, L_hat] onto [0, 1],
    so u_hat_i = u_left * exp(-decay * L_hat * xi_i).
    """
    target = wave.profile_rescaled(mesh.centers[1:-1])
    diff = state.u[1:-1] - target
    return float(state.L * np.dot(mesh.cell_sizes, diff * diff))


def h1_norm(values, mesh: Mesh) -> float:
    """Discrete H1-type norm: consecutive differences over the center gaps
    plus the squared left trace,
    (sum (z_i - z_{i-1})^2 / gap + z_0^2)^(1/2)."""
    z = np.asarray(values, dtype=float)
    if z.size != mesh.num_cells + 2:
        raise ValueError("h1_norm: vector length must be I+2")
    jumps = np.diff(z)
    return float(np.sqrt(np.sum(jumps * jumps / mesh.gaps) + z[0] * z[0]))


def l2_norm(values, mesh: Mesh) -> float:
    """L2 norm of the piecewise-constant reconstruction on [0, 1]
    (interior cells; the boundary points carry no measure)."""
    z = np.asarray(values, dtype=float)
    if z.size != mesh.num_cells + 2:
        raise ValueError("l2_norm: vector length must be I+2")
    return float(np.sqrt(np.dot(mesh.cell_sizes, z[1:-1] * z[1:-1])))


def l2h1_norm(vectors, mesh: Mesh, dt: float) -> float:
    """Space-time norm (sum_n dt * h1_norm(z^n)^2)^(1/2) over the rows."""
    arr = np.asarray(vectors, dtype=float)
    return float(np.sqrt(sum(dt * h1_norm(row, mesh) ** 2 for row in arr)))


@dataclass(frozen=True)
class DiscreteNorms:
    """Norm summary of a trajectory: h1 and l2 of the final concentration
    vector, and the space-time h1 accumulation over all steps."""

    h1: float
    l2h1: float
    l2: float


def trajectory_norms(traj: Trajectory, mesh: Mesh) -> DiscreteNorms:
    vectors = np.stack([s.u for s in traj.states[1:]]) if len(traj.states) > 1 else np.empty((0, mesh.num_cells + 2))
    return DiscreteNorms(
        h1=h1_norm(traj.final_state.u, mesh),
        l2h1=l2h1_norm(vectors, mesh, traj.time_grid.dt),
        l2=l2_norm(traj.final_state.u, mesh),
    )


def _interior_field(traj: Trajectory) -> np.ndarray:
    """Space-time field of interior cell values, one row per time slab
    (slab n carries the step-n state)."""
    if not (traj.completed and traj.is_contiguous()):
        raise ValueError("projection requires a completed trajectory stored with stride 1")
    return np.stack([s.u[1:-1] for s in traj.states[1:]])


def _space_blocks(fine_mesh: Mesh, coarse_mesh: Mesh) -> np.ndarray:
    """Indices of the fine edges that coincide with the coarse edges;
    rejects non-nested meshes."""
    fine = fine_mesh.edges
    coarse = coarse_mesh.edges
    idx = np.clip(np.searchsorted(fine, coarse), 0, fine.size - 1)
    # searchsorted returns the left insertion point; snap to the nearer edge
    below = np.clip(idx - 1, 0, fine.size - 1)
    idx = np.where(np.abs(fine[below] - coarse) < np.abs(fine[idx] - coarse), below, idx)
    if np.any(np.abs(fine[idx] - coarse) > _EDGE_MATCH_TOL):
        raise ValueError("meshes are not nested: coarse edges must be fine edges")
    return idx


def project_reference(
    fine: Trajectory,
    fine_mesh: Mesh,
    coarse_mesh: Mesh,
    coarse_time: TimeGrid,
) -> np.ndarray:
    """Orthogonal projection of the fine space-time field onto the coarse
    piecewise-constant space: measure-weighted averages of the fine values
    over each coarse space-time cell.  Requires exact nesting in both
    space and time."""
    fine_time = fine.time_grid
    if abs(fine_time.t_final - coarse_time.t_final) > 1e-12 * max(1.0, coarse_time.t_final):
        raise ValueError("time grids cover different horizons")
    if fine_time.n_steps % coarse_time.n_steps != 0:
        raise ValueError("time grids are not nested")
    m = fine_time.n_steps // coarse_time.n_steps

    blocks = _space_blocks(fine_mesh, coarse_mesh)
    field = _interior_field(fine)
    weighted = field * fine_mesh.cell_sizes
    sums = np.add.reduceat(weighted, blocks[:-1], axis=1)
    space_avg = sums / coarse_mesh.cell_sizes
    n_c = coarse_time.n_steps
    return space_avg.reshape(n_c, m, coarse_mesh.num_cells).mean(axis=1)


def project_time_series(series, m: int) -> np.ndarray:
    """Average a per-slab time series over blocks of m fine slabs."""
    arr = np.asarray(series, dtype=float)
    if arr.size % m != 0:
        raise ValueError("series length is not a multiple of the block size")
    return arr.reshape(-1, m).mean(axis=1)


def linf_bounds(params: ModelParams) -> tuple[float, float]:
    """Invariant concentration bracket: m combines the infimum of the
    initial profile with alpha1/beta1, M its supremum with alpha0/beta0."""
    lo, hi = params.u_init.bounds(0.0, params.L0)
    return (
        min(lo, params.alpha1 / params.beta1),
        max(hi, params.alpha0 / params.beta0),
    )


def width_rate_bounds(params: ModelParams, m: float, M: float) -> tuple[float, float]:
    """Bracket for the discrete width rate d[L] implied by the bracket
    [m, M] on the concentrations."""
    lo = -params.alpha0 - params.R * params.alpha1 + m * (params.beta0 + params.R * params.beta1)
    hi = -params.alpha0 - params.R * params.alpha1 + M * (params.beta0 + params.R * params.beta1)
    return lo, hi


def velocity_bounds(params: ModelParams, m: float, M: float) -> tuple[float, float]:
    """Uniform bracket [v_flat, v_sharp] for all edge velocities, using the
    identity v = beta0 u_0 - alpha0 - xi * d[L] together with the d[L]
    bracket."""
    if m > M:
        raise ValueError("velocity_bounds: m must not exceed M")
    dL_lo, dL_hi = width_rate_bounds(params, m, M)
    v_flat = params.beta0 * m - params.alpha0 - max(dL_hi, 0.0)
    v_sharp = params.beta0 * M - params.alpha0 - min(dL_lo, 0.0)
    return v_flat, v_sharp


def sufficient_horizon(params: ModelParams) -> float | None:
    """Horizon below which the width provably stays bounded away from zero;
    None when the bound is vacuous (the width cannot shrink on average)."""
    m, _ = linf_bounds(params)
    denom = (params.alpha0 + params.R * params.alpha1) - m * (
        params.beta0 + params.R * params.beta1
    )
    if denom <= 0.0:
        return None
    return params.L0 / denom


def mass_balance_defects(traj: Trajectory, mesh: Mesh, params: ModelParams) -> np.ndarray:
    """Per accepted step: L^n sum h u^n - L^{n-1} sum h u^{n-1}
    - dt (a - b u_0^n); vanishes for exact scheme solutions by telescoping."""
    if not traj.is_contiguous():
        raise ValueError("mass balance check requires stride-1 storage")
    dt = traj.time_grid.dt
    masses = np.array([s.L * np.dot(mesh.cell_sizes, s.u[1:-1]) for s in traj.states])
    inflow = np.array([dt * (params.a - params.b * s.u[0]) for s in traj.states[1:]])
    return np.diff(masses) - inflow


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    worst: float


@dataclass(frozen=True)
class TrajectoryReport:
    """Post-hoc verification of the per-step bounds; wave-dependent checks
    are None when the parameters admit no forward travelling wave."""

    closure: CheckResult
    mass_balance: CheckResult
    max_principle: CheckResult | None
    width_bound: CheckResult | None
    interface_rate: CheckResult | None
    width_rate: CheckResult | None
    velocity_bracket: CheckResult | None
    horizon_bound_respected: bool | None

    @property
    def all_passed(self) -> bool:
        checks = (
            self.closure,
            self.mass_balance,
            self.max_principle,
            self.width_bound,
            self.interface_rate,
            self.width_rate,
            self.velocity_bracket,
        )
        return all(c.passed for c in checks if c is not None)


def verify_trajectory(
    traj: Trajectory,
    mesh: Mesh,
    params: ModelParams,
    bracket_tol: float = 1e-9,
    mass_tol: float = 1e-8,
) -> TrajectoryReport:
    """Check every stored step against the invariants the scheme guarantees.

    Closure and mass balance hold unconditionally; the concentration
    bracket, width bound and rate/velocity brackets are proved only in the
    forward wave regime and are skipped otherwise.
    """
    closure_worst = max(s.closure_defect() for s in traj.states)
    closure = CheckResult(closure_worst <= 1e-8 * max(1.0, params.L0), closure_worst)

    defects = mass_balance_defects(traj, mesh, params)
    mass_worst = float(np.abs(defects).max()) if defects.size else 0.0
    mass = CheckResult(mass_worst <= mass_tol, mass_worst)

    regime = classify(params)
    forward_wave = regime.kind is RegimeKind.UNIQUE_WAVE and regime.wave.c_hat > 0.0
    max_principle = width_bound = interface_rate = width_rate = velocity_bracket = None
    horizon_ok = None
    if forward_wave:
        m, M = linf_bounds(params)
        u_lo = min(float(s.u.min()) for s in traj.states)
        u_hi = max(float(s.u.max()) for s in traj.states)
        worst = max(m - u_lo, u_hi - M, 0.0)
        max_principle = CheckResult(u_lo >= m - bracket_tol and u_hi <= M + bracket_tol, worst)

        L_hat = regime.wave.L_hat
        worst_width = 0.0
        ok_width = True
        for a, b in zip(traj.states[:-1], traj.states[1:]):
            lower = min(m / M * a.L, L_hat)
            worst_width = max(worst_width, lower - b.L)
            ok_width = ok_width and (b.L > lower - bracket_tol)
        width_bound = CheckResult(ok_width, worst_width)

        dt = traj.time_grid.dt
        dX1 = np.array([(b.X1 - a.X1) / dt for a, b in zip(traj.states[:-1], traj.states[1:])])
        dL = np.array([(b.L - a.L) / dt for a, b in zip(traj.states[:-1], traj.states[1:])])
        x1_lo = -params.alpha1 + params.beta1 * m
        x1_hi = -params.alpha1 + params.beta1 * M
        worst_x1 = max(
            float(np.max(x1_lo - dX1, initial=0.0)), float(np.max(dX1 - x1_hi, initial=0.0))
        )
        interface_rate = CheckResult(worst_x1 <= bracket_tol, worst_x1)

        dL_lo, dL_hi = width_rate_bounds(params, m, M)
        worst_dl = max(
            float(np.max(dL_lo - dL, initial=0.0)), float(np.max(dL - dL_hi, initial=0.0))
        )
        width_rate = CheckResult(worst_dl <= bracket_tol, worst_dl)

        v_flat, v_sharp = velocity_bounds(params, m, M)
        worst_v = 0.0
        for a, b in zip(traj.states[:-1], traj.states[1:]):
            v = velocities(a, b, mesh, dt, params.R)
            worst_v = max(worst_v, float(np.max(v_flat - v, initial=0.0)), float(np.max(v - v_sharp, initial=0.0)))
        velocity_bracket = CheckResult(worst_v <= bracket_tol, worst_v)

        horizon = sufficient_horizon(params)
        horizon_ok = horizon is None or traj.time_grid.t_final < horizon

    return TrajectoryReport(
        closure=closure,
        mass_balance=mass,
        max_principle=max_principle,
        width_bound=width_bound,
        interface_rate=interface_rate,
        width_rate=width_rate,
        velocity_bracket=velocity_bracket,
        horizon_bound_respected=horizon_ok,
    )


# ---------------------------------------------------------------------------
# Grid refinement study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LevelResult:
    """Errors and rates of one refinement level; rates are None on the
    coarsest level."""

    k: int
    h: float
    dt: float
    err_w: float
    rate_w: float | None
    err_x0: float
    rate_x0: float | None
    err_x1: float
    rate_x1: float | None


@dataclass(frozen=True)
class ConvergenceReport:
    levels: tuple[LevelResult, ...]
    ref_level: int
    t_final: float


def _interface_series(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    x0 = np.array([s.X0 for s in traj.states[1:]])
    x1 = np.array([s.X1 for s in traj.states[1:]])
    return x0, x1


def convergence_study(
    params: ModelParams,
    max_level: int = 3,
    ref_level: int = 4,
    t_final: float = 0.2,
    base_cells: int = 50,
    base_steps: int = 10,
    opts: SolverOptions = SolverOptions(),
    initial_mode: InitialMode = InitialMode.CELL_AVERAGE,
) -> ConvergenceReport:
    """Nested-mesh refinement study: level k uses base_cells * 2^k cells and
    base_steps * 4^k steps; the finest level serves as reference.  Profile
    errors are space-time L2 distances to the projected reference; interface
    errors are sup-in-time distances to the time-projected reference, with
    rates taken w.r.t. the time step."""
    if ref_level <= max_level:
        raise ValueError("convergence_study: ref_level must exceed max_level")

    def level_setup(k: int) -> tuple[Mesh, TimeGrid]:
        return (
            uniform_mesh(base_cells * 2**k),
            TimeGrid.from_horizon(t_final, base_steps * 4**k),
        )

    ref_mesh, ref_grid = level_setup(ref_level)
    ref_traj = run(params, ref_mesh, ref_grid, opts, initial_mode)
    if not ref_traj.completed:
        raise RuntimeError(f"convergence_study: reference level {ref_level} did not complete")
    ref_x0, ref_x1 = _interface_series(ref_traj)

    rows = []
    prev_err = None
    prev_h = None
    prev_dt = None
    for k in range(max_level + 1):
        mesh, grid = level_setup(k)
        traj = run(params, mesh, grid, opts, initial_mode)
        if not traj.completed:
            raise RuntimeError(f"convergence_study: level {k} did not complete")

        proj = project_reference(ref_traj, ref_mesh, mesh, grid)
        field = _interior_field(traj)
        diff = field - proj
        err_w = float(np.sqrt(grid.dt * np.sum((diff * diff) @ mesh.cell_sizes)))
        m = ref_grid.n_steps // grid.n_steps
        x0, x1 = _interface_series(traj)
        err_x0 = float(np.abs(x0 - project_time_series(ref_x0, m)).max())
        err_x1 = float(np.abs(x1 - project_time_series(ref_x1, m)).max())

        h = float(mesh.cell_sizes.max())
        if prev_err is None:
            rates = (None, None, None)
        else:
            log_h = np.log(h) - np.log(prev_h)
            log_dt = np.log(grid.dt) - np.log(prev_dt)
            rates = (
                float((np.log(err_w) - np.log(prev_err[0])) / log_h),
                float((np.log(err_x0) - np.log(prev_err[1])) / log_dt),
                float((np.log(err_x1) - np.log(prev_err[2])) / log_dt),
            )
        rows.append(
            LevelResult(
                k=k,
                h=h,
                dt=grid.dt,
                err_w=err_w,
                rate_w=rates[0],
                err_x0=err_x0,
                rate_x0=rates[1],
                err_x1=err_x1,
                rate_x1=rates[2],
            )
        )
        prev_err = (err_w, err_x0, err_x1)
        prev_h = h
        prev_dt = grid.dt

    return ConvergenceReport(levels=tuple(rows), ref_level=ref_level, t_final=t_final)


def write_convergence_csv(report: ConvergenceReport, path) -> None:
    """Deterministic CSV mirroring the refinement table: one row per level
    with errors and rates; rates are blank on the coarsest level."""
    with open(path, "w", newline="") as f:
        f.write("k,h,dt,err_w,rate_w,err_x0,rate_x0,err_x1,rate_x1\n")
        for row in report.levels:
            fields = [
                str(row.k),
                format_float(row.h),
                format_float(row.dt),
                format_float(row.err_w),
                "" if row.rate_w is None else format_float(row.rate_w),
                format_float(row.err_x0),
                "" if row.rate_x0 is None else format_float(row.rate_x0),
                format_float(row.err_x1),
                "" if row.rate_x1 is None else format_float(row.rate_x1),
            ]
            f.write(",".join(fields) + "\n")


def write_step_diagnostics(
    traj: Trajectory,
    mesh: Mesh,
    params: ModelParams,
    path,
) -> None:
    """Per-step diagnostics CSV: t, X0, X1, L, u0, uI1, d, mass_balance_defect.

    The wave distance column is nan when the parameters admit no wave."""
    regime = classify(params)
    wave = regime.wave if regime.kind is RegimeKind.UNIQUE_WAVE else None
    defects = mass_balance_defects(traj, mesh, params)
    with open(path, "w", newline="") as f:
        f.write("t,X0,X1,L,u0,uI1,d,mass_balance_defect\n")
        times = traj.times
        for i, s in enumerate(traj.states):
            d = wave_distance(s, mesh, wave) if wave is not None else float("nan")
            defect = defects[i - 1] if i >= 1 else float("nan")
            fields = [
                format_float(times[i]),
                format_float(s.X0),
                format_float(s.X1),
                format_float(s.L),
                format_float(s.u[0]),
                format_float(s.u[-1]),
                format_float(d),
                format_float(defect),
            ]
            f.write(",".join(fields) + "\n")
