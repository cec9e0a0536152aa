"""Implicit finite-volume solver for a one-species oxide layer with moving
boundaries, exponential-fitting fluxes, travelling-wave analysis and
free-energy dissipation diagnostics."""

from .bernoulli import bernoulli, bernoulli_prime
from .core import (
    ExponentialProfile,
    InitialMode,
    Mesh,
    ModelParams,
    State,
    TabulatedProfile,
    Termination,
    TerminationKind,
    TimeGrid,
    Trajectory,
    discretize_initial,
    uniform_mesh,
)
from .waves import (
    RegimeClassification,
    RegimeKind,
    TravellingWave,
    classify,
    wave_profile_on_mesh,
)
from .scheme import (
    SolverOptions,
    StepResult,
    StepStatus,
    homotopy_solve,
    jacobian,
    newton_step_solve,
    residual,
    run,
    sg_flux,
    velocities,
)
from .energy import (
    ConvexDensity,
    EnergyLedger,
    build_ledger,
    builtin_densities,
    dissipation_split,
    free_energy,
    mean_value_theta,
    total_free_energy_increment,
    write_ledger_csv,
)
from .analysis import (
    ConvergenceReport,
    DiscreteNorms,
    LevelResult,
    TrajectoryReport,
    convergence_study,
    h1_norm,
    l2_norm,
    l2h1_norm,
    linf_bounds,
    mass_balance_defects,
    project_reference,
    sufficient_horizon,
    trajectory_norms,
    velocity_bounds,
    verify_trajectory,
    wave_distance,
    width_rate_bounds,
    write_convergence_csv,
    write_step_diagnostics,
)

__version__ = "0.1.0"
