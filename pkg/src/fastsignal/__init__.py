"""Numerical laboratory for a two-prey/one-predator chemotaxis system and its
fast signal diffusion limit."""

from .analysis import (
    InitialLayerSpec,
    RateReport,
    TrajectoryComparison,
    compare_trajectories,
    fit_slope,
    initial_layer_size,
    make_layer_data,
    manifold_distance,
    manifold_projection,
    norm_h1,
    norm_h2_proxy,
    norm_l2,
    rate_study,
    semigroup_identity_residual,
)
from .grid import (
    Field,
    Grid,
    chemotaxis_divergence,
    laplacian_neumann,
    make_grid,
    neumann_modes,
)
from .linsolve import (
    HelmholtzOperator,
    SolverConvergenceError,
    SolverStats,
    exp_propagate,
    gmres,
    helmholtz_solve,
)
from .model import ModelParams, OdeState, default_params, kinetics, kinetics_jacobian
from .ode import (
    BranchPoint,
    OdeTrajectory,
    OscillationRecord,
    StiffnessError,
    bifurcation_sweep,
    classify_stability,
    detect_oscillation,
    find_equilibria,
    integrate,
    ode_rhs_3pop,
    ode_rhs_pp,
)
from .sim_eps import (
    BlowUpError,
    EpsState,
    StabilityError,
    Trajectory,
    default_initial_fields,
    run_eps,
    stable_dt,
    step_eps,
)
from .sim_limit import LimitState, run_limit, step_limit

__version__ = "0.1.0"
