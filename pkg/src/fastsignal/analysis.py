"""Norms, initial-layer constructors, manifold distances and rate studies.

The central experiment compares the relaxation-time and limiting trajectories
on a shared grid and step schedule, measures per-component sup-in-time errors,
and fits log-log slopes against the relaxation parameter.  Error floors below
which round-off dominates are excluded from the fits.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import Field, _laplacian, mode_eigenvalues
from .linsolve import HelmholtzOperator, from_modes, helmholtz_solve, to_modes
from .model import ModelParams
from .sim_eps import EpsState, Trajectory, run_eps, stable_dt
from .sim_limit import run_limit

__all__ = [
    "InitialLayerSpec",
    "RateReport",
    "TrajectoryComparison",
    "norm_l2",
    "norm_h1",
    "norm_h2_proxy",
    "manifold_projection",
    "initial_layer_size",
    "make_layer_data",
    "manifold_distance",
    "compare_trajectories",
    "rate_study",
    "semigroup_identity_residual",
    "fit_slope",
]

ERROR_FLOOR = 1e-9


def norm_l2(f: Field) -> float:
    """sqrt(dx * sum f_j^2), the cell-centered L2 norm."""
    return float(np.sqrt(f.grid.dx * np.sum(f.values * f.values)))


def _grad_sq(f: Field) -> float:
    d = np.diff(f.values) / f.grid.dx
    return float(f.grid.dx * np.sum(d * d))


def norm_h1(f: Field) -> float:
    """L2 norm of the value plus the face-centered first difference."""
    return float(np.sqrt(f.grid.dx * np.sum(f.values**2) + _grad_sq(f)))


def norm_h2_proxy(f: Field) -> float:
    """H1 plus the L2 norm of the discrete Laplacian."""
    lap = _laplacian(f.values, f.grid.dx)
    return float(
        np.sqrt(
            f.grid.dx * np.sum(f.values**2)
            + _grad_sq(f)
            + f.grid.dx * np.sum(lap * lap)
        )
    )


@dataclass(frozen=True)
class InitialLayerSpec:
    """Recipe for slow-chemical data at a prescribed distance eps**gamma from
    the critical manifold; gamma="on_manifold" puts the datum exactly on it."""

    gamma: float | str
    eps: float
    perturbation_shape: Field | None = None

    def __post_init__(self):
        if isinstance(self.gamma, str):
            if self.gamma != "on_manifold":
                raise ValueError(f"unknown layer symbol {self.gamma!r}")
        elif self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


def manifold_projection(u: Field, p: ModelParams) -> Field:
    """Chemical v with (u, v) on the discrete critical manifold."""
    op = HelmholtzOperator(p.lambda3, p.mu3, u.grid)
    v, _ = helmholtz_solve(op, Field(p.zeta3 * u.values, u.grid), method="spectral")
    return v


def _layer_residual(u30: Field, v30: Field, p: ModelParams) -> Field:
    r = (
        p.lambda3 * _laplacian(v30.values, v30.grid.dx)
        - p.mu3 * v30.values
        + p.zeta3 * u30.values
    )
    return Field(r, v30.grid)


def initial_layer_size(u30: Field, v30: Field, p: ModelParams) -> float:
    """L2 norm of lambda3 * Lap v30 - mu3 * v30 + zeta3 * u30."""
    if u30.grid != v30.grid:
        raise ValueError("u30 and v30 live on different grids")
    return norm_l2(_layer_residual(u30, v30, p))


def make_layer_data(u30: Field, spec: InitialLayerSpec, p: ModelParams) -> Field:
    """Slow-chemical datum with layer size eps**gamma.

    The perturbation is normalised so its image under lambda3*Lap - mu3*I has
    unit L2 norm, which makes the realised layer size exact up to the
    projection residual.
    """
    grid = u30.grid
    base = manifold_projection(u30, p)
    if spec.gamma == "on_manifold":
        return base
    if spec.perturbation_shape is None:
        w = Field(np.cos(np.pi * grid.centers / grid.L), grid)
    else:
        w = spec.perturbation_shape
        if w.grid != grid:
            raise ValueError("perturbation shape lives on a different grid")
    image = p.lambda3 * _laplacian(w.values, grid.dx) - p.mu3 * w.values
    scale = norm_l2(Field(image, grid))
    if scale == 0.0:
        raise ValueError("perturbation shape has zero operator image")
    delta = spec.eps ** spec.gamma
    return Field(base.values + (delta / scale) * w.values, grid)


def manifold_distance(s, p: ModelParams) -> float:
    """Instantaneous distance of a state from the critical manifold."""
    return initial_layer_size(s.u3, s.v3, p)


@dataclass
class TrajectoryComparison:
    """Sup-in-time errors between matched trajectories.

    Species errors are L2; the fast chemicals use the H2 proxy; the slow
    chemical is reported both in sup-in-time H1 and in L2-in-time of the H2
    proxy (trapezoidal in time).
    """

    err_u1: float
    err_u2: float
    err_u3: float
    err_v1: float
    err_v2: float
    err_v3_h1: float
    err_v3_l2h2: float

    def as_dict(self) -> dict[str, float]:
        return {
            "err_u1": self.err_u1,
            "err_u2": self.err_u2,
            "err_u3": self.err_u3,
            "err_v1": self.err_v1,
            "err_v2": self.err_v2,
            "err_v3_h1": self.err_v3_h1,
            "err_v3_l2h2": self.err_v3_l2h2,
        }


def compare_trajectories(A: Trajectory, B: Trajectory) -> TrajectoryComparison:
    """Per-component errors between a relaxation-time run and a limit run."""
    if len(A.states) != len(B.states) or not np.allclose(A.times, B.times):
        raise ValueError("trajectories have different snapshot schedules")
    ga, gb = A.states[0].grid, B.states[0].grid
    if ga != gb:
        raise ValueError("trajectories live on different grids")

    sup = {k: 0.0 for k in ("u1", "u2", "u3", "v1", "v2", "v3_h1")}
    v3_h2_sq = []
    for sa, sb in zip(A.states, B.states):
        for name in ("u1", "u2", "u3"):
            d = Field(getattr(sa, name).values - getattr(sb, name).values, ga)
            sup[name] = max(sup[name], norm_l2(d))
        for name in ("v1", "v2"):
            d = Field(getattr(sa, name).values - getattr(sb, name).values, ga)
            sup[name] = max(sup[name], norm_h2_proxy(d))
        d3 = Field(sa.v3.values - sb.v3.values, ga)
        sup["v3_h1"] = max(sup["v3_h1"], norm_h1(d3))
        v3_h2_sq.append(norm_h2_proxy(d3) ** 2)
    l2h2 = float(np.sqrt(np.trapezoid(v3_h2_sq, A.times))) if len(A.times) > 1 else float(
        np.sqrt(v3_h2_sq[0])
    )
    return TrajectoryComparison(
        sup["u1"], sup["u2"], sup["u3"], sup["v1"], sup["v2"], sup["v3_h1"], l2h2
    )


def fit_slope(eps: np.ndarray, err: np.ndarray, floor: float = ERROR_FLOOR):
    """Least-squares slope of log(err) vs log(eps) above the numerical floor.

    Returns (slope, residual, n_points); raises ValueError when fewer than
    three points sit above the floor.
    """
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(err, dtype=float)
    keep = err > floor
    if keep.sum() < 3:
        raise ValueError(
            f"only {int(keep.sum())} error values above the floor {floor:g}; "
            "need at least 3 to fit a rate"
        )
    x = np.log(eps[keep])
    y = np.log(err[keep])
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    residual = float(res[0]) if res.size else 0.0
    return float(coef[0]), residual, int(keep.sum())


@dataclass
class RateReport:
    """Per-eps error tables with fitted slopes and realised layer sizes."""

    eps_list: np.ndarray
    eps_in: np.ndarray
    errors: dict[str, np.ndarray]
    slopes: dict[str, tuple[float, float, int]]
    gamma: float | str
    floor: float = ERROR_FLOOR

    COLUMNS = ("err_u1", "err_u2", "err_u3", "err_v1", "err_v2", "err_v3_h1", "err_v3_l2h2")

    def to_csv(self) -> str:
        lines = ["eps,eps_in," + ",".join(self.COLUMNS)]
        for i, e in enumerate(self.eps_list):
            row = [f"{e:.17g}", f"{self.eps_in[i]:.17g}"]
            row += [f"{self.errors[c][i]:.17g}" for c in self.COLUMNS]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def summary_text(self) -> str:
        lines = [f"gamma = {self.gamma}", f"floor = {self.floor:g}", "fitted slopes:"]
        for name, (slope, res, npts) in sorted(self.slopes.items()):
            lines.append(
                f"  {name}: slope = {slope:.4f}  residual = {res:.3e}  points = {npts}"
            )
        return "\n".join(lines) + "\n"


def _rate_task(args):
    (u_values, grid, gamma, eps, T, p, times, dt, scheme, solver_method,
     solver_tol, etd_order, chemical_mode, own_limit) = args
    u10, u20, u30 = (Field(v, grid) for v in u_values)
    spec = InitialLayerSpec(gamma, eps)
    v30 = make_layer_data(u30, spec, p)
    eps_in = initial_layer_size(u30, v30, p)
    traj = run_eps(u10, u20, u30, v30, eps, T, p, times, dt=dt, scheme=scheme,
                   solver_method=solver_method, solver_tol=solver_tol,
                   etd_order=etd_order, chemical_mode=chemical_mode,
                   record_steps=False)
    limit = None
    if own_limit:
        limit = run_limit(u10, u20, u30, T, p, times, dt=dt, scheme=scheme,
                          solver_method=solver_method, solver_tol=solver_tol,
                          record_steps=False)
    return eps_in, traj, limit


def rate_study(u10: Field, u20: Field, u30: Field, gamma: float | str,
               eps_list, T: float, p: ModelParams, *, n_outputs: int = 64,
               cfl: float = 0.45, scheme: str = "upwind",
               solver_method: str = "tridiagonal", solver_tol: float = 1e-10,
               etd_order: int = 2, chemical_mode: str = "mixed",
               floor: float = ERROR_FLOOR, workers: int = 1) -> RateReport:
    """Sweep the relaxation parameter and fit per-component convergence rates.

    Each relaxation-time run and its paired limit run share one grid and one
    fixed step schedule, so the discretization error cancels in their
    difference and only the relaxation effect remains.

    On-manifold studies use a single schedule (the measured differences are
    schedule-independent there) and one shared limit run.  Layer studies use
    the per-eps schedule dt_eps = dt0 * sqrt(eps / eps_list[0]): the species
    stages feel the decaying layer for one step, so a schedule shrinking like
    sqrt(eps) realises the sqrt(eps) * eps_in layer contribution of the rate
    bounds; a fixed schedule would inflate it to O(dt * eps_in) and a
    layer-resolving schedule would suppress it to O(eps * eps_in).
    """
    eps_list = np.asarray(list(eps_list), dtype=float)
    if eps_list.size < 3 or np.any(np.diff(eps_list) >= 0) or np.any(eps_list <= 0):
        raise ValueError("eps_list must be strictly decreasing with at least 3 entries")
    if T <= 0:
        raise ValueError("rate study needs T > 0")
    grid = u10.grid
    times = np.linspace(0.0, T, n_outputs)

    # base fixed step, sized once from the initial state with a safety margin
    spec0 = InitialLayerSpec(gamma, float(eps_list[0]))
    v30_probe = make_layer_data(u30, spec0, p)
    v1_probe, _ = helmholtz_solve(
        HelmholtzOperator(p.lambda1, p.mu1, grid), Field(p.zeta1 * u10.values, grid)
    )
    v2_probe, _ = helmholtz_solve(
        HelmholtzOperator(p.lambda2, p.mu2, grid), Field(p.zeta2 * u20.values, grid)
    )
    probe = EpsState(0.0, float(eps_list[0]), u10, u20, u30, v1_probe, v2_probe, v30_probe)
    dt0 = stable_dt(probe, p, cfl)

    on_manifold = gamma == "on_manifold"
    if on_manifold:
        dts = [dt0] * eps_list.size
        shared_limit = run_limit(u10, u20, u30, T, p, times, dt=dt0, scheme=scheme,
                                 solver_method=solver_method, solver_tol=solver_tol,
                                 record_steps=False)
    else:
        dts = [dt0 * float(np.sqrt(e / eps_list[0])) for e in eps_list]
        shared_limit = None

    tasks = [
        ((u10.values, u20.values, u30.values), grid, gamma, float(e), T, p, times,
         dts[i], scheme, solver_method, solver_tol, etd_order, chemical_mode,
         not on_manifold)
        for i, e in enumerate(eps_list)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_rate_task, tasks))
    else:
        results = [_rate_task(t) for t in tasks]

    eps_in = np.array([r[0] for r in results])
    errors = {c: np.zeros(eps_list.size) for c in RateReport.COLUMNS}
    for i, (_, traj, own_limit) in enumerate(results):
        comp = compare_trajectories(traj, own_limit if own_limit is not None else shared_limit)
        for c, val in comp.as_dict().items():
            errors[c][i] = val

    slopes = {}
    for c in RateReport.COLUMNS:
        try:
            slopes[c] = fit_slope(eps_list, errors[c], floor)
        except ValueError:
            pass
    return RateReport(eps_list, eps_in, errors, slopes, gamma, floor)


def semigroup_identity_residual(f: Field, lam: float, mu: float, S: float) -> float:
    """L2 gap between the resolvent solve and its truncated semigroup integral.

    Per mode the truncated integral of e^{s(lam a_k - mu)} over [0, S] misses
    1/(mu - lam a_k) by exactly e^{-(mu - lam a_k) S}/(mu - lam a_k), so the
    result is bounded by (e^{-mu S}/mu) * ||f||_L2.
    """
    if S <= 0:
        raise ValueError("S must be positive")
    ak = mode_eigenvalues(f.grid)
    b = mu - lam * ak
    # per-mode difference of the two reconstructions, with the common factor
    # c_k/b_k shared so the tail e^{-b_k S} is not drowned by subtraction noise
    gap = to_modes(f.values) / b * (1.0 + np.expm1(-b * S))
    return norm_l2(Field(from_modes(gap), f.grid))
