"""Time integrator for the relaxation-time system: three parabolic species
equations with chemotaxis, two elliptic chemicals, and one slow-evolution
parabolic chemical.

One step applies a first-order splitting: an explicit Heun (SSP-RK2) update of
the species transport + reaction, a refresh of the elliptic chemicals at the
new densities, and an exponential update of the slow chemical that is exact
per mode for a source varying linearly over the step (etd_order=1 freezes the
source instead).  Species stay non-negative under the stable_dt bound;
negative round-off is clipped and accounted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid, _chemotaxis_div, _laplacian
from .linsolve import (
    _exp_propagate_values,
    _exp_ramp_values,
    _solve_tridiagonal_values,
    HelmholtzOperator,
    helmholtz_solve,
)
from .model import ModelParams, kinetics

__all__ = [
    "EpsState",
    "Trajectory",
    "BlowUpError",
    "StabilityError",
    "default_initial_fields",
    "stable_dt",
    "step_eps",
    "run_eps",
]


class BlowUpError(RuntimeError):
    """A field became non-finite during time stepping."""

    def __init__(self, name: str, t: float):
        super().__init__(f"blow-up detected in {name} at t={t:.6g}")
        self.field_name = name
        self.t = t


class StabilityError(RuntimeError):
    """A prescribed fixed step exceeds the current stability bound."""


@dataclass(frozen=True)
class EpsState:
    """Full solution at one time for the relaxation-time system."""

    t: float
    eps: float
    u1: Field
    u2: Field
    u3: Field
    v1: Field
    v2: Field
    v3: Field

    @property
    def grid(self) -> Grid:
        return self.u1.grid


@dataclass
class Trajectory:
    """Snapshots at the requested output times plus stepping diagnostics.

    ``step_dts``/``step_masses``/``balance_residuals`` hold one entry per
    accepted step when per-step recording is on; the aggregate fields are
    always filled.
    """

    times: np.ndarray
    states: list
    step_dts: np.ndarray
    step_masses: np.ndarray
    balance_residuals: np.ndarray
    clipped_mass: np.ndarray
    initial_mass: np.ndarray
    n_steps: int
    max_balance_residual: float

    def spatial_means(self) -> np.ndarray:
        """Domain averages of (u1, u2, u3) at the snapshot times."""
        return np.array(
            [[s.u1.values.mean(), s.u2.values.mean(), s.u3.values.mean()] for s in self.states]
        )


def default_initial_fields(grid: Grid) -> tuple[Field, Field, Field]:
    """Default species data c_i + a_i cos(pi x / L); no-flux compatible."""
    x = grid.centers
    w = np.cos(np.pi * x / grid.L)
    return (
        Field(1.0 + 0.2 * w, grid),
        Field(1.0 - 0.2 * w, grid),
        Field(0.5 + 0.1 * w, grid),
    )


def _grad_max(values: np.ndarray, dx: float) -> float:
    if values.size < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(values)))) / dx


def _reaction_rate_bounds(p: ModelParams, m1: float, m2: float, m3: float):
    lam1 = p.alpha1 * (1.0 + 2.0 * m1 + p.beta1 * m2) + p.m1 * m3 / p.eta1
    lam2 = p.alpha2 * (1.0 + 2.0 * m2 + p.beta2 * m1) + p.m2 * m3 / p.eta2
    lam3 = p.gamma1 * p.m1 + p.gamma2 * p.m2 + p.k + 2.0 * p.l * m3
    return lam1, lam2, lam3


def _stable_dt_values(u, v, p: ModelParams, dx: float, cfl: float,
                      max_dt: float = np.inf) -> float:
    g1 = _grad_max(v[0], dx)
    g2 = _grad_max(v[1], dx)
    g3 = _grad_max(v[2], dx)
    r1, r2, r3 = _reaction_rate_bounds(
        p, float(u[0].max()), float(u[1].max()), float(u[2].max())
    )
    den1 = 2.0 * p.d1 + 2.0 * p.chi1 * g3 * dx + dx * dx * r1
    den2 = 2.0 * p.d2 + 2.0 * p.chi2 * g3 * dx + dx * dx * r2
    den3 = (
        2.0 * p.d3
        + 2.0 * (p.chi31 * g1 + p.chi32 * g2) * dx
        + dx * dx * r3
    )
    dt = cfl * dx * dx / max(den1, den2, den3)
    return min(dt, max_dt)


def stable_dt(s, p: ModelParams, cfl: float, max_dt: float = np.inf) -> float:
    """Largest explicit step for the species update, scaled by cfl.

    Bounds diffusion, the upwind chemotactic drift from the current chemical
    gradients, and a local Lipschitz estimate of the reaction terms; never
    exceeds max_dt (the output interval, when the caller has one).
    """
    if not 0.0 < cfl <= 1.0:
        raise ValueError("cfl must lie in (0, 1]")
    return _stable_dt_values(
        (s.u1.values, s.u2.values, s.u3.values),
        (s.v1.values, s.v2.values, s.v3.values),
        p, s.grid.dx, cfl, max_dt,
    )


def _species_rhs(u1, u2, u3, v1, v2, v3, p: ModelParams, dx: float, scheme: str):
    f1, f2, f3 = kinetics(u1, u2, u3, p)
    r1 = p.d1 * _laplacian(u1, dx) + _chemotaxis_div(u1, v3, p.chi1, dx, scheme) + f1
    r2 = p.d2 * _laplacian(u2, dx) + _chemotaxis_div(u2, v3, p.chi2, dx, scheme) + f2
    r3 = (
        p.d3 * _laplacian(u3, dx)
        + _chemotaxis_div(u3, v1, -p.chi31, dx, scheme)
        + _chemotaxis_div(u3, v2, -p.chi32, dx, scheme)
        + f3
    )
    return (r1, r2, r3), (f1, f2, f3)


def _heun_species(u, v, p: ModelParams, dx: float, dt: float, scheme: str):
    """One SSP-RK2 step of the species subsystem with frozen chemicals.

    Returns the pre-clip update and the time-centred reaction mass rate per
    species (transport contributes exactly zero total mass).
    """
    (r1, r2, r3), (f1a, f2a, f3a) = _species_rhs(*u, *v, p, dx, scheme)
    s1 = u[0] + dt * r1
    s2 = u[1] + dt * r2
    s3 = u[2] + dt * r3
    (q1, q2, q3), (f1b, f2b, f3b) = _species_rhs(s1, s2, s3, *v, p, dx, scheme)
    new = (
        u[0] + 0.5 * dt * (r1 + q1),
        u[1] + 0.5 * dt * (r2 + q2),
        u[2] + 0.5 * dt * (r3 + q3),
    )
    reaction_rate = np.array(
        [
            dx * 0.5 * (f1a.sum() + f1b.sum()),
            dx * 0.5 * (f2a.sum() + f2b.sum()),
            dx * 0.5 * (f3a.sum() + f3b.sum()),
        ]
    )
    return new, reaction_rate


class _Stepper:
    """Array-level stepping kernel shared by both simulators."""

    def __init__(self, grid: Grid, p: ModelParams, *, scheme: str = "upwind",
                 solver_method: str = "tridiagonal", solver_tol: float = 1e-10,
                 eps: float | None = None, chemical_mode: str = "mixed",
                 etd_order: int = 2):
        if chemical_mode not in ("mixed", "fully_parabolic"):
            raise ValueError(f"unknown chemical_mode {chemical_mode!r}")
        if chemical_mode == "fully_parabolic" and eps is None:
            raise ValueError("fully_parabolic mode needs a relaxation parameter")
        if etd_order not in (1, 2):
            raise ValueError("etd_order must be 1 or 2")
        self.grid = grid
        self.p = p
        self.scheme = scheme
        self.solver_method = solver_method
        self.solver_tol = solver_tol
        self.eps = eps
        self.chemical_mode = chemical_mode
        self.etd_order = etd_order
        self.clipped = np.zeros(3)
        self._lam = (p.lambda1, p.lambda2, p.lambda3)
        self._mu = (p.mu1, p.mu2, p.mu3)
        self._zeta = (p.zeta1, p.zeta2, p.zeta3)

    def solve_elliptic(self, u: np.ndarray, which: int) -> np.ndarray:
        lam, mu, zeta = self._lam[which], self._mu[which], self._zeta[which]
        if self.solver_method == "tridiagonal":
            return _solve_tridiagonal_values(lam, mu, self.grid, zeta * u)
        op = HelmholtzOperator(lam, mu, self.grid)
        v, _ = helmholtz_solve(op, Field(zeta * u, self.grid),
                               method=self.solver_method, tol=self.solver_tol)
        return v.values

    def _exp_chem(self, v: np.ndarray, u_old: np.ndarray, u_new: np.ndarray,
                  which: int, dt: float) -> np.ndarray:
        lam, mu, zeta = self._lam[which], self._mu[which], self._zeta[which]
        if self.etd_order == 2:
            return _exp_ramp_values(lam, mu, self.eps, dt, v, zeta * u_old,
                                    zeta * u_new, self.grid)
        return _exp_propagate_values(lam, mu, self.eps, dt, v, zeta * u_new, self.grid)

    def advance_chemicals(self, u_old, u_new, v, dt: float):
        raise NotImplementedError

    def step(self, t: float, u, v, dt: float):
        """Advance (u, v) by dt; returns new arrays plus mass diagnostics."""
        dx = self.grid.dx
        mass_old = np.array([u[0].sum(), u[1].sum(), u[2].sum()]) * dx
        with np.errstate(over="ignore", invalid="ignore"):
            new_u, reaction_rate = _heun_species(u, v, self.p, dx, dt, self.scheme)
        for name, arr in zip(("u1", "u2", "u3"), new_u):
            if not np.all(np.isfinite(arr)):
                raise BlowUpError(name, t + dt)
        mass_pre = np.array([new_u[0].sum(), new_u[1].sum(), new_u[2].sum()]) * dx
        scale = np.maximum(np.abs(mass_old), 1.0)
        residual = float(
            np.max(np.abs((mass_pre - mass_old) / dt - reaction_rate) / scale)
        )
        clipped_u = []
        for i, arr in enumerate(new_u):
            neg_mass = arr.min()
            if neg_mass < 0.0:
                neg = arr < 0.0
                self.clipped[i] += -dx * arr[neg].sum()
                arr = np.where(neg, 0.0, arr)
            clipped_u.append(arr)
        new_v = self.advance_chemicals(u, clipped_u, v, dt)
        for name, arr in zip(("v1", "v2", "v3"), new_v):
            if not np.all(np.isfinite(arr)):
                raise BlowUpError(name, t + dt)
        mass_new = np.array([clipped_u[0].sum(), clipped_u[1].sum(), clipped_u[2].sum()]) * dx
        return tuple(clipped_u), tuple(new_v), mass_new, residual


class _EpsStepper(_Stepper):
    def __init__(self, grid, p, eps, **kw):
        super().__init__(grid, p, eps=eps, **kw)

    def advance_chemicals(self, u_old, u_new, v, dt):
        if self.chemical_mode == "mixed":
            v1 = self.solve_elliptic(u_new[0], 0)
            v2 = self.solve_elliptic(u_new[1], 1)
        else:
            v1 = self._exp_chem(v[0], u_old[0], u_new[0], 0, dt)
            v2 = self._exp_chem(v[1], u_old[1], u_new[1], 1, dt)
        v3 = self._exp_chem(v[2], u_old[2], u_new[2], 2, dt)
        return v1, v2, v3


def step_eps(s: EpsState, p: ModelParams, dt: float, *, scheme: str = "upwind",
             chemical_mode: str = "mixed", solver_method: str = "tridiagonal",
             solver_tol: float = 1e-10, etd_order: int = 2) -> EpsState:
    """One split step of the relaxation-time system."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    st = _EpsStepper(s.grid, p, s.eps, scheme=scheme, chemical_mode=chemical_mode,
                     solver_method=solver_method, solver_tol=solver_tol,
                     etd_order=etd_order)
    u = (s.u1.values, s.u2.values, s.u3.values)
    v = (s.v1.values, s.v2.values, s.v3.values)
    u, v, _, _ = st.step(s.t, u, v, dt)
    g = s.grid
    return EpsState(s.t + dt, s.eps, Field(u[0], g), Field(u[1], g), Field(u[2], g),
                    Field(v[0], g), Field(v[1], g), Field(v[2], g))


def _normalise_output_times(T: float, output_times) -> np.ndarray:
    if output_times is None:
        output_times = np.linspace(0.0, T, 64) if T > 0 else np.array([0.0])
    times = np.unique(np.asarray(output_times, dtype=float))
    if times.size == 0 or times[0] < 0 or times[-1] > T + 1e-12 * max(T, 1.0):
        raise ValueError("output times must lie inside [0, T]")
    if times[0] > 0.0:
        times = np.concatenate([[0.0], times])
    return times


def _integrate(stepper: _Stepper, make_state, u, v, T: float, output_times,
               *, cfl: float, dt_fixed: float | None, record_steps: bool) -> Trajectory:
    times = _normalise_output_times(T, output_times)
    grid = stepper.grid
    dx = grid.dx
    state0 = make_state(0.0, u, v)

    snapshots = [state0]
    dts: list[float] = []
    masses: list[np.ndarray] = []
    residuals: list[float] = []
    initial_mass = np.array([dx * ui.sum() for ui in u])
    n_steps = 0
    max_residual = 0.0

    t = 0.0
    for target in times[1:]:
        while t < target:
            if dt_fixed is not None:
                cap = _stable_dt_values(u, v, stepper.p, dx, 1.0)
                if dt_fixed > cap * (1.0 + 1e-9):
                    raise StabilityError(
                        f"fixed dt {dt_fixed:.3e} exceeds the stability bound "
                        f"{cap:.3e} at t={t:.6g}"
                    )
                nominal = dt_fixed
            else:
                nominal = _stable_dt_values(u, v, stepper.p, dx, cfl)
            remaining = target - t
            dt = remaining if remaining <= nominal * (1.0 + 1e-9) else nominal
            u, v, mass, residual = stepper.step(t, u, v, dt)
            t += dt
            n_steps += 1
            max_residual = max(max_residual, residual)
            if record_steps:
                dts.append(dt)
                masses.append(mass)
                residuals.append(residual)
        t = target
        snapshots.append(make_state(t, u, v))

    return Trajectory(
        times=times,
        states=snapshots,
        step_dts=np.array(dts),
        step_masses=np.array(masses) if masses else np.zeros((0, 3)),
        balance_residuals=np.array(residuals),
        clipped_mass=stepper.clipped.copy(),
        initial_mass=initial_mass,
        n_steps=n_steps,
        max_balance_residual=max_residual,
    )


def run_eps(u10: Field, u20: Field, u30: Field, v30: Field, eps: float, T: float,
            p: ModelParams, output_times=None, *, cfl: float = 0.9,
            dt: float | None = None, scheme: str = "upwind",
            chemical_mode: str = "mixed", solver_method: str = "tridiagonal",
            solver_tol: float = 1e-10, etd_order: int = 2,
            record_steps: bool = True) -> Trajectory:
    """Integrate the relaxation-time system from t = 0 to T.

    The elliptic chemicals are initialised from the species data; v30 is the
    given datum for the slow chemical.  Passing ``dt`` forces a fixed step
    schedule (still shortened to land exactly on output times), which lets a
    paired limit run share the identical schedule.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if eps <= 0:
        raise ValueError("eps must be positive")
    grid = u10.grid
    for f in (u20, u30, v30):
        if f.grid != grid:
            raise ValueError("initial fields live on different grids")
    if min(u10.values.min(), u20.values.min(), u30.values.min(), v30.values.min()) < 0:
        raise ValueError("initial data must be non-negative")

    st = _EpsStepper(grid, p, eps, scheme=scheme, chemical_mode=chemical_mode,
                     solver_method=solver_method, solver_tol=solver_tol,
                     etd_order=etd_order)
    u = (u10.values.copy(), u20.values.copy(), u30.values.copy())
    v1 = st.solve_elliptic(u[0], 0)
    v2 = st.solve_elliptic(u[1], 1)
    v = (v1, v2, v30.values.copy())

    def make_state(t, uu, vv):
        return EpsState(t, eps, Field(uu[0], grid), Field(uu[1], grid), Field(uu[2], grid),
                        Field(vv[0], grid), Field(vv[1], grid), Field(vv[2], grid))

    return _integrate(st, make_state, u, v, T, output_times,
                      cfl=cfl, dt_fixed=dt, record_steps=record_steps)
