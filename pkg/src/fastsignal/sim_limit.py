"""Time integrator for the limiting parabolic-elliptic system.

Identical splitting to the relaxation-time simulator except that the slow
chemical is replaced by an elliptic solve, so all three chemicals satisfy
their resolvent equations at every step.  There is no datum for v3: its
initial value is the resolvent applied to the initial predator density.
"""

from __future__ import annotations

from dataclasses import dataclass

from .grid import Field, Grid
from .model import ModelParams
from .sim_eps import Trajectory, _integrate, _Stepper

__all__ = ["LimitState", "step_limit", "run_limit"]


@dataclass(frozen=True)
class LimitState:
    """Full solution at one time for the limiting system."""

    t: float
    u1: Field
    u2: Field
    u3: Field
    v1: Field
    v2: Field
    v3: Field

    @property
    def grid(self) -> Grid:
        return self.u1.grid


class _LimitStepper(_Stepper):
    def advance_chemicals(self, u_old, u_new, v, dt):
        return (
            self.solve_elliptic(u_new[0], 0),
            self.solve_elliptic(u_new[1], 1),
            self.solve_elliptic(u_new[2], 2),
        )


def step_limit(s: LimitState, p: ModelParams, dt: float, *, scheme: str = "upwind",
               solver_method: str = "tridiagonal", solver_tol: float = 1e-10) -> LimitState:
    """One split step of the limiting system."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    st = _LimitStepper(s.grid, p, scheme=scheme, solver_method=solver_method,
                       solver_tol=solver_tol)
    u = (s.u1.values, s.u2.values, s.u3.values)
    v = (s.v1.values, s.v2.values, s.v3.values)
    u, v, _, _ = st.step(s.t, u, v, dt)
    g = s.grid
    return LimitState(s.t + dt, Field(u[0], g), Field(u[1], g), Field(u[2], g),
                      Field(v[0], g), Field(v[1], g), Field(v[2], g))


def run_limit(u10: Field, u20: Field, u30: Field, T: float, p: ModelParams,
              output_times=None, *, cfl: float = 0.9, dt: float | None = None,
              scheme: str = "upwind", solver_method: str = "tridiagonal",
              solver_tol: float = 1e-10, record_steps: bool = True) -> Trajectory:
    """Integrate the limiting system from t = 0 to T.

    All chemicals, including v3, start from elliptic solves at the species
    data, so the trajectory begins on the critical manifold.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    grid = u10.grid
    for f in (u20, u30):
        if f.grid != grid:
            raise ValueError("initial fields live on different grids")
    if min(u10.values.min(), u20.values.min(), u30.values.min()) < 0:
        raise ValueError("initial data must be non-negative")

    st = _LimitStepper(grid, p, scheme=scheme, solver_method=solver_method,
                       solver_tol=solver_tol)
    u = (u10.values.copy(), u20.values.copy(), u30.values.copy())
    v = (st.solve_elliptic(u[0], 0), st.solve_elliptic(u[1], 1), st.solve_elliptic(u[2], 2))

    def make_state(t, uu, vv):
        return LimitState(t, Field(uu[0], grid), Field(uu[1], grid), Field(uu[2], grid),
                          Field(vv[0], grid), Field(vv[1], grid), Field(vv[2], grid))

    return _integrate(st, make_state, u, v, T, output_times,
                      cfl=cfl, dt_fixed=dt, record_steps=record_steps)
