"""Tests for the homogeneous ODE systems, integrator and bifurcation sweeps."""

import numpy as np
import pytest

from fastsignal.model import default_params, kinetics
from fastsignal.ode import (
    StiffnessError,
    bifurcation_sweep,
    classify_stability,
    detect_oscillation,
    find_equilibria,
    integrate,
    ode_jacobian_3pop,
    ode_jacobian_pp,
    ode_rhs_3pop,
    ode_rhs_pp,
    OdeTrajectory,
)

P = default_params()


def rk4_reference(rhs, y0, T, dt):
    y = np.array(y0, dtype=float)
    n = int(round(T / dt))
    for _ in range(n):
        k1 = rhs(y)
        k2 = rhs(y + dt / 2 * k1)
        k3 = rhs(y + dt / 2 * k2)
        k4 = rhs(y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def test_rhs_3pop_matches_kinetics():
    rng = np.random.default_rng(0)
    assert np.all(ode_rhs_3pop(np.zeros(3), P) == 0.0)
    f = ode_rhs_3pop(np.array([1.0, 1.0, 1.0]), P)
    assert np.allclose(f, [-0.63, -0.55, -0.11], atol=1e-12)
    for _ in range(20):
        y = rng.random(3) * 2.0
        assert np.all(ode_rhs_3pop(y, P) == np.array(kinetics(*y, P)))


def test_rhs_pp_examples():
    assert np.all(ode_rhs_pp(np.zeros(2), P) == 0.0)
    assert np.all(ode_rhs_pp(np.array([1.0, 0.0]), P) == 0.0)
    f = ode_rhs_pp(np.array([1.0, 1.0]), P)
    assert np.allclose(f, [-0.15, -0.125], atol=1e-12)


def test_pp_jacobian_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(20):
        y = rng.random(2) * 2.0
        J = ode_jacobian_pp(y, P)
        h = 1e-7
        for j in range(2):
            yp, ym = y.copy(), y.copy()
            yp[j] += h
            ym[j] -= h
            col = (ode_rhs_pp(yp, P) - ode_rhs_pp(ym, P)) / (2 * h)
            assert np.max(np.abs(J[:, j] - col)) <= 1e-6


def test_integrate_constant_and_exponential():
    traj = integrate(lambda y: np.zeros_like(y), np.array([1.0, 2.0]), 5.0)
    assert np.allclose(traj.states[-1], [1.0, 2.0])
    rtol = 1e-8
    traj = integrate(lambda y: -y, np.array([1.0]), 1.0, rtol=rtol, atol=1e-12)
    assert abs(traj.states[-1, 0] - np.exp(-1.0)) <= 10 * rtol
    assert traj.n_steps > 0


def test_integrate_matches_rk4_reference():
    rhs = lambda y: ode_rhs_3pop(y, P)
    ref = rk4_reference(rhs, [1.0, 1.0, 1.0], 5.0, 1e-5)
    traj = integrate(rhs, np.array([1.0, 1.0, 1.0]), 5.0, rtol=1e-10, atol=1e-12)
    assert np.max(np.abs(traj.states[-1] - ref)) <= 1e-6


def test_integrate_dense_output_accuracy():
    times = np.linspace(0.0, 10.0, 41)
    traj = integrate(lambda y: -y, np.array([1.0]), 10.0, rtol=1e-10, atol=1e-13,
                     t_eval=times)
    assert np.allclose(traj.times, times)
    assert np.max(np.abs(traj.states[:, 0] - np.exp(-times))) <= 1e-8


def test_integrate_nonnegative_trajectories():
    rhs = lambda y: ode_rhs_3pop(y, P)
    traj = integrate(rhs, np.array([0.5, 0.5, 0.5]), 200.0, t_eval=np.linspace(0, 200, 501))
    assert traj.states.min() >= -1e-10


def test_integrate_validation():
    with pytest.raises(ValueError):
        integrate(lambda y: -y, np.array([1.0]), 1.0, rtol=0.0)
    with pytest.raises(ValueError):
        integrate(lambda y: -y, np.array([1.0]), -1.0)


def test_find_equilibria_3pop_contains_origin():
    rhs = lambda y: ode_rhs_3pop(y, P)
    jac = lambda y: ode_jacobian_3pop(y, P)
    eqs = find_equilibria(rhs, jac, dim=3)
    assert any(np.max(np.abs(e)) <= 1e-12 for e in eqs)
    for e in eqs:
        assert np.max(np.abs(rhs(e))) <= 1e-12
        assert np.min(e) >= 0.0
    # deduplicated: no pair closer than 1e-8
    for i, a in enumerate(eqs):
        for b in eqs[i + 1:]:
            assert np.max(np.abs(a - b)) > 1e-8


def test_find_equilibria_pp_carrying_capacity():
    rhs = lambda y: ode_rhs_pp(y, P)
    jac = lambda y: ode_jacobian_pp(y, P)
    eqs = find_equilibria(rhs, jac, dim=2)
    assert any(np.allclose(e, [1.0, 0.0], atol=1e-10) for e in eqs)


def test_pp_interior_threshold_against_bisection_oracle():
    """The coexistence equilibrium appears at m1* where gamma1 m1/(eta1+1) = k."""
    def has_interior(m1):
        pv = P.with_updates(m1=m1)
        eqs = find_equilibria(lambda y: ode_rhs_pp(y, pv),
                              lambda y: ode_jacobian_pp(y, pv), dim=2)
        return any(np.min(e) > 1e-6 for e in eqs)

    lo, hi = 0.05, 1.5
    assert not has_interior(lo) and has_interior(hi)
    for _ in range(25):
        mid = 0.5 * (lo + hi)
        if has_interior(mid):
            hi = mid
        else:
            lo = mid
    threshold = 0.5 * (lo + hi)
    analytic = P.k * (P.eta1 + 1.0) / P.gamma1
    assert abs(threshold - analytic) <= 1e-4


def test_classify_stability_examples():
    jac3 = lambda y: ode_jacobian_3pop(y, P)
    lams, stable, res = classify_stability(np.zeros(3), jac3)
    assert np.allclose(sorted(lams.real), [-0.1, 0.8, 1.0], atol=1e-12)
    assert not stable
    assert res <= 1e-8

    jacpp = lambda y: ode_jacobian_pp(y, P)
    lams2, stable2, res2 = classify_stability(np.array([1.0, 0.0]), jacpp)
    assert np.allclose(sorted(lams2.real), [-0.8, -0.025], atol=1e-12)
    assert stable2
    assert res2 <= 1e-8


def test_detect_oscillation_rejects_flat_and_decaying():
    t = np.linspace(0.0, 100.0, 2001)
    flat = OdeTrajectory(t, np.ones((t.size, 2)), 0, 0)
    assert not detect_oscillation(flat).detected
    decaying = OdeTrajectory(
        t, np.stack([1.0 + np.exp(-t) * np.cos(t), np.ones_like(t)], axis=1), 0, 0
    )
    assert not detect_oscillation(decaying).detected


def test_detect_oscillation_finds_limit_cycle():
    pv = P.with_updates(eta1=0.2, eta2=0.2, m1=0.8)
    rhs = lambda y: ode_rhs_pp(y, pv)
    traj = integrate(rhs, np.array([1.0, 0.5]), 2000.0,
                     t_eval=np.linspace(0.0, 2000.0, 4001))
    rec = detect_oscillation(traj)
    assert rec.detected
    assert rec.period is not None and rec.period > 0.0
    assert rec.amplitude[0] > 1e-3


def test_bifurcation_sweep_pp_regimes_and_consistency():
    pv = P.with_updates(eta1=0.2, eta2=0.2)
    values = np.linspace(0.05, 1.5, 16)
    points = bifurcation_sweep("pp", "m1", values, pv, T_osc=1500.0)
    by_value = {}
    for bp in points:
        by_value.setdefault(bp.param_value, []).append(bp)
        assert bp.eig_residual <= 1e-8
        assert np.max(np.abs(ode_rhs_pp(bp.state, pv.with_updates(m1=bp.param_value)))) <= 1e-12
    extinction, coexist, oscillating = [], [], []
    for val, branch in by_value.items():
        stable = [bp for bp in branch if bp.stable]
        osc = any(bp.oscillation is not None and bp.oscillation.detected for bp in branch)
        if osc:
            oscillating.append(val)
            # oscillation is reported only where nothing is stable
            assert not stable
        elif any(np.min(bp.state) > 1e-6 for bp in stable):
            coexist.append(val)
        elif stable:
            extinction.append(val)
    assert extinction and coexist and oscillating
    assert max(extinction) < min(coexist) < min(oscillating)


def test_bifurcation_sweep_stability_flips_match_eigenvalues():
    pv = P.with_updates(eta1=0.2, eta2=0.2)
    values = np.linspace(0.3, 0.7, 9)
    points = bifurcation_sweep("pp", "m1", values, pv, T_osc=300.0)
    interior = [bp for bp in points if np.min(bp.state) > 1e-6]
    for bp in interior:
        assert bp.stable == (bp.eigenvalues.real.max() < -1e-10)


def test_bifurcation_sweep_rejects_unknown_model():
    with pytest.raises(ValueError):
        bifurcation_sweep("2pop", "m1", [0.1], P)


def test_integrate_reports_stiffness_failure():
    # finite-time derivative blow-up: y' = -1/y^2 reaches y = 0 at t = 1/3
    with pytest.raises(StiffnessError):
        integrate(lambda y: -1.0 / (y * y), np.array([1.0]), 1.0)
