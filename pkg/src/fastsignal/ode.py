"""Spatially homogeneous dynamics: the three-population and reduced
predator-prey systems, equilibrium/stability analysis, oscillation detection,
and dense bifurcation sweeps.

Sweeps replace continuation: every parameter value gets its own damped-Newton
equilibrium search plus eigenvalue classification, and long integrations are
run only where no non-negative equilibrium is stable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, kinetics, kinetics_jacobian

__all__ = [
    "OdeTrajectory",
    "OscillationRecord",
    "BranchPoint",
    "StiffnessError",
    "ode_rhs_3pop",
    "ode_rhs_pp",
    "ode_jacobian_3pop",
    "ode_jacobian_pp",
    "integrate",
    "find_equilibria",
    "classify_stability",
    "detect_oscillation",
    "bifurcation_sweep",
]


class StiffnessError(RuntimeError):
    """Step size underflowed; the problem is too stiff for the explicit pair."""


@dataclass
class OdeTrajectory:
    times: np.ndarray
    states: np.ndarray  # shape (len(times), dim)
    n_steps: int
    n_rejected: int


def ode_rhs_3pop(y, p: ModelParams) -> np.ndarray:
    """Right-hand side of the three-population system (= the kinetics)."""
    f1, f2, f3 = kinetics(y[0], y[1], y[2], p)
    return np.array([f1, f2, f3])


def ode_jacobian_3pop(y, p: ModelParams) -> np.ndarray:
    return kinetics_jacobian(y[0], y[1], y[2], p)


def ode_rhs_pp(y, p: ModelParams) -> np.ndarray:
    """Reduced one-prey/one-predator system in (u1, u3)."""
    u1, u3 = y
    h1 = p.m1 * u1 / (p.eta1 + u1)
    return np.array(
        [
            p.alpha1 * u1 * (1.0 - u1) - h1 * u3,
            (p.gamma1 * h1 - p.k) * u3 - p.l * u3 * u3,
        ]
    )


def ode_jacobian_pp(y, p: ModelParams) -> np.ndarray:
    u1, u3 = y
    s1 = p.eta1 + u1
    h1 = p.m1 * u1 / s1
    dh1 = p.m1 * p.eta1 / (s1 * s1)
    return np.array(
        [
            [p.alpha1 * (1.0 - 2.0 * u1) - dh1 * u3, -h1],
            [p.gamma1 * dh1 * u3, p.gamma1 * h1 - p.k - 2.0 * p.l * u3],
        ]
    )


# Dormand-Prince 5(4) coefficients
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_ERR = _B5 - _B4


def integrate(rhs, y0, T: float, rtol: float = 1e-8, atol: float = 1e-11,
              t_eval=None, max_step: float = np.inf) -> OdeTrajectory:
    """Adaptive Dormand-Prince 5(4) with cubic Hermite dense output.

    Steps are accepted when the embedded error estimate stays below
    rtol * |state| + atol componentwise (RMS-scaled); requested output times
    are filled by Hermite interpolation on the accepted steps.
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    if T < 0:
        raise ValueError("T must be non-negative")
    y = np.array(y0, dtype=float)
    dim = y.size

    if t_eval is None:
        eval_times = None
        out_t = [0.0]
        out_y = [y.copy()]
    else:
        eval_times = np.asarray(t_eval, dtype=float)
        if eval_times.size and (eval_times[0] < 0 or eval_times[-1] > T * (1 + 1e-12) + 1e-300):
            raise ValueError("t_eval must lie inside [0, T]")
        out_t = []
        out_y = []
        next_eval = 0

    f = rhs(y)
    t = 0.0
    n_steps = 0
    n_rejected = 0

    if eval_times is not None:
        while next_eval < eval_times.size and eval_times[next_eval] <= 0.0:
            out_t.append(eval_times[next_eval])
            out_y.append(y.copy())
            next_eval += 1

    if T == 0.0:
        if eval_times is None:
            return OdeTrajectory(np.array(out_t), np.array(out_y), 0, 0)
        return OdeTrajectory(np.array(out_t), np.array(out_y), 0, 0)

    # initial step from the scale of the data
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f / scale) ** 2))
    h0 = 0.01 * d0 / d1 if (d0 > 1e-12 and d1 > 1e-12) else 1e-3
    h = min(T, h0, max_step)

    k = np.zeros((7, dim))
    while t < T:
        if T - t <= 1e-12 * max(1.0, T):
            t = T
            break
        h = min(h, T - t, max_step)
        if h < 1e-14 * max(1.0, abs(t)):
            raise StiffnessError(f"step size underflow at t={t:.6g}")
        k[0] = f
        for i in range(1, 6):
            yi = y + h * sum(a * k[j] for j, a in enumerate(_A[i]))
            k[i] = rhs(yi)
        y5 = y + h * (_B5[:6] @ k[:6])
        k[6] = rhs(y5)
        err_vec = h * (_ERR @ k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if err <= 1.0:
            t_new = t + h
            f_new = k[6].copy()  # k[6] is a row view; the next step overwrites it
            if eval_times is not None:
                while next_eval < eval_times.size and eval_times[next_eval] <= t_new + 1e-14:
                    s = (eval_times[next_eval] - t) / h
                    # cubic Hermite on (y, f) at both step ends
                    h00 = (1 + 2 * s) * (1 - s) ** 2
                    h10 = s * (1 - s) ** 2
                    h01 = s * s * (3 - 2 * s)
                    h11 = s * s * (s - 1)
                    out_y.append(h00 * y + h10 * h * f + h01 * y5 + h11 * h * f_new)
                    out_t.append(eval_times[next_eval])
                    next_eval += 1
            else:
                out_t.append(t_new)
                out_y.append(y5.copy())
            t, y, f = t_new, y5, f_new
            n_steps += 1
            h *= min(5.0, max(0.2, 0.9 * err ** -0.2 if err > 1e-12 else 5.0))
        else:
            n_rejected += 1
            h *= max(0.2, 0.9 * err ** -0.2)

    if eval_times is not None and next_eval < eval_times.size:
        # times equal to T within round-off
        while next_eval < eval_times.size:
            out_t.append(eval_times[next_eval])
            out_y.append(y.copy())
            next_eval += 1
    return OdeTrajectory(np.array(out_t), np.array(out_y), n_steps, n_rejected)


def _newton(rhs, jac, y0, max_iter: int = 60, tol: float = 1e-12):
    y = np.array(y0, dtype=float)
    fnorm = np.max(np.abs(rhs(y)))
    for _ in range(max_iter):
        if fnorm <= tol:
            return y
        try:
            step = np.linalg.solve(jac(y), rhs(y))
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        for _ in range(40):
            cand = y - lam * step
            cnorm = np.max(np.abs(rhs(cand)))
            if cnorm < fnorm:
                y, fnorm = cand, cnorm
                break
            lam *= 0.5
        else:
            return None
    return y if fnorm <= tol else None


def find_equilibria(rhs, jacobian, guesses=None, dim: int | None = None) -> list[np.ndarray]:
    """Damped Newton from a lattice of guesses; keeps non-negative roots.

    Converged roots (max |rhs| <= 1e-12) are deduplicated to 1e-8 and sorted
    lexicographically for reproducibility.
    """
    if guesses is None:
        if dim is None:
            raise ValueError("need guesses or dim for the default lattice")
        axis = np.linspace(0.0, 1.5, 6)
        guesses = [np.array(g) for g in itertools.product(axis, repeat=dim)]
    roots: list[np.ndarray] = []
    for g in guesses:
        y = _newton(rhs, jacobian, g)
        if y is None:
            continue
        if np.min(y) < -1e-10:
            continue
        y = np.where(np.abs(y) < 1e-10, 0.0, y)
        if np.max(np.abs(rhs(y))) > 1e-12:
            continue
        if any(np.max(np.abs(y - r)) < 1e-8 for r in roots):
            continue
        roots.append(y)
    return sorted(roots, key=tuple)


def _eig_with_residual(J: np.ndarray):
    if J.shape == (2, 2):
        tr = J[0, 0] + J[1, 1]
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        disc = complex(tr * tr - 4.0 * det)
        root = np.sqrt(disc)
        lams = np.array([(tr + root) / 2.0, (tr - root) / 2.0])
        vecs = []
        for lam in lams:
            v = np.array([J[0, 1], lam - J[0, 0]], dtype=complex)
            if np.max(np.abs(v)) < 1e-300:
                v = np.array([lam - J[1, 1], J[1, 0]], dtype=complex)
            if np.max(np.abs(v)) < 1e-300:
                v = np.array([1.0, 0.0], dtype=complex)
            vecs.append(v / np.linalg.norm(v))
        vecs = np.array(vecs).T
    else:
        lams, vecs = np.linalg.eig(J)
    res = max(
        float(np.linalg.norm(J @ vecs[:, i] - lams[i] * vecs[:, i]))
        for i in range(lams.size)
    )
    order = np.argsort(-lams.real)
    return lams[order], res


@dataclass
class OscillationRecord:
    detected: bool
    amplitude: np.ndarray  # peak-to-trough per component after the transient
    period: float | None
    n_peaks: int


@dataclass
class BranchPoint:
    """One equilibrium of one parameter value in a sweep."""

    param_value: float
    state: np.ndarray
    eigenvalues: np.ndarray
    stable: bool
    eig_residual: float
    oscillation: OscillationRecord | None = None


def classify_stability(eq, jacobian) -> tuple[np.ndarray, bool, float]:
    """Eigenvalues (descending real part), stability flag, eigenpair residual."""
    lams, res = _eig_with_residual(np.asarray(jacobian(eq), dtype=float))
    return lams, bool(np.max(lams.real) < -1e-10), res


def detect_oscillation(traj: OdeTrajectory, transient_fraction: float = 0.5,
                       min_peaks: int = 5, min_amplitude: float = 1e-3,
                       period_tol: float = 0.2) -> OscillationRecord:
    """Peak-based oscillation detector on the first component.

    The leading transient is discarded; oscillation requires enough strict
    local maxima, a minimum peak-to-trough amplitude, and agreement of the
    last three inter-peak intervals.
    """
    if not 0.0 <= transient_fraction < 1.0:
        raise ValueError("transient_fraction must lie in [0, 1)")
    t = traj.times
    y = traj.states
    keep = t >= t[0] + transient_fraction * (t[-1] - t[0])
    t = t[keep]
    y = y[keep]
    amplitude = y.max(axis=0) - y.min(axis=0)
    u = y[:, 0]
    interior = (u[1:-1] > u[:-2]) & (u[1:-1] > u[2:])
    peak_idx = np.nonzero(interior)[0] + 1
    n_peaks = int(peak_idx.size)
    detected = False
    period = None
    if n_peaks >= min_peaks and amplitude[0] > min_amplitude:
        gaps = np.diff(t[peak_idx])[-3:]
        if gaps.size == 3 and gaps.max() - gaps.min() <= period_tol * gaps.mean():
            detected = True
            period = float(gaps.mean())
    return OscillationRecord(detected, amplitude, period, n_peaks)


_SWEEP_Y0 = {"3pop": np.array([1.0, 1.0, 0.5]), "pp": np.array([1.0, 0.5])}


def bifurcation_sweep(model: str, param: str, values, p: ModelParams, *,
                      T_osc: float = 2000.0, rtol: float = 1e-8,
                      atol: float = 1e-11, n_eval: int = 4001,
                      y0=None) -> list[BranchPoint]:
    """Equilibria + stability per parameter value, with long integrations and
    oscillation detection wherever no non-negative equilibrium is stable."""
    if model == "3pop":
        rhs_of, jac_of, dim = ode_rhs_3pop, ode_jacobian_3pop, 3
    elif model == "pp":
        rhs_of, jac_of, dim = ode_rhs_pp, ode_jacobian_pp, 2
    else:
        raise ValueError(f"unknown model {model!r}")
    start = _SWEEP_Y0[model] if y0 is None else np.asarray(y0, dtype=float)

    points: list[BranchPoint] = []
    for val in np.asarray(values, dtype=float):
        pv = p.with_updates(**{param: float(val)})
        rhs = lambda y, _pv=pv: rhs_of(y, _pv)
        jac = lambda y, _pv=pv: jac_of(y, _pv)
        eqs = find_equilibria(rhs, jac, dim=dim)
        branch = []
        any_stable = False
        for eq in eqs:
            lams, stable, res = classify_stability(eq, jac)
            any_stable = any_stable or stable
            branch.append(BranchPoint(float(val), eq, lams, stable, res))
        record = None
        if not any_stable:
            traj = integrate(rhs, start, T_osc, rtol=rtol, atol=atol,
                             t_eval=np.linspace(0.0, T_osc, n_eval))
            record = detect_oscillation(traj)
        for bp in branch:
            bp.oscillation = record
        points.extend(branch)
    return points
