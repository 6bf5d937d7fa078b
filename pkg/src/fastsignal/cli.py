"""Command-line entry point, flat key=value configuration, and file emission.

Subcommands: simulate-eps, simulate-limit, rate-study, manifold-distance,
ode-simulate, ode-bifurcation, verify.  Exit codes: 0 success, 1 validation
error, 2 numerical failure, 3 verification-gate failure.  Every output
directory receives a config echo sufficient to re-run the experiment.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    InitialLayerSpec,
    fit_slope,
    initial_layer_size,
    make_layer_data,
    manifold_distance,
    norm_l2,
    rate_study,
    semigroup_identity_residual,
)
from .grid import Field, make_grid, mode_vector
from .linsolve import (
    HelmholtzOperator,
    SolverConvergenceError,
    helmholtz_solve,
)
from .model import ModelParams, default_params
from .ode import (
    StiffnessError,
    bifurcation_sweep,
    detect_oscillation,
    integrate,
    ode_rhs_3pop,
    ode_rhs_pp,
)
from .sim_eps import (
    BlowUpError,
    StabilityError,
    default_initial_fields,
    run_eps,
    stable_dt,
    EpsState,
)
from .sim_limit import run_limit

__all__ = ["RunConfig", "ConfigError", "parse_config", "main", "entry"]

OUTPUT_ROOT_ENV = "FASTSIGNAL_OUTPUT_ROOT"

_PARAM_KEYS = [
    "d1", "d2", "d3", "chi1", "chi2", "chi31", "chi32",
    "alpha1", "alpha2", "beta1", "beta2", "m1", "m2", "eta1", "eta2",
    "gamma1", "gamma2", "k", "l",
    "lambda1", "lambda2", "lambda3", "mu1", "mu2", "mu3",
    "zeta1", "zeta2", "zeta3",
]

# key -> (type tag, default); types: float, int, str, floatlist, gamma, choice:<opts>
_DEFAULT_PARAMS = default_params()
_REGISTRY: dict[str, tuple[str, object]] = {
    **{k: ("float", getattr(_DEFAULT_PARAMS, k)) for k in _PARAM_KEYS},
    "L": ("float", 1.0),
    "n": ("int", 256),
    "T": ("float", None),
    "cfl": ("float", 0.9),
    "output_count": ("int", 64),
    "eps": ("float", 1e-3),
    "eps_list": ("floatlist", (1e-2, 1e-3, 1e-4, 1e-5)),
    "gamma": ("gamma", "on_manifold"),
    "chemical_mode": ("choice:mixed,fully_parabolic", "mixed"),
    "flux_scheme": ("choice:upwind,central", "upwind"),
    "solver_method": ("choice:tridiagonal,gmres,spectral", "tridiagonal"),
    "solver_tol": ("float", 1e-10),
    "seed": ("int", 0),
    "outdir": ("str", "out"),
    "workers": ("int", 1),
    "ode_model": ("choice:3pop,pp", "3pop"),
    "ode_rtol": ("float", 1e-8),
    "ode_atol": ("float", 1e-11),
    "sweep_param": ("str", "m1"),
    "sweep_min": ("float", 0.05),
    "sweep_max": ("float", 1.5),
    "sweep_count": ("int", 200),
    "t_osc": ("float", 2000.0),
}

_SUBCOMMAND_T = {
    "simulate-eps": 500.0,
    "simulate-limit": 500.0,
    "rate-study": 2.0,
    "manifold-distance": 2.0,
    "ode-simulate": 2000.0,
    "ode-bifurcation": 2000.0,
    "verify": 10.0,
}


class ConfigError(ValueError):
    """Configuration file or flag rejected; message carries key and location."""


def _coerce(key: str, raw, where: str):
    typ, _ = _REGISTRY[key]
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if typ == "float":
            return float(raw)
        if typ == "int":
            return int(raw)
        if typ == "str":
            return raw
        if typ == "floatlist":
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        if typ == "gamma":
            return raw if raw == "on_manifold" else float(raw)
        if typ.startswith("choice:"):
            options = typ.split(":", 1)[1].split(",")
            if raw not in options:
                raise ConfigError(
                    f"{where}: key {key!r} must be one of {options}, got {raw!r}"
                )
            return raw
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{where}: cannot parse value {raw!r} for key {key!r}") from None
    raise ConfigError(f"{where}: unhandled key type for {key!r}")


class RunConfig:
    """Resolved configuration: defaults, then file values, then flag values."""

    def __init__(self, values: dict):
        self._values = dict(values)

    def __getattr__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(key) from None

    def as_dict(self) -> dict:
        return dict(self._values)

    def model_params(self) -> ModelParams:
        return ModelParams(**{k: self._values[k] for k in _PARAM_KEYS})

    def make_grid(self):
        return make_grid(self.L, self.n)

    def resolve_T(self, subcommand: str) -> float:
        return self.T if self.T is not None else _SUBCOMMAND_T[subcommand]


def _read_config_file(path: str) -> dict:
    raw = {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, value = (tok.strip() for tok in stripped.split("=", 1))
        if key not in _REGISTRY:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if not value:
            raise ConfigError(f"{path}:{lineno}: empty value for key {key!r}")
        raw[key] = _coerce(key, value, f"{path}:{lineno}")
    return raw


def _validate(values: dict) -> None:
    try:
        ModelParams(**{k: values[k] for k in _PARAM_KEYS})
        make_grid(values["L"], values["n"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if values["T"] is not None and values["T"] < 0:
        raise ConfigError("key 'T' must be non-negative")
    if not 0.0 < values["cfl"] <= 1.0:
        raise ConfigError("key 'cfl' must lie in (0, 1]")
    if values["output_count"] < 1:
        raise ConfigError("key 'output_count' must be >= 1")
    if values["eps"] <= 0:
        raise ConfigError("key 'eps' must be positive")
    el = values["eps_list"]
    if len(el) < 1 or any(e <= 0 for e in el) or any(
        b >= a for a, b in zip(el, el[1:])
    ):
        raise ConfigError("key 'eps_list' must be positive and strictly decreasing")
    g = values["gamma"]
    if g != "on_manifold" and g < 0:
        raise ConfigError("key 'gamma' must be non-negative or 'on_manifold'")
    if values["solver_tol"] <= 0:
        raise ConfigError("key 'solver_tol' must be positive")
    if values["workers"] < 1:
        raise ConfigError("key 'workers' must be >= 1")
    if values["sweep_count"] < 1 or values["sweep_max"] <= values["sweep_min"]:
        raise ConfigError("sweep range must be non-empty with sweep_count >= 1")
    if values["ode_rtol"] <= 0 or values["ode_atol"] <= 0:
        raise ConfigError("ODE tolerances must be positive")


def parse_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, an optional config file, and flag overrides."""
    values = {k: d for k, (_, d) in _REGISTRY.items()}
    if path is not None:
        values.update(_read_config_file(path))
    for key, raw in (overrides or {}).items():
        if key not in _REGISTRY:
            raise ConfigError(f"flags: unknown key {key!r}")
        if raw is None:
            continue
        values[key] = _coerce(key, raw, "flags")
    _validate(values)
    return RunConfig(values)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def _prepare_outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.outdir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_echo(outdir: Path, cfg: RunConfig, subcommand: str, T: float) -> None:
    lines = [f"# fastsignal {subcommand}"]
    values = cfg.as_dict()
    values["T"] = T
    for key in sorted(values):
        if values[key] is None:
            continue
        lines.append(f"{key} = {_fmt(values[key])}")
    (outdir / "config_echo.txt").write_text("\n".join(lines) + "\n")


def _write_snapshots(outdir: Path, traj, columns) -> None:
    x = traj.states[0].grid.centers
    for i, (t, s) in enumerate(zip(traj.times, traj.states)):
        rows = ["x," + ",".join(columns)]
        data = [getattr(s, c).values for c in columns]
        for j in range(x.size):
            rows.append(",".join([f"{x[j]:.17g}"] + [f"{d[j]:.17g}" for d in data]))
        (outdir / f"t{i}_{t:.6g}.csv").write_text("\n".join(rows) + "\n")


def _sim_summary(traj) -> str:
    frac = traj.clipped_mass / np.maximum(traj.initial_mass, 1e-300)
    return (
        f"steps = {traj.n_steps}\n"
        f"max_mass_balance_residual = {traj.max_balance_residual:.6e}\n"
        f"clipped_mass_fraction = {','.join(f'{f:.6e}' for f in frac)}\n"
    )


def _initial_data(cfg: RunConfig, p: ModelParams, eps: float):
    grid = cfg.make_grid()
    u10, u20, u30 = default_initial_fields(grid)
    v30 = make_layer_data(u30, InitialLayerSpec(cfg.gamma, eps), p)
    return grid, u10, u20, u30, v30


def _cmd_simulate_eps(cfg: RunConfig) -> int:
    p = cfg.model_params()
    T = cfg.resolve_T("simulate-eps")
    grid, u10, u20, u30, v30 = _initial_data(cfg, p, cfg.eps)
    times = np.linspace(0.0, T, cfg.output_count) if T > 0 else None
    probe = EpsState(0.0, cfg.eps, u10, u20, u30, v30, v30, v30)
    est_steps = T / stable_dt(probe, p, cfg.cfl) if T > 0 else 0
    traj = run_eps(
        u10, u20, u30, v30, cfg.eps, T, p, times, cfl=cfg.cfl,
        scheme=cfg.flux_scheme, chemical_mode=cfg.chemical_mode,
        solver_method=cfg.solver_method, solver_tol=cfg.solver_tol,
        record_steps=est_steps <= 2e6,
    )
    out = _prepare_outdir(cfg)
    _write_echo(out, cfg, "simulate-eps", T)
    _write_snapshots(out, traj, ("u1", "u2", "u3", "v1", "v2", "v3"))
    (out / "summary.txt").write_text(_sim_summary(traj))
    print(f"fastsignal: status=ok cmd=simulate-eps steps={traj.n_steps} outdir={out}")
    return 0


def _cmd_simulate_limit(cfg: RunConfig) -> int:
    p = cfg.model_params()
    T = cfg.resolve_T("simulate-limit")
    grid = cfg.make_grid()
    u10, u20, u30 = default_initial_fields(grid)
    times = np.linspace(0.0, T, cfg.output_count) if T > 0 else None
    traj = run_limit(
        u10, u20, u30, T, p, times, cfl=cfg.cfl, scheme=cfg.flux_scheme,
        solver_method=cfg.solver_method, solver_tol=cfg.solver_tol,
        record_steps=True,
    )
    out = _prepare_outdir(cfg)
    _write_echo(out, cfg, "simulate-limit", T)
    _write_snapshots(out, traj, ("u1", "u2", "u3", "v1", "v2", "v3"))
    (out / "summary.txt").write_text(_sim_summary(traj))
    print(f"fastsignal: status=ok cmd=simulate-limit steps={traj.n_steps} outdir={out}")
    return 0


def _cmd_rate_study(cfg: RunConfig) -> int:
    p = cfg.model_params()
    T = cfg.resolve_T("rate-study")
    grid = cfg.make_grid()
    u10, u20, u30 = default_initial_fields(grid)
    report = rate_study(
        u10, u20, u30, cfg.gamma, cfg.eps_list, T, p,
        n_outputs=cfg.output_count, cfl=min(0.45, cfg.cfl),
        scheme=cfg.flux_scheme, solver_method=cfg.solver_method,
        solver_tol=cfg.solver_tol, workers=cfg.workers,
    )
    out = _prepare_outdir(cfg)
    _write_echo(out, cfg, "rate-study", T)
    (out / "rate_report.csv").write_text(report.to_csv())
    (out / "summary.txt").write_text(report.summary_text())
    slopes = " ".join(
        f"{name}={slope:.3f}" for name, (slope, _, _) in sorted(report.slopes.items())
    )
    print(f"fastsignal: status=ok cmd=rate-study {slopes} outdir={out}")
    return 0


def _cmd_manifold_distance(cfg: RunConfig) -> int:
    p = cfg.model_params()
    T = cfg.resolve_T("manifold-distance")
    grid = cfg.make_grid()
    u10, u20, u30 = default_initial_fields(grid)
    times = np.linspace(0.0, T, cfg.output_count)
    rows = ["eps,t,eps_t"]
    sup_late = []
    ratios = []
    for eps in cfg.eps_list:
        v30 = make_layer_data(u30, InitialLayerSpec(cfg.gamma, eps), p)
        eps_in = initial_layer_size(u30, v30, p)
        traj = run_eps(
            u10, u20, u30, v30, eps, T, p, times, cfl=min(0.45, cfg.cfl),
            scheme=cfg.flux_scheme, solver_method=cfg.solver_method,
            solver_tol=cfg.solver_tol, record_steps=False,
        )
        dist = np.array([manifold_distance(s, p) for s in traj.states])
        for t, d in zip(traj.times, dist):
            rows.append(f"{eps:.17g},{t:.17g},{d:.17g}")
        late = dist[traj.times >= 0.1 * T]
        sup_late.append(float(late.max()))
        ratios.append(float(dist.max() / max(eps_in, 1e-300)))
    out = _prepare_outdir(cfg)
    _write_echo(out, cfg, "manifold-distance", T)
    (out / "manifold_distance.csv").write_text("\n".join(rows) + "\n")
    lines = [
        f"eps = {_fmt(tuple(cfg.eps_list))}",
        f"sup_eps_t_late = {','.join(f'{v:.6e}' for v in sup_late)}",
        f"max_over_initial = {','.join(f'{v:.6e}' for v in ratios)}",
    ]
    slope_msg = ""
    try:
        slope, res, npts = fit_slope(np.array(cfg.eps_list), np.array(sup_late))
        lines.append(f"late_distance_slope = {slope:.4f} (residual {res:.3e}, {npts} points)")
        slope_msg = f" slope={slope:.3f}"
    except ValueError as exc:
        lines.append(f"late_distance_slope = unavailable ({exc})")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print(f"fastsignal: status=ok cmd=manifold-distance{slope_msg} outdir={out}")
    return 0


def _cmd_ode_simulate(cfg: RunConfig) -> int:
    p = cfg.model_params()
    T = cfg.resolve_T("ode-simulate")
    if cfg.ode_model == "3pop":
        rhs = lambda y: ode_rhs_3pop(y, p)
        y0 = np.array([1.0, 1.0, 0.5])
        columns = ("u1", "u2", "u3")
    else:
        rhs = lambda y: ode_rhs_pp(y, p)
        y0 = np.array([1.0, 0.5])
        columns = ("u1", "u3")
    n_eval = max(cfg.output_count, 2001)
    traj = integrate(rhs, y0, T, rtol=cfg.ode_rtol, atol=cfg.ode_atol,
                     t_eval=np.linspace(0.0, T, n_eval))
    osc = detect_oscillation(traj)
    out = _prepare_outdir(cfg)
    _write_echo(out, cfg, "ode-simulate", T)
    rows = ["t," + ",".join(columns)]
    for t, y in zip(traj.times, traj.states):
        rows.append(",".join([f"{t:.17g}"] + [f"{v:.17g}" for v in y]))
    (out / "ode.csv").write_text("\n".join(rows) + "\n")
    (out / "summary.txt").write_text(
        f"model = {cfg.ode_model}\n"
        f"steps = {traj.n_steps}\nrejected = {traj.n_rejected}\n"
        f"oscillating = {osc.detected}\n"
        f"period = {osc.period if osc.period is not None else 'none'}\n"
        f"amplitude = {','.join(f'{a:.6e}' for a in osc.amplitude)}\n"
    )
    print(
        f"fastsignal: status=ok cmd=ode-simulate oscillating={osc.detected} outdir={out}"
    )
    return 0


def _cmd_ode_bifurcation(cfg: RunConfig) -> int:
    p = cfg.model_params()
    values = np.linspace(cfg.sweep_min, cfg.sweep_max, cfg.sweep_count)
    points = bifurcation_sweep(
        cfg.ode_model, cfg.sweep_param, values, p, T_osc=cfg.t_osc,
        rtol=cfg.ode_rtol, atol=cfg.ode_atol,
    )
    out = _prepare_outdir(cfg)
    _write_echo(out, cfg, "ode-bifurcation", cfg.t_osc)
    rows = ["param,u1,u2,u3,re_lambda_max,stable,oscillating,amplitude_u1,period"]
    for bp in points:
        if cfg.ode_model == "3pop":
            u1, u2, u3 = bp.state
        else:
            u1, u3 = bp.state
            u2 = float("nan")
        osc = bp.oscillation
        oscillating = 1 if (osc is not None and osc.detected) else 0
        amp = osc.amplitude[0] if osc is not None else float("nan")
        period = osc.period if (osc is not None and osc.period is not None) else float("nan")
        rows.append(
            f"{bp.param_value:.17g},{u1:.17g},{u2:.17g},{u3:.17g},"
            f"{bp.eigenvalues.real.max():.17g},{int(bp.stable)},{oscillating},"
            f"{amp:.17g},{period:.17g}"
        )
    (out / "branch.csv").write_text("\n".join(rows) + "\n")
    n_osc = sum(
        1 for bp in points if bp.oscillation is not None and bp.oscillation.detected
    )
    print(
        f"fastsignal: status=ok cmd=ode-bifurcation points={len(points)} "
        f"oscillating_points={n_osc} outdir={out}"
    )
    return 0


def _verify_semigroup(rng) -> list[str]:
    failures = []
    grid = make_grid(1.0, 64)
    lam, mu = 1.0, 0.1
    for mus in (1.0, 10.0, 40.0):
        S = mus / mu
        for trial in range(20):
            f = Field(rng.standard_normal(grid.n), grid)
            res = semigroup_identity_residual(f, lam, mu, S)
            bound = np.exp(-mu * S) / mu * norm_l2(f) + 1e-14
            if res > bound:
                failures.append(
                    f"semigroup bound violated at muS={mus} trial={trial}: "
                    f"{res:.3e} > {bound:.3e}"
                )
    for mus in (1.0, 5.0):
        S = mus / mu
        c = 0.7
        res = semigroup_identity_residual(Field.constant(grid, c), lam, mu, S)
        exact = c * np.exp(-mu * S) / mu
        if abs(res - exact) > 1e-12 * exact:
            failures.append(
                f"semigroup single-mode mismatch at muS={mus}: {res!r} vs {exact!r}"
            )
    return failures


def _verify_solvers(rng) -> list[str]:
    failures = []
    grid = make_grid(1.0, 128)
    op = HelmholtzOperator(1.0, 0.1, grid)
    for trial in range(50):
        coeffs = rng.standard_normal(9)
        vals = coeffs[0] * np.ones(grid.n) + sum(
            coeffs[k] * mode_vector(grid, k) for k in range(1, 9)
        )
        rhs = Field(vals, grid)
        sols = {}
        for method in ("tridiagonal", "spectral", "gmres"):
            v, _ = helmholtz_solve(op, rhs, method=method, tol=1e-10)
            sols[method] = v
        ref = norm_l2(sols["tridiagonal"])
        for a in ("tridiagonal", "spectral"):
            for b in ("spectral", "gmres"):
                if a == b:
                    continue
                diff = norm_l2(Field(sols[a].values - sols[b].values, grid))
                if diff > 1e-9 * ref:
                    failures.append(
                        f"solver disagreement {a} vs {b} on trial {trial}: "
                        f"{diff / ref:.3e} relative"
                    )
    return failures


def _verify_homogeneous(cfg: RunConfig) -> list[str]:
    failures = []
    p = cfg.model_params()
    grid = make_grid(cfg.L, 32)
    T = 10.0
    times = np.linspace(0.0, T, 21)
    u10 = Field.constant(grid, 1.0)
    u20 = Field.constant(grid, 1.0)
    u30 = Field.constant(grid, 0.5)
    v30 = Field.constant(grid, 0.5 * p.zeta3 / p.mu3)
    ref = integrate(
        lambda y: ode_rhs_3pop(y, p), np.array([1.0, 1.0, 0.5]), T,
        rtol=1e-10, atol=1e-12, t_eval=times,
    )
    eps_traj = run_eps(u10, u20, u30, v30, 1e-3, T, p, times)
    lim_traj = run_limit(u10, u20, u30, T, p, times)
    for name, traj in (("eps", eps_traj), ("limit", lim_traj)):
        dev = float(np.max(np.abs(traj.spatial_means() - ref.states)))
        if dev > 1e-6:
            failures.append(f"homogeneous {name} run deviates from ODE by {dev:.3e}")
    return failures


def _cmd_verify(cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    checks = (
        ("semigroup-identity", lambda: _verify_semigroup(rng)),
        ("solver-cross-agreement", lambda: _verify_solvers(rng)),
        ("homogeneous-pde-ode", lambda: _verify_homogeneous(cfg)),
    )
    any_failed = False
    for name, check in checks:
        failures = check()
        if failures:
            any_failed = True
            print(f"FAIL {name}: {failures[0]}" + (
                f" (+{len(failures) - 1} more)" if len(failures) > 1 else ""))
        else:
            print(f"PASS {name}")
    if any_failed:
        print("fastsignal: status=error kind=verify msg=\"verification gate failed\"")
        return 3
    print("fastsignal: status=ok cmd=verify")
    return 0


_COMMANDS = {
    "simulate-eps": _cmd_simulate_eps,
    "simulate-limit": _cmd_simulate_limit,
    "rate-study": _cmd_rate_study,
    "manifold-distance": _cmd_manifold_distance,
    "ode-simulate": _cmd_ode_simulate,
    "ode-bifurcation": _cmd_ode_bifurcation,
    "verify": _cmd_verify,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastsignal",
        description="Numerical laboratory for a chemotaxis system and its "
                    "fast signal diffusion limit",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="flat key = value file")
        for key in _REGISTRY:
            sp.add_argument(f"--{key}", default=None, metavar="V")
    return parser


def main(argv=None) -> int:
    """Run one subcommand; returns the process exit code."""
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; that is a validation failure here
        return 0 if exc.code in (0, None) else 1
    overrides = {k: getattr(args, k) for k in _REGISTRY if getattr(args, k) is not None}
    try:
        cfg = parse_config(args.config, overrides)
        return _COMMANDS[args.subcommand](cfg)
    except ConfigError as exc:
        print(f'fastsignal: status=error kind=validation msg="{exc}"', file=sys.stderr)
        return 1
    except (BlowUpError, StabilityError, StiffnessError, SolverConvergenceError) as exc:
        print(f'fastsignal: status=error kind=numerical msg="{exc}"', file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f'fastsignal: status=error kind=validation msg="{exc}"', file=sys.stderr)
        return 1


def entry() -> None:
    raise SystemExit(main())
