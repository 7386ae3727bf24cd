"""Command-line driver: INI configuration, experiment runs, CSV and manifest output.

    mfglab run --config exp.ini [--seed N] [--out DIR] [--threads N]
    mfglab describe master

Exit status: 0 when every check of the run passes, 2 for configuration
errors, 3 for parameter precondition violations, 4 for numerical failures
(CFL, NaN, blow-up) and 5 when a check misses its tolerance.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from mfglab import __version__
from mfglab import measure_ito as mi
from mfglab import pareto_growth as pg
from mfglab.master_pde import FRAME, cfl_number, exact_field, restriction_check, solve_master
from mfglab.mkv_particles import conditional_variance_check, simulate_mkv, write_cloud_csv
from mfglab.model_core import (
    LIMIT,
    InitialLaw,
    LqParams,
    NumericalError,
    ParameterError,
    TimeGrid,
    map_ordered,
    stream,
    AUX,
)
from mfglab.nplayer_game import equilibrium_cost_check, nash_gap, nash_holds, simulate_equilibrium, write_nash_csv
from mfglab.riccati import closed_curves, integrate_riccati, write_curves_csv

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_NUMERICAL, EXIT_TOLERANCE = 0, 2, 3, 4, 5

ENV_OUT = "MFGLAB_OUT"
EXPERIMENTS = ("riccati", "nplayer", "nash", "mkv", "master", "ito", "pareto")

DEFAULTS: dict[str, dict[str, str]] = {
    "experiment": {"name": "all", "seed": "1"},
    "model": {"a": "0.1", "q": "0.2", "eps": "0.5", "c": "0.3", "sigma": "1.0", "rho": "0.5", "T": "1.0", "N": LIMIT},
    "pareto": {"k": "3", "a": "1", "b": "1", "c": "1", "E": "1", "p": "2", "sigma": "0.5", "r": "0", "T": "1"},
    "numerics": {
        "riccati_steps": "1000",
        "nplayer_n": "10",
        "nplayer_steps": "200",
        "nplayer_scenarios": "2000",
        "nash_scenarios": "2000",
        "nash_lambdas": "0.5, 0.75, 1, 1.25, 1.5",
        "mkv_particles": "2000",
        "mkv_scenarios": "8",
        "mkv_steps": "200",
        "master_nx": "31",
        "master_nm": "31",
        "master_steps": "128",
        "restriction_measures": "20",
        "ito_particles": "200",
        "ito_scenarios": "32",
        "ito_steps": "100",
        "pareto_particles": "2000",
        "pareto_scenarios": "400",
        "pareto_steps": "100",
        "pareto_deviations": "1.2, 1.5",
    },
    "tolerances": {
        "riccati_gap": "1e-5",
        "k_se": "3",
        "mkv_mean": "0.15",
        "mkv_var": "0.25",
        "master_error": "0.01",
        "restriction": "1e-8",
        "ito_gap": "0.2",
        "pareto_root": "1e-12",
        "ks_level": "0.01",
    },
    "output": {"dir": "", "csv": "on"},
}

DESCRIPTIONS = {
    "riccati": (
        "Scalar Riccati equation of the N-player LQ interbank game and of its mean-field limit: "
        "explicit solution eta_t against a backward RK4 integration, the companion chi_t, "
        "terminal conditions eta_T = c and chi_T = 0, and the 1/N^2 gap between eta^N and eta^inf."
    ),
    "nplayer": (
        "Exact Nash equilibrium of the N-player game: Euler-Maruyama paths of the equilibrium dynamics, "
        "realized costs compared with the value function eta_0 (xbar - x^i)^2 / 2 + chi_0, "
        "with a step-halving bias bound."
    ),
    "nash": (
        "Nash property of the closed-loop equilibrium: player 1 rescales its equilibrium gain by lambda "
        "while the others keep theirs; lambda = 1 must minimize the mean cost (common random numbers)."
    ),
    "mkv": (
        "Conditional McKean-Vlasov dynamics of the mean-field limit: particle mean against "
        "m_0 + sigma rho W0_t and particle variance against the variance ODE "
        "v' = -2 (a + q + eta_t) v + sigma^2 (1 - rho^2)."
    ),
    "master": (
        "Master equation of the LQ model on a (t, x, m) lattice, solved backward from the terminal condition "
        "V(T, x, m) = c (m - x)^2 / 2 and compared with the exact decoupling field "
        "eta_t (x - m)^2 / 2 + chi_t; also the restriction identity int d_x V(t, x, mu) dmu(x) = 0."
    ),
    "ito": (
        "Ito formula along a flow of conditional measures for cylindrical functionals "
        "(mean, squared mean, variance) and its joint version for x times the mean: drift term, "
        "common-noise integral, idiosyncratic and common second-order terms, and the cross term."
    ),
    "pareto": (
        "Pareto growth model: positive root B of the algebraic equation and gamma = (B (p + bk) / E)^(1/(p-1)), "
        "Pareto invariance X_t = X_0 q_t checked by Kolmogorov-Smirnov, the parameterized master equation "
        "residual of B x^(p+bk) / q^(bk), and the martingale test of the equilibrium with deviated controls."
    ),
}


class ConfigError(Exception):
    """The configuration file is missing, unreadable or malformed."""


@dataclass(frozen=True)
class Check:
    experiment: str
    name: str
    passed: bool
    value: float
    tolerance: float


# --- configuration --------------------------------------------------------


def load_config(path: str | None, seed: int | None = None) -> dict[str, dict[str, str]]:
    cfg = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for sec in parser.sections():
            if sec not in cfg:
                raise ConfigError(f"unknown section [{sec}]")
            for key, val in parser.items(sec):
                if key not in cfg[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                cfg[sec][key] = val.strip()
    if seed is not None:
        cfg["experiment"]["seed"] = str(seed)
    name = cfg["experiment"]["name"]
    if name not in EXPERIMENTS + ("all",):
        raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS + ('all',))}")
    return cfg


def config_hash(cfg: dict[str, dict[str, str]]) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _num(cfg, sec, key, kind=float):
    raw = cfg[sec][key]
    try:
        v = kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key} = {raw!r} is not a valid {kind.__name__}") from exc
    if kind is float and not math.isfinite(v):
        raise ConfigError(f"[{sec}] {key} must be finite")
    return v


def _floats(cfg, sec, key) -> list[float]:
    try:
        return [float(s) for s in cfg[sec][key].split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key} must be a comma-separated list of numbers") from exc


def lq_params(cfg) -> LqParams:
    kw = {f.name: _num(cfg, "model", f.name) for f in fields(LqParams) if f.name != "N"}
    raw = cfg["model"]["N"]
    N = LIMIT if raw == LIMIT else _num(cfg, "model", "N", int)
    return LqParams(**kw, N=N)


def pareto_params(cfg) -> pg.ParetoParams:
    return pg.ParetoParams(**{k: _num(cfg, "pareto", k) for k in DEFAULTS["pareto"]})


@dataclass
class Context:
    cfg: dict
    seed: int
    out: Path
    threads: int
    write_csv: bool

    def num(self, key, kind=int):
        return _num(self.cfg, "numerics", key, kind)

    def tol(self, key):
        return _num(self.cfg, "tolerances", key)

    def path(self, name: str) -> Path | None:
        return self.out / name if self.write_csv else None


# --- validation before any computation -----------------------------------


def _positive(ctx, *keys):
    for k in keys:
        if ctx.num(k) < 1:
            raise ParameterError(f"[numerics] {k} must be positive")


def validate(ctx: Context, names: list[str]) -> None:
    """Build every parameter object and check every precondition up front."""
    p = lq_params(ctx.cfg)
    if not 0 <= ctx.seed < 2**64:
        raise ParameterError("seed must be a 64-bit unsigned integer")
    for key in DEFAULTS["tolerances"]:
        if ctx.tol(key) < 0:
            raise ParameterError(f"[tolerances] {key} must be nonnegative")
    limit = p.with_(N=LIMIT)
    if "riccati" in names:
        _positive(ctx, "riccati_steps")
        closed_curves(p, TimeGrid(0.0, p.T, 1))
    if "nplayer" in names or "nash" in names or "riccati" in names:
        n = ctx.num("nplayer_n")
        if n < 2:
            raise ParameterError("[numerics] nplayer_n must be at least 2")
        pn = p.with_(N=n)
        _positive(ctx, "nplayer_steps", "nplayer_scenarios", "nash_scenarios")
        if ctx.num("nplayer_steps") % 2:
            raise ParameterError("[numerics] nplayer_steps must be even (step halving)")
        grid = TimeGrid(0.0, p.T, ctx.num("nplayer_steps"))
        rate = p.a + p.q + float(np.max(closed_curves(pn, TimeGrid(0.0, p.T, 16)).eta))
        if grid.dt * 2 >= 1.0 / rate:
            raise ParameterError("nplayer_steps too small for the explicit scheme at half resolution")
    if "nash" in names and 1.0 not in _floats(ctx.cfg, "numerics", "nash_lambdas"):
        raise ParameterError("[numerics] nash_lambdas must include 1")
    if "mkv" in names:
        _positive(ctx, "mkv_particles", "mkv_scenarios", "mkv_steps")
    if "master" in names:
        _positive(ctx, "master_nx", "master_nm", "master_steps", "restriction_measures")
        nx, nm = ctx.num("master_nx"), ctx.num("master_nm")
        if min(nx, nm) < 2 * FRAME + 1:
            raise ParameterError("master lattice too small")
        dx, dm = 6.0 / (nx - 1), 6.0 / (nm - 1)
        cfl = cfl_number(limit, p.T / ctx.num("master_steps"), dx, dm, 6.0)
        if cfl > 0.5:
            raise NumericalError(f"master lattice violates the CFL bound ({cfl:.3f} > 1/2)")
    if "ito" in names:
        _positive(ctx, "ito_particles", "ito_scenarios", "ito_steps")
        if ctx.num("ito_steps") % 2:
            raise ParameterError("[numerics] ito_steps must be even")
    if "pareto" in names:
        pp = pareto_params(ctx.cfg)
        _positive(ctx, "pareto_particles", "pareto_scenarios", "pareto_steps")
        if ctx.num("pareto_steps") % 10:
            raise ParameterError("[numerics] pareto_steps must be a multiple of 10")
        if any(f < 1 for f in _floats(ctx.cfg, "numerics", "pareto_deviations")):
            raise ParameterError("deviation factors must be at least 1 (deviated paths stay on x >= q)")
        if pg.solve_B(pp).B <= 0.0:
            raise ParameterError("the equation for B has no positive root for these parameters")


# --- experiments -----------------------------------------------------------


def run_riccati(ctx: Context) -> list[Check]:
    p = lq_params(ctx.cfg)
    grid = TimeGrid(0.0, p.T, ctx.num("riccati_steps"))
    checks = []
    curves = []
    for regime in (p.with_(N=LIMIT), p.with_(N=ctx.num("nplayer_n"))):
        cl = closed_curves(regime, grid)
        rk = integrate_riccati(regime, grid)
        gap = max(np.max(np.abs(cl.eta - rk.eta)), np.max(np.abs(cl.chi - rk.chi)))
        tag = "limit" if regime.is_limit else f"N={regime.N}"
        checks.append(Check("riccati", f"closed_vs_rk4[{tag}]", bool(gap <= ctx.tol("riccati_gap")), float(gap), ctx.tol("riccati_gap")))
        anchored = cl.eta[-1] == p.c and cl.chi[-1] == 0.0 and rk.eta[-1] == p.c and rk.chi[-1] == 0.0
        checks.append(Check("riccati", f"terminal_anchor[{tag}]", bool(anchored), 0.0, 0.0))
        curves.append(cl)
    if ctx.write_csv:
        write_curves_csv(ctx.path("riccati.csv"), curves)
    return checks


def _x0(n: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n)


def run_nplayer(ctx: Context) -> list[Check]:
    p = lq_params(ctx.cfg).with_(N=ctx.num("nplayer_n"))
    grid = TimeGrid(0.0, p.T, ctx.num("nplayer_steps"))
    S = ctx.num("nplayer_scenarios")
    x0 = _x0(p.N)
    chk = equilibrium_cost_check(p, grid, S, ctx.seed, x0, threads=ctx.threads)
    if ctx.write_csv:
        batch = simulate_equilibrium(p, grid, S, ctx.seed, x0, keep_paths=False, threads=ctx.threads)
        batch.to_csv(ctx.path("nplayer_costs.csv"))
    k = ctx.tol("k_se")
    gap = abs(chk.mean_cost - chk.value)
    ok = gap <= k * chk.std_err + chk.bias
    return [Check("nplayer", "mean_cost_vs_value", bool(ok), float(gap), float(k * chk.std_err + chk.bias))]


def run_nash(ctx: Context) -> list[Check]:
    p = lq_params(ctx.cfg).with_(N=ctx.num("nplayer_n"))
    grid = TimeGrid(0.0, p.T, ctx.num("nplayer_steps"))
    lams = _floats(ctx.cfg, "numerics", "nash_lambdas")
    rows = nash_gap(p, grid, ctx.num("nash_scenarios"), ctx.seed, _x0(p.N), lams, threads=ctx.threads)
    if ctx.write_csv:
        write_nash_csv(ctx.path("nash.csv"), rows)
    k = ctx.tol("k_se")
    worst = min(r.diff + k * r.diff_se for r in rows)
    return [Check("nash", "baseline_minimal", nash_holds(rows, k), float(worst), 0.0)]


def run_mkv(ctx: Context) -> list[Check]:
    p = lq_params(ctx.cfg).with_(N=LIMIT)
    grid = TimeGrid(0.0, p.T, ctx.num("mkv_steps"))
    law = InitialLaw(0.0, 1.0)
    n = ctx.num("mkv_particles")
    clouds = map_ordered(
        lambda s: simulate_mkv(p, grid, n, ctx.seed, law, scenario_id=s), range(ctx.num("mkv_scenarios")), ctx.threads
    )
    if ctx.write_csv:
        write_cloud_csv(ctx.path("mkv.csv"), clouds)
    me = float(np.mean([c.mean_error() for c in clouds]))
    ve = float(np.mean([conditional_variance_check(c) for c in clouds]))
    return [
        Check("mkv", "conditional_mean", me <= ctx.tol("mkv_mean"), me, ctx.tol("mkv_mean")),
        Check("mkv", "conditional_variance", ve <= ctx.tol("mkv_var"), ve, ctx.tol("mkv_var")),
    ]


def run_master(ctx: Context) -> list[Check]:
    p = lq_params(ctx.cfg).with_(N=LIMIT)
    g = solve_master(p, n_x=ctx.num("master_nx"), n_m=ctx.num("master_nm"), steps=ctx.num("master_steps"))
    if ctx.write_csv:
        g.to_csv(ctx.path("master.csv"))
    err = g.interior_error(0.0)
    field = exact_field(p)
    rng = stream(ctx.seed, AUX, 0, 7)
    worst = 0.0
    for _ in range(ctx.num("restriction_measures")):
        pts = rng.normal(size=25)
        w = rng.random(25)
        w /= w.sum()
        worst = max(worst, abs(restriction_check(field, pts, w, float(rng.uniform(0.0, p.T)))))
    return [
        Check("master", "interior_error", err <= ctx.tol("master_error"), err, ctx.tol("master_error")),
        Check("master", "restriction", worst <= ctx.tol("restriction"), worst, ctx.tol("restriction")),
    ]


def _ito_cases():
    spec = mi.ItoProcessSpec(
        drift=lambda t, x, m: -0.5 * x,
        vol=mi.const(0.5),
        common_vols=(mi.const(0.5),),
        initial=InitialLaw(0.5, 1.0),
    )
    state = mi.ItoProcessSpec(drift=lambda t, x, m: -0.3 * x, common_vols=(mi.const(0.6),), initial=InitialLaw(1.0, 0.5))
    C = mi.CylindricalFunctional
    return spec, state, [("mean", C.mean()), ("mean_squared", C.mean_squared()), ("variance", C.variance())]


def run_ito(ctx: Context) -> list[Check]:
    spec, state, cases = _ito_cases()
    p = lq_params(ctx.cfg)
    grid = TimeGrid(0.0, p.T, ctx.num("ito_steps"))
    n, S = ctx.num("ito_particles"), ctx.num("ito_scenarios")
    checks = []
    reports = []
    for name, H in cases:
        reports.append((name, mi.ito_verify(H, spec, grid, n, S, ctx.seed, threads=ctx.threads)))
    reports.append(
        ("x_times_mean", mi.ito_verify_joint(mi.JointFunctional.product_x_mean(), spec, state, grid, n, S, ctx.seed, threads=ctx.threads))
    )
    for name, rep in reports:
        if ctx.write_csv:
            rep.to_csv(ctx.path(f"ito_{name}.csv"))
        m, _ = rep.summary()
        checks.append(Check("ito", f"sup_gap[{name}]", m <= ctx.tol("ito_gap"), m, ctx.tol("ito_gap")))
    return checks


def run_pareto(ctx: Context) -> list[Check]:
    base = pareto_params(ctx.cfg)
    root = pg.solve_B(base)
    prm = pg.solve(base)
    steps = ctx.num("pareto_steps")
    grid = TimeGrid(0.0, prm.T, steps)
    n, S = ctx.num("pareto_particles"), ctx.num("pareto_scenarios")
    k = ctx.tol("k_se")
    checks = [Check("pareto", "root_residual", root.residual <= ctx.tol("pareto_root"), root.residual, ctx.tol("pareto_root"))]
    mesh = 5
    idx = [i * steps // mesh for i in range(1, mesh + 1)]
    state = pg.simulate_growth(prm, grid, n, 1, ctx.seed)
    crit = pg.ks_critical(n, ctx.tol("ks_level"))
    ks = [pg.ks_statistic(state.ratios(i), prm.k) for i in idx]
    checks.append(Check("pareto", "ks_pareto_invariance", max(ks) < crit, max(ks), crit))
    eq = pg.martingale_checks(prm, grid, S, n, ctx.seed, mesh=mesh, threads=ctx.threads)
    worst = float(np.max(np.abs(eq.mean_drift) - (k * eq.std_err + eq.bias)))
    checks.append(Check("pareto", "equilibrium_martingale", eq.is_martingale(k), worst, 0.0))
    devs = []
    for f in _floats(ctx.cfg, "numerics", "pareto_deviations"):
        if f == 1.0:
            continue
        rep = pg.martingale_checks(prm, grid, S, n, ctx.seed, gamma_dev=f * prm.gamma, mesh=mesh, threads=ctx.threads)
        devs.append((f"{f:g}gamma", rep))
        exact = pg.deviation_drift_mean(prm, f * prm.gamma, rep.times)
        miss = float(np.max(np.abs(rep.mean_drift - exact) - (k * rep.std_err + rep.bias)))
        checks.append(Check("pareto", f"deviation_drift_exact[{f:g}gamma]", miss <= 0.0, miss, 0.0))
        checks.append(
            Check("pareto", f"deviation_supermartingale[{f:g}gamma]", rep.is_supermartingale(k), float(np.max(rep.mean_drift - k * rep.std_err)), 0.0)
        )
    xs, qs = np.linspace(1.2, 3.0, 10), np.linspace(0.6, 1.0, 5)
    coarse = pg.pareto_master_residual(prm, xs, qs, 0.02)
    fine = pg.pareto_master_residual(prm, xs, qs, 0.01)
    ratio = coarse / fine if fine > 0 else math.inf
    below = pg.pareto_master_residual(prm, np.linspace(0.2, 0.5, 5), qs, 0.01, region="below")
    checks.append(Check("pareto", "master_residual_order4_ratio", ratio >= 10.0, ratio, 10.0))
    checks.append(Check("pareto", "master_residual_below_sign", below >= -1e-9, below, -1e-9))
    if ctx.write_csv:
        pg.write_growth_csv(ctx.path("pareto.csv"), state, ks, idx, eq, devs)
    return checks


RUNNERS: dict[str, Callable[[Context], list[Check]]] = {
    "riccati": run_riccati,
    "nplayer": run_nplayer,
    "nash": run_nash,
    "mkv": run_mkv,
    "master": run_master,
    "ito": run_ito,
    "pareto": run_pareto,
}


# --- orchestration --------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resolve_out(cli_out: str | None, cfg) -> Path:
    if cli_out:
        return Path(cli_out)
    if cfg["output"]["dir"]:
        return Path(cfg["output"]["dir"])
    return Path(os.environ.get(ENV_OUT, "mfglab_out"))


def run(config: str | None, seed: int | None = None, out: str | None = None, threads: int = 1, stream_out=None) -> int:
    """Run the configured experiment(s); return the exit status."""
    echo = stream_out or sys.stdout
    try:
        cfg = load_config(config, seed)
        csv_flag = cfg["output"]["csv"].lower()
        if csv_flag not in ("on", "off", "true", "false", "yes", "no", "1", "0"):
            raise ConfigError("[output] csv must be on or off")
        ctx = Context(
            cfg=cfg,
            seed=_num(cfg, "experiment", "seed", int),
            out=resolve_out(out, cfg),
            threads=max(1, int(threads)),
            write_csv=csv_flag in ("on", "true", "yes", "1"),
        )
        name = cfg["experiment"]["name"]
        names = list(EXPERIMENTS) if name == "all" else [name]
        validate(ctx, names)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParameterError as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    try:
        ctx.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: output directory {ctx.out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    checks: list[Check] = []
    try:
        for n in names:
            checks.extend(RUNNERS[n](ctx))
    except ParameterError as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.experiment:8s} {c.name:40s} value={c.value:.6g} tol={c.tolerance:.6g}", file=echo)
    status = EXIT_OK if all(c.passed for c in checks) else EXIT_TOLERANCE
    csvs = sorted(ctx.out.glob("*.csv")) if ctx.write_csv else []
    manifest = {
        "config_hash": config_hash(cfg),
        "config": cfg,
        "seed": ctx.seed,
        "experiments": names,
        "versions": {
            "mfglab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "tolerances": cfg["tolerances"],
        "checks": [c.__dict__ for c in checks],
        "files": {p.name: _sha256(p) for p in csvs},
        "exit_status": status,
    }
    (ctx.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    return status


def describe(name: str) -> str:
    if name == "all":
        return "\n\n".join(f"{k}: {v}" for k, v in DESCRIPTIONS.items())
    if name not in DESCRIPTIONS:
        raise KeyError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    return f"{name}: {DESCRIPTIONS[name]}"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfglab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment(s) named in a config file")
    r.add_argument("--config", help="INI configuration file (defaults apply when omitted)")
    r.add_argument("--seed", type=int, help="override the seed of the config")
    r.add_argument("--out", help=f"output directory (default: [output] dir, then ${ENV_OUT}, then ./mfglab_out)")
    r.add_argument("--threads", type=int, default=1, help="worker threads; changes wall time only")
    d = sub.add_parser("describe", help="print what an experiment validates")
    d.add_argument("name")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "describe":
        try:
            print(describe(args.name))
        except KeyError as exc:
            print(f"config error: {exc.args[0]}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    return run(args.config, args.seed, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
