"""Acceptance criteria 1-12, each at its stated tolerance.

Every check records a PASS/FAIL line; the summary at the end of the pytest
run prints them together with one verdict per criterion.
"""

import math
from collections import defaultdict

import numpy as np
import pytest

from mfglab import cli_harness as cli
from mfglab import measure_ito as mi
from mfglab import pareto_growth as pg
from mfglab.master_pde import exact_field, residual_of_field, restriction_check, solve_master
from mfglab.mkv_particles import particle_rates
from mfglab.model_core import LIMIT, InitialLaw, LqParams, TimeGrid
from mfglab.nplayer_game import equilibrium_cost_check, nash_gap, nash_holds
from mfglab.riccati import closed_curves, integrate_riccati

RESULTS: list[str] = []
VERDICTS: dict[int, list[bool]] = defaultdict(list)

BASE = LqParams(a=0.1, q=0.2, eps=0.5, c=0.3, sigma=1.0, rho=0.5, T=1.0)


def record(crit: int, label: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  [{crit:>2}] {label}: {detail}"
    RESULTS.append(line)
    VERDICTS[crit].append(bool(ok))
    print(line)
    return ok


def random_params(n: int, seed: int = 2024) -> list[LqParams]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        q = rng.uniform(0.0, 1.0)
        N = LIMIT if rng.random() < 0.3 else int(rng.integers(1, 100))
        out.append(
            LqParams(
                a=rng.uniform(0.0, 1.0),
                q=q,
                eps=q * q + rng.uniform(0.0, 1.5),
                c=rng.uniform(0.0, 2.0),
                sigma=rng.uniform(0.1, 2.0),
                rho=rng.uniform(0.0, 1.0),
                T=rng.uniform(0.2, 3.0),
                N=N,
            )
        )
    return out


def order(steps, errors) -> float:
    """Fitted exponent r in error ~ step^r (log-log least squares)."""
    return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])


# --- 1-3: Riccati ---------------------------------------------------------


def test_criterion_01_closed_form_vs_rk4():
    worst = 0.0
    for p in random_params(100):
        g = TimeGrid(0.0, p.T, 1000)
        cl, rk = closed_curves(p, g), integrate_riccati(p, g)
        worst = max(worst, np.max(np.abs(cl.eta - rk.eta)), np.max(np.abs(cl.chi - rk.chi)))
    assert record(1, "closed form vs RK4, 100 parameter sets", worst <= 1e-5, f"max gap {worst:.2e} <= 1e-5")


def test_criterion_02_terminal_anchors():
    bad = 0
    for p in random_params(100, seed=7):
        g = TimeGrid(0.0, p.T, 1000)
        for cv in (closed_curves(p, g), integrate_riccati(p, g)):
            bad += not (cv.eta[-1] == p.c and cv.chi[-1] == 0.0)
    assert record(2, "eta_T = c and chi_T = 0 on both code paths", bad == 0, f"{bad} violations in 200 curves")


def test_criterion_03_inverse_square_gap():
    g = TimeGrid(0.0, BASE.T, 1000)
    lim = closed_curves(BASE.with_(N=LIMIT), g).eta
    gaps = [np.max(np.abs(closed_curves(BASE.with_(N=n), g).eta - lim)) for n in (10, 20, 40, 80)]
    ratios = [a / b for a, b in zip(gaps, gaps[1:])]
    ok = all(3.5 <= r <= 4.5 for r in ratios)
    assert record(3, "|eta^N - eta^inf| ratio N -> 2N", ok, "ratios " + ", ".join(f"{r:.3f}" for r in ratios))


# --- 4-5: N-player game -----------------------------------------------------


def test_criterion_04_cost_vs_value():
    p = BASE.with_(N=10)
    chk = equilibrium_cost_check(p, TimeGrid(0.0, 1.0, 1000), 10_000, 4, np.linspace(-1.0, 1.0, 10), threads=4)
    gap = abs(chk.mean_cost - chk.value)
    band = 3 * chk.std_err + chk.bias
    assert record(
        4, "mean realized cost vs value (N=10, 1e4 scenarios, dt=1e-3)", gap <= band,
        f"|{chk.mean_cost:.5f} - {chk.value:.5f}| = {gap:.2e} <= 3 SE + bias = {band:.2e}",
    )


def test_criterion_05_nash_property():
    p = BASE.with_(N=10)
    lams = [0.5, 0.75, 1.0, 1.25, 1.5]
    rows = nash_gap(p, TimeGrid(0.0, 1.0, 200), 10_000, 5, np.linspace(-1.0, 1.0, 10), lams, threads=4)
    detail = ", ".join(f"{r.lam:g}: {r.diff:+.2e}+-{r.diff_se:.1e}" for r in rows)
    assert record(5, "lambda = 1 minimizes player 1's cost (paired, CRN)", nash_holds(rows, 3.0), detail)


# --- 6-7: conditional McKean-Vlasov ----------------------------------------


@pytest.fixture(scope="module")
def mkv_rates():
    p = BASE.with_(rho=0.6)
    return particle_rates(p, TimeGrid(0.0, 1.0, 200), [1000, 4000, 16000], 6, InitialLaw(0.0, 1.0), 32, threads=4)


def _halving(rows):
    ratios = [a.mean_error / b.mean_error for a, b in zip(rows, rows[1:])]
    return all(1.4 <= r <= 2.6 for r in ratios), ratios


def test_criterion_06_conditional_mean_rate(mkv_rates):
    ok, ratios = _halving(mkv_rates[0])
    assert record(6, "conditional mean error halves per x4 particles", ok, "ratios " + ", ".join(f"{r:.2f}" for r in ratios))


def test_criterion_07_conditional_variance_rate(mkv_rates):
    ok, ratios = _halving(mkv_rates[1])
    assert record(7, "conditional variance error halves per x4 particles", ok, "ratios " + ", ".join(f"{r:.2f}" for r in ratios))


# --- 8-9: master equation -------------------------------------------------


def test_criterion_08_master_convergence():
    p = BASE.with_(T=0.5)
    coarse = solve_master(p, n_x=31, n_m=31, steps=64).interior_error(0.0)
    fine = solve_master(p, n_x=61, n_m=61, steps=256).interior_error(0.0)
    ratio = coarse / fine
    ok1 = record(8, "PDE error contraction under (dx, dm)/2, dt/4", 3.0 <= ratio <= 5.0, f"{coarse:.2e} -> {fine:.2e}, factor {ratio:.2f}")
    field = exact_field(p)
    hs = [0.04, 0.02, 0.01]
    res = [residual_of_field(field, p, [0.1, 0.25, 0.4], [-1.0, 0.3, 1.2], [-0.5, 0.4], h) for h in hs]
    slope = order(hs, res)
    ok2 = record(8, "residual of the exact field, three spacings", 3.5 <= slope <= 4.5, "residuals " + ", ".join(f"{r:.1e}" for r in res) + f", order {slope:.2f}")
    assert ok1 and ok2


def test_criterion_09_restriction():
    p = BASE.with_(N=LIMIT)
    field = exact_field(p)
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 200))
        pts = rng.normal(size=n) * rng.uniform(0.1, 3.0) + rng.normal()
        w = rng.random(n)
        w /= w.sum()
        worst = max(worst, abs(restriction_check(field, pts, w, float(rng.uniform(0.0, p.T)))))
    assert record(9, "|int d_x v dmu| over 100 random measures", worst <= 1e-8, f"max {worst:.2e} <= 1e-8")


# --- 10: Ito formula --------------------------------------------------------

C = mi.CylindricalFunctional
CASES = [("mean", C.mean()), ("mean_squared", C.mean_squared()), ("variance", C.variance()), ("x_times_mean", mi.JointFunctional.product_x_mean())]
STATE = mi.ItoProcessSpec(drift=lambda t, x, m: -0.3 * x, common_vols=(mi.const(0.6),), initial=InitialLaw(1.0, 0.5))


def _verify(name, H, spec, grid, n, S, seed, substeps=1, qv="nominal"):
    if name == "x_times_mean":
        return mi.ito_verify_joint(H, spec, STATE, grid, n, S, seed, substeps, qv, threads=4)
    return mi.ito_verify(H, spec, grid, n, S, seed, substeps, qv, threads=4)


def test_criterion_10_dt_axis():
    # the particle paths live on a fixed fine grid; only the quadrature of the formula is refined
    spec = mi.ItoProcessSpec(
        drift=lambda t, x, m: -0.5 * x, common_vols=(lambda t, x, m: 0.5 + 0.2 * np.cos(x),), initial=InitialLaw(0.5, 1.0)
    )
    Ms = [32, 64, 128, 256]
    oks = []
    for name, H in CASES:
        gaps = [_verify(name, H, spec, TimeGrid(0.0, 1.0, M), 32, 100, 7, 1024 // M).summary()[0] for M in Ms]
        ratios = [a / b for a, b in zip(gaps, gaps[1:])]
        slope = order([1 / M for M in Ms], gaps)
        ok = all(r >= 1.2 for r in ratios) and slope >= 0.4
        oks.append(record(10, f"dt axis, {name}", ok, "gaps " + ", ".join(f"{g:.2e}" for g in gaps) + f", order {slope:.2f}"))
    assert all(oks)


def test_criterion_10_particle_axis():
    spec = mi.ItoProcessSpec(
        drift=lambda t, x, m: -0.5 * x, vol=mi.const(1.0), common_vols=(mi.const(0.5),), initial=InitialLaw(0.5, 1.0)
    )
    ns = [100, 200, 400, 800]
    oks = []
    for name, H in CASES:
        gaps = [_verify(name, H, spec, TimeGrid(0.0, 1.0, 256), n, 64, 7, qv="realized").summary()[0] for n in ns]
        ratios = [a / b for a, b in zip(gaps, gaps[1:])]
        slope = order([1 / n for n in ns], gaps)
        ok = all(r > 1.1 for r in ratios) and 0.35 <= slope <= 0.65
        oks.append(record(10, f"particle axis, {name}", ok, "gaps " + ", ".join(f"{g:.2e}" for g in gaps) + f", order {slope:.2f}"))
    assert all(oks)


def _within(sample, target, k=3.0):
    m = sample.mean()
    se = sample.std(ddof=1) / math.sqrt(sample.size)
    return abs(m - target) <= k * se + 1e-12, m, se


def test_criterion_10_analytic_cases():
    g = TimeGrid(0.0, 1.0, 200)
    s0 = 0.7
    spec = mi.ItoProcessSpec(common_vols=(mi.const(s0),), initial=InitialLaw(0.3, 1.0))
    r = mi.ito_verify(C.mean_squared(), spec, g, 50, 400, 5)
    second = np.max(np.abs(r.terms["common_second"] - s0**2 * g.times))
    ok_gap, m, se = _within(r.gap[:, -1], 0.0)
    others = max(np.max(np.abs(r.terms[k])) for k in ("drift", "idio_second", "cross"))
    noise_ok, mn, sen = _within(r.terms["common_noise"][:, -1], 0.0)
    oks = []
    oks += [record(
        10, "mean^2 term by term", second < 1e-12 and ok_gap and others == 0.0 and noise_ok,
        f"second-order term vs s0^2 t: {second:.1e}; stochastic integral mean {mn:.3f}+-{sen:.3f}; terminal gap {m:.4f}+-{se:.4f}",
    )]
    s = 0.8
    spec = mi.ItoProcessSpec(vol=mi.const(s), initial=InitialLaw(0.0, 1.0))
    r = mi.ito_verify(C.variance(), spec, g, 400, 200, 5)
    idio = np.max(np.abs(r.terms["idio_second"] - s**2 * g.times))
    zero = max(np.max(np.abs(r.terms[k])) for k in ("common_second", "cross", "common_noise"))
    ok_lhs, m, se = _within(r.lhs[:, -1], s**2 * (1 - 1 / 400))
    oks += [record(
        10, "variance, idiosyncratic noise only", idio < 1e-12 and zero == 0.0 and ok_lhs,
        f"idiosyncratic term vs s^2 t: {idio:.1e}; LHS slope {m:.4f}+-{se:.4f} vs {s**2 * (1 - 1 / 400):.4f}",
    )]
    sx0 = 0.6
    spec = mi.ItoProcessSpec(vol=mi.const(0.5), common_vols=(mi.const(s0),), initial=InitialLaw(0.3, 1.0))
    state = mi.ItoProcessSpec(vol=mi.const(0.4), common_vols=(mi.const(sx0),), initial=InitialLaw(1.0, 0.5))
    r = mi.ito_verify_joint(mi.JointFunctional.product_x_mean(), spec, state, g, 200, 200, 5)
    cross = np.max(np.abs(r.terms["cross"] - s0 * sx0 * g.times))
    ok_gap, m, se = _within(r.gap[:, -1], 0.0)
    # E[X_T m_T] - E[X_0 m_0] = (cross-variation) s0 sx0 T when beta = 0
    ok_lhs, ml, sel = _within(r.lhs[:, -1], s0 * sx0)
    oks += [record(
        10, "x * mean, cross term", cross < 1e-12 and ok_gap and ok_lhs,
        f"cross term vs s0 sx0 t: {cross:.1e}; LHS {ml:.4f}+-{sel:.4f} vs {s0 * sx0:.2f}; gap {m:.4f}+-{se:.4f}",
    )]
    assert all(oks)


# --- 11: Pareto growth ------------------------------------------------------

PARETO = pg.solve(pg.ParetoParams())


def test_criterion_11_root():
    res = pg.solve_B(pg.ParetoParams())
    assert record(11, "F(B) = 0", res.residual <= 1e-12 and res.B > 0, f"B = {res.B:.15f}, |F(B)| = {res.residual:.1e}")


def test_criterion_11_ks():
    g = TimeGrid(0.0, 1.0, 100)
    st = pg.simulate_growth(PARETO, g, 10_000, 1, 11)
    crit = pg.ks_critical(10_000, 0.01)
    ks = [pg.ks_statistic(st.ratios(i), PARETO.k) for i in (20, 40, 60, 80, 100)]
    assert record(11, "KS of X_t / q_t vs Pareto(1, k), 5 checkpoints", max(ks) < crit, f"max {max(ks):.4f} < {crit:.4f}")


@pytest.fixture(scope="module")
def mart_reports():
    g = TimeGrid(0.0, 1.0, 100)
    out = {"eq": pg.martingale_checks(PARETO, g, 2000, 200, 11, threads=4)}
    for f in (0.5, 1.5):
        out[f] = pg.martingale_checks(PARETO, g, 2000, 200, 11, gamma_dev=f * PARETO.gamma, threads=4)
    return out


def test_criterion_11_equilibrium_martingale(mart_reports):
    r = mart_reports["eq"]
    z = np.abs(r.mean_drift) - (3 * r.std_err + r.bias)
    assert record(11, "equilibrium martingale drift within 3 SE + bias", r.is_martingale(3.0), f"max excess {z.max():.3f} <= 0")


@pytest.mark.xfail(
    strict=True,
    reason="the reward is maximized, so deviations make M a supermartingale on x >= q; "
    "the drift of 1.5 gamma and the early drift of 0.5 gamma are significantly negative",
)
def test_criterion_11_deviations_nonnegative_drift(mart_reports):
    ok = True
    for f in (0.5, 1.5):
        r = mart_reports[f]
        z = (r.mean_drift / r.std_err).min()
        ok &= record(11, f"deviation {f:g} gamma: drift >= -3 SE", r.is_submartingale(3.0), f"min drift / SE = {z:.1f}")
    assert ok


def test_criterion_11_deviation_drift_matches_theory(mart_reports):
    r = mart_reports[1.5]
    exact = pg.deviation_drift_mean(PARETO, 1.5 * PARETO.gamma, r.times)
    ok = bool(np.all(np.abs(r.mean_drift - exact) <= 3 * r.std_err + r.bias)) and r.is_supermartingale()
    assert record(11, "deviation 1.5 gamma: supermartingale with the exact drift", ok, f"terminal drift {r.mean_drift[-1]:.1f} vs {exact[-1]:.1f}")


def test_criterion_11_master_residual():
    xs, qs = np.linspace(1.2, 3.0, 10), np.linspace(0.6, 1.0, 5)
    hs = [0.04, 0.02, 0.01]
    res = [pg.pareto_master_residual(PARETO, xs, qs, h) for h in hs]
    slope = order(hs, res)
    ok1 = record(11, "master residual on x > q", 3.5 <= slope <= 4.5, "residuals " + ", ".join(f"{r:.1e}" for r in res) + f", order {slope:.2f}")
    below = pg.pareto_master_residual(PARETO, np.linspace(0.2, 0.5, 5), qs, 0.01, region="below")
    ok2 = record(11, "master residual sign on x < q", below >= 0.0, f"min residual {below:.4f} >= 0")
    assert ok1 and ok2


# --- 12: determinism --------------------------------------------------------


def test_criterion_12_determinism(tmp_path):
    codes = [cli.main(["run", "--seed", "12", "--out", str(tmp_path / d), "--threads", t]) for d, t in (("a", "1"), ("b", "4"))]
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = names == sorted(p.name for p in (tmp_path / "b").iterdir()) and all(
        (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names
    )
    csvs = [n for n in names if n.endswith(".csv")]
    assert record(12, "full CLI run twice (1 and 4 threads)", same and codes[0] == codes[1], f"{len(csvs)} CSV files + manifest byte-identical, exit {codes}")
