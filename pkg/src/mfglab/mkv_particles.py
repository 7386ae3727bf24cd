"""Conditional McKean-Vlasov particle system of the mean-field LQ model.

The particles interact only through their running mean.  Because the
equilibrium feedback is centred, the conditional mean of the limit system is
``m_0 + sigma rho W0_t`` and its conditional variance solves

    v' = -2 (a + q + eta_t) v + sigma^2 (1 - rho^2),

which are the two oracles used here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

from mfglab.model_core import (
    InitialLaw,
    LqParams,
    ParameterError,
    TimeGrid,
    make_noise,
    map_ordered,
    ordered_mean_se,
)
from mfglab.nplayer_game import _simulate
from mfglab.riccati import eta_closed


@dataclass(frozen=True)
class ParticleCloud:
    params: LqParams
    grid: TimeGrid
    n_particles: int
    seed: int
    scenario_id: int
    initial_variance: float
    common_path: np.ndarray  # W0 on the grid, starts at 0
    cond_mean: np.ndarray
    cond_var: np.ndarray
    exact_mean: np.ndarray
    states: np.ndarray | None = None  # (n_particles, steps+1)

    def mean_error(self) -> float:
        return float(np.max(np.abs(self.cond_mean - self.exact_mean)))


def _check_stability(p: LqParams, grid: TimeGrid, eta: np.ndarray) -> None:
    rate = p.a + p.q + float(np.max(eta))
    if rate > 0 and grid.dt >= 1.0 / rate:
        raise ParameterError(f"dt={grid.dt} violates the explicit-scheme bound dt < {1.0 / rate}")


def simulate_mkv(
    p: LqParams,
    grid: TimeGrid,
    n_particles: int,
    seed: int,
    initial_law: InitialLaw,
    scenario_id: int = 0,
    keep_states: bool = False,
    mean_mode: str = "empirical",
    population_mean: float | None = None,
) -> ParticleCloud:
    """Euler-Maruyama for the particle approximation of the conditional MKV SDE.

    ``mean_mode="empirical"`` couples the particles through their running
    mean.  ``mean_mode="exact"`` replaces it by the exact conditional mean
    ``m_0 + sigma rho W0_t`` of the limit, which makes the particles
    conditionally independent copies of the McKean-Vlasov process; its
    starting point is ``population_mean`` (default: the mean of
    ``initial_law``), which lets tagged particles start away from the crowd.
    """
    if not p.is_limit:
        raise ParameterError("simulate_mkv needs the limit regime (N='limit')")
    if n_particles < 1:
        raise ParameterError("n_particles must be positive")
    if mean_mode not in ("empirical", "exact"):
        raise ParameterError(f"unknown mean_mode {mean_mode!r}")
    eta = np.asarray(eta_closed(grid.times, p)).reshape(-1)
    _check_stability(p, grid, eta)
    noise = make_noise(seed, scenario_id, grid, n_particles, (1.0,))
    w0 = noise.common_path(0)
    dW0, dW = noise.common[0], noise.idiosyncratic
    X = initial_law.sample(seed, scenario_id, n_particles)
    if mean_mode == "empirical":
        m0 = X.mean()
    else:
        m0 = float(initial_law.mean if population_mean is None else population_mean)
    exact = m0 + p.common_vol * w0
    n = grid.steps
    means, variances = np.empty(n + 1), np.empty(n + 1)
    states = np.empty((n_particles, n + 1)) if keep_states else None
    dt, vi, v0 = grid.dt, p.idio_vol, p.common_vol
    for k in range(n + 1):
        m = X.mean()
        means[k] = m
        variances[k] = np.mean((X - m) ** 2)
        if keep_states:
            states[:, k] = X
        if k == n:
            break
        anchor = m if mean_mode == "empirical" else exact[k]
        X = X + (p.a + p.q + eta[k]) * (anchor - X) * dt + v0 * dW0[k] + vi * dW[:, k]
    return ParticleCloud(
        params=p,
        grid=grid,
        n_particles=n_particles,
        seed=seed,
        scenario_id=scenario_id,
        initial_variance=initial_law.variance,
        common_path=w0,
        cond_mean=means,
        cond_var=variances,
        exact_mean=exact,
        states=states,
    )


def simulate_mkv_batch(
    p: LqParams,
    grid: TimeGrid,
    n_scenarios: int,
    n_particles: int,
    seed: int,
    initial_law: InitialLaw,
    mean_mode: str = "exact",
    noise_factor: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Many scenarios at once; returns states (S, n, steps+1) and means (S, steps+1).

    Scenario ``s`` uses exactly the streams of ``simulate_mkv(..., scenario_id=s)``.
    With ``noise_factor > 1`` the increments are drawn on a finer grid and
    summed, so runs at different step sizes share Brownian paths.
    """
    if not p.is_limit:
        raise ParameterError("simulate_mkv_batch needs the limit regime (N='limit')")
    eta = np.asarray(eta_closed(grid.times, p)).reshape(-1)
    _check_stability(p, grid, eta)
    fine = grid.refine(noise_factor) if noise_factor > 1 else grid
    dW0 = np.empty((n_scenarios, grid.steps))
    dW = np.empty((n_scenarios, n_particles, grid.steps))
    X = np.empty((n_scenarios, n_particles))
    for s in range(n_scenarios):
        nb = make_noise(seed, s, fine, n_particles, (1.0,))
        if noise_factor > 1:
            nb = nb.coarsen(noise_factor)
        dW0[s], dW[s] = nb.common[0], nb.idiosyncratic
        X[s] = initial_law.sample(seed, s, n_particles)
    if mean_mode == "exact":
        m0 = np.full(n_scenarios, float(initial_law.mean))
    else:
        m0 = X.mean(axis=1)
    w0 = np.concatenate([np.zeros((n_scenarios, 1)), np.cumsum(dW0, axis=1)], axis=1)
    exact = m0[:, None] + p.common_vol * w0
    states = np.empty((n_scenarios, n_particles, grid.steps + 1))
    means = np.empty((n_scenarios, grid.steps + 1))
    dt, vi, v0 = grid.dt, p.idio_vol, p.common_vol
    for k in range(grid.steps + 1):
        m = X.mean(axis=1) if mean_mode == "empirical" else exact[:, k]
        states[:, :, k] = X
        means[:, k] = m
        if k == grid.steps:
            break
        X = X + (p.a + p.q + eta[k]) * (m[:, None] - X) * dt + v0 * dW0[:, k, None] + vi * dW[:, :, k]
    return states, means


def variance_ode(p: LqParams, grid: TimeGrid, v0: float) -> np.ndarray:
    """RK4 on v' = -2 (a + q + eta_t) v + sigma^2 (1 - rho^2)."""
    n, h = grid.steps, grid.dt
    t = grid.times
    src = p.idio_vol**2

    def f(s, v):
        return -2.0 * (p.a + p.q + eta_closed(min(s, p.T), p)) * v + src

    out = np.empty(n + 1)
    out[0] = v = v0
    for k in range(n):
        s = t[k]
        k1 = f(s, v)
        k2 = f(s + h / 2, v + h / 2 * k1)
        k3 = f(s + h / 2, v + h / 2 * k2)
        k4 = f(s + h, v + h * k3)
        v = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = v
    return out


def conditional_variance_check(cloud: ParticleCloud) -> float:
    """Max deviation of the particle variance from the variance ODE."""
    ref = variance_ode(cloud.params, cloud.grid, cloud.initial_variance)
    return float(np.max(np.abs(cloud.cond_var - ref)))


@dataclass(frozen=True)
class RateRow:
    n: int
    mean_error: float
    std_err: float


def particle_rates(
    p: LqParams,
    grid: TimeGrid,
    n_list: Sequence[int],
    seed: int,
    initial_law: InitialLaw,
    n_scenarios: int,
    threads: int = 1,
) -> tuple[list[RateRow], list[RateRow]]:
    """Scenario-averaged sup errors of the conditional mean and variance for each cloud size."""
    mean_rows, var_rows = [], []
    ref = variance_ode(p, grid, initial_law.variance)
    for n in n_list:
        clouds = map_ordered(
            lambda s: simulate_mkv(p, grid, n, seed, initial_law, scenario_id=s),
            range(n_scenarios),
            threads,
        )
        me = np.array([c.mean_error() for c in clouds])
        ve = np.array([np.max(np.abs(c.cond_var - ref)) for c in clouds])
        m, se = ordered_mean_se(me)
        mean_rows.append(RateRow(n, float(m), float(se)))
        m, se = ordered_mean_se(ve)
        var_rows.append(RateRow(n, float(m), float(se)))
    return mean_rows, var_rows


def nplayer_vs_limit(
    p: LqParams,
    grid: TimeGrid,
    seeds: Sequence[int] | int,
    N_list: Sequence[int],
    n_scenarios: int = 64,
    initial_law: InitialLaw = InitialLaw(0.0, 1.0),
    threads: int = 1,
) -> list[RateRow]:
    """sup_t |m^N_t - (m^N_0 + sigma rho W0_t)| averaged over scenarios, per N.

    Every N is driven by the same common-noise path of each scenario.
    """
    seeds = [seeds] if isinstance(seeds, (int, np.integer)) else list(seeds)
    rows = []
    for N in N_list:
        if N < 2:
            raise ParameterError("every N must be at least 2")
        pn = p.with_(N=int(N))
        dists = []
        for seed in seeds:
            x0 = initial_law.sample(seed, 0, N)
            _, _, means = _simulate(pn, grid, n_scenarios, seed, x0, keep_means=True, threads=threads)
            for s in range(n_scenarios):
                w0 = make_noise(seed, s, grid, 0, (1.0,)).common_path(0)
                exact = means[s, 0] + p.common_vol * w0
                dists.append(np.max(np.abs(means[s] - exact)))
        m, se = ordered_mean_se(np.array(dists))
        rows.append(RateRow(int(N), float(m), float(se)))
    return rows


def write_cloud_csv(path: str | Path, clouds: Sequence[ParticleCloud]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "t", "cond_mean", "cond_var", "exact_mean"])
        for c in clouds:
            for t, m, v, e in zip(c.grid.times, c.cond_mean, c.cond_var, c.exact_mean):
                w.writerow([c.scenario_id, repr(float(t)), repr(float(m)), repr(float(v)), repr(float(e))])


def ou_moments(p: LqParams, grid: TimeGrid, x0: float, m: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of a tagged particle around a frozen population mean.

    With rho = 0 the population mean stays at ``m``; a particle started at
    ``x0`` is then an OU process with rate a + q + eta_t.
    """
    var = variance_ode(p.with_(rho=0.0), grid, 0.0)
    integ = np.array([integrate.quad(lambda s: p.a + p.q + eta_closed(s, p), 0.0, t)[0] for t in grid.times])
    return m + (x0 - m) * np.exp(-integ), var
