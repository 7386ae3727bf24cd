"""Monte Carlo of the exact N-player Nash equilibrium and its deviation gap.

Players follow the closed-loop equilibrium feedback; player 1 may scale its
gain by a factor lambda while everyone else keeps the equilibrium gain.  All
gains in one call share the same noise (common random numbers).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from mfglab.model_core import (
    LqParams,
    ParameterError,
    TimeGrid,
    chunked,
    make_noise,
    map_ordered,
    ordered_mean_se,
)
from mfglab.riccati import closed_curves

CHUNK = 256


@dataclass(frozen=True)
class ScenarioBatch:
    params: LqParams
    grid: TimeGrid
    n_scenarios: int
    seed: int
    initial_states: np.ndarray
    realized_costs: np.ndarray  # (n_scenarios, N)
    trajectories: np.ndarray | None = None  # (n_scenarios, N, steps+1)
    mean_paths: np.ndarray | None = None  # (n_scenarios, steps+1)

    def mean_cost(self, player: int = 0) -> tuple[float, float]:
        m, se = ordered_mean_se(self.realized_costs[:, player])
        return float(m), float(se)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "player", "cost"])
            for s, row in enumerate(self.realized_costs):
                for i, cost in enumerate(row):
                    w.writerow([s, i, repr(float(cost))])


def running_cost(x, m, alpha, p: LqParams):
    """f(t, x, mu, alpha) = alpha^2/2 - q alpha (m - x) + eps (m - x)^2 / 2."""
    d = m - x
    return 0.5 * alpha * alpha - p.q * alpha * d + 0.5 * p.eps * d * d


def terminal_cost(x, m, p: LqParams):
    return 0.5 * p.c * (m - x) ** 2


def sym_mean(x: np.ndarray) -> np.ndarray:
    """Mean over the last axis that does not depend on the order of players."""
    return np.sort(x, axis=-1).sum(axis=-1) / x.shape[-1]


def _validate(p: LqParams, grid: TimeGrid, x0: np.ndarray, eta: np.ndarray) -> None:
    if p.is_limit:
        raise ParameterError("the N-player simulator needs a finite N")
    if p.N < 2:
        raise ParameterError("the N-player simulator needs N >= 2")
    if x0.shape != (p.N,):
        raise ParameterError(f"x0 must hold N={p.N} initial states, got shape {x0.shape}")
    if grid.t0 != 0.0 or not math.isclose(grid.T, p.T, abs_tol=1e-12) or grid.steps < 1:
        raise ParameterError("grid must cover [0, T] with at least one step")
    rate = p.a + p.q + float(np.max(eta))
    if rate > 0 and grid.dt >= 1.0 / rate:
        raise ParameterError(f"dt={grid.dt} violates the explicit-scheme bound dt < {1.0 / rate}")


def _chunk_noise(p, grid, seed, scenarios, path_ids, noise_factor):
    fine = grid.refine(noise_factor) if noise_factor > 1 else grid
    common, idio = [], []
    for s in scenarios:
        nb = make_noise(seed, s, fine, p.N, (1.0,), path_ids)
        if noise_factor > 1:
            nb = nb.coarsen(noise_factor)
        common.append(nb.common[0])
        idio.append(nb.idiosyncratic)
    return np.stack(common), np.stack(idio)


def _run_chunk(p, grid, eta, x0, seed, scenarios, gains, path_ids, noise_factor, keep_paths, keep_means):
    dW0, dW = _chunk_noise(p, grid, seed, scenarios, path_ids, noise_factor)
    S, N, L = len(scenarios), p.N, len(gains)
    dt = grid.dt
    gain = np.ones((L, 1, N))
    gain[:, 0, 0] = gains
    X = np.broadcast_to(x0, (L, S, N)).copy()
    cost = np.zeros((L, S, N))
    paths = np.empty((L, S, N, grid.steps + 1)) if keep_paths else None
    means = np.empty((S, grid.steps + 1)) if keep_means else None
    vi, v0 = p.idio_vol, p.common_vol
    for k in range(grid.steps):
        m = sym_mean(X)[..., None]
        if keep_paths:
            paths[..., k] = X
        if keep_means:
            means[:, k] = m[0, :, 0]
        kappa = p.q + (1.0 - p.inv_n) * eta[k]
        alpha = gain * kappa * (m - X)
        cost += dt * running_cost(X, m, alpha, p)
        X = X + (p.a * (m - X) + alpha) * dt + vi * dW[None, :, :, k] + v0 * dW0[None, :, k, None]
    m = sym_mean(X)[..., None]
    if keep_paths:
        paths[..., -1] = X
    if keep_means:
        means[:, -1] = m[0, :, 0]
    cost += terminal_cost(X, m, p)
    return cost, paths, means


def _simulate(
    p: LqParams,
    grid: TimeGrid,
    n_scenarios: int,
    seed: int,
    x0,
    gains: Sequence[float] = (1.0,),
    path_ids: Sequence[int] | None = None,
    noise_factor: int = 1,
    keep_paths: bool = False,
    keep_means: bool = False,
    threads: int = 1,
):
    x0 = np.asarray(x0, dtype=float)
    if p.is_limit:
        raise ParameterError("the N-player simulator needs a finite N")
    eta = closed_curves(p, grid).eta
    _validate(p, grid, x0, eta)
    if n_scenarios < 1:
        raise ParameterError("n_scenarios must be positive")
    gains = np.asarray(gains, dtype=float)
    parts = map_ordered(
        lambda sc: _run_chunk(p, grid, eta, x0, seed, sc, gains, path_ids, noise_factor, keep_paths, keep_means),
        chunked(n_scenarios, CHUNK),
        threads,
    )
    cost = np.concatenate([c for c, _, _ in parts], axis=1)
    paths = np.concatenate([pp for _, pp, _ in parts], axis=1) if keep_paths else None
    means = np.concatenate([mm for _, _, mm in parts], axis=0) if keep_means else None
    return cost, paths, means


def simulate_equilibrium(
    p: LqParams,
    grid: TimeGrid,
    n_scenarios: int,
    seed: int,
    x0,
    keep_paths: bool = True,
    path_ids: Sequence[int] | None = None,
    noise_factor: int = 1,
    threads: int = 1,
) -> ScenarioBatch:
    """Euler-Maruyama paths of the equilibrium dynamics with realized costs.

    ``noise_factor > 1`` draws the noise on a grid that many times finer and
    sums it, so a coarse run sees the same Brownian paths as a fine one.
    """
    cost, paths, means = _simulate(
        p, grid, n_scenarios, seed, x0, (1.0,), path_ids, noise_factor, keep_paths, True, threads
    )
    return ScenarioBatch(
        params=p,
        grid=grid,
        n_scenarios=n_scenarios,
        seed=seed,
        initial_states=np.asarray(x0, dtype=float),
        realized_costs=cost[0],
        trajectories=paths[0] if keep_paths else None,
        mean_paths=means,
    )


def value_at_start(p: LqParams, x0, player: int = 0) -> float:
    """V^{i,N}(0, x0) = eta_0 (xbar - x^i)^2 / 2 + chi_0."""
    x0 = np.asarray(x0, dtype=float)
    curves = closed_curves(p, TimeGrid(0.0, p.T, 1))
    return 0.5 * curves.eta[0] * (x0.mean() - x0[player]) ** 2 + curves.chi[0]


@dataclass(frozen=True)
class CostCheck:
    mean_cost: float
    std_err: float
    value: float
    bias: float
    passed: bool


def equilibrium_cost_check(p, grid, n_scenarios, seed, x0, player=0, threads=1) -> CostCheck:
    """Compare the mean realized cost with the value function.

    The time-discretization bias is estimated by step halving on the same
    Brownian paths: the gap between the run on ``grid`` and a run with twice
    the step.
    """
    fine = simulate_equilibrium(p, grid, n_scenarios, seed, x0, keep_paths=False, threads=threads)
    coarse = simulate_equilibrium(
        p, grid.coarsen(2), n_scenarios, seed, x0, keep_paths=False, noise_factor=2, threads=threads
    )
    mean, se = fine.mean_cost(player)
    bias = abs(mean - coarse.mean_cost(player)[0])
    value = value_at_start(p, x0, player)
    return CostCheck(mean, se, value, bias, abs(mean - value) <= 3 * se + bias)


@dataclass(frozen=True)
class NashRow:
    lam: float
    mean_cost: float
    std_err: float
    diff: float  # mean of cost(lam) - cost(1), paired
    diff_se: float


def nash_gap(p, grid, n_scenarios, seed, x0, lambdas, threads=1) -> list[NashRow]:
    """Mean cost of player 1 when it scales its equilibrium gain by each lambda."""
    lambdas = [float(v) for v in lambdas]
    if 1.0 not in lambdas:
        raise ParameterError("lambdas must include the baseline 1")
    cost, _, _ = _simulate(p, grid, n_scenarios, seed, x0, lambdas, threads=threads)
    c1 = cost[:, :, 0]
    base = c1[lambdas.index(1.0)]
    rows = []
    for i, lam in enumerate(lambdas):
        m, se = ordered_mean_se(c1[i])
        dm, dse = ordered_mean_se(c1[i] - base)
        rows.append(NashRow(lam, float(m), float(se), float(dm), float(dse)))
    return rows


def nash_holds(rows: list[NashRow], k: float = 3.0) -> bool:
    """The baseline is minimal up to k standard errors of each paired difference."""
    return all(r.diff >= -k * r.diff_se for r in rows)


def write_nash_csv(path: str | Path, rows: list[NashRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "mean_cost", "std_err", "diff_vs_baseline", "diff_std_err"])
        for r in rows:
            w.writerow([repr(r.lam), repr(r.mean_cost), repr(r.std_err), repr(r.diff), repr(r.diff_se)])
