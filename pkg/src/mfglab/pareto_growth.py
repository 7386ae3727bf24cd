"""Growth model with Pareto-distributed states.

States follow dX = alpha dt + sigma X dW0 with linear controls alpha = gamma X,
so that X_t = X_0 q_t where q solves dq = gamma q dt + sigma q dW0.  A Pareto
law with left endpoint q_0 is therefore carried to the Pareto law with left
endpoint q_t.  The reward of a player is

    f(x, mu^(q), alpha) = c x^(a+b(k+1)) / (k^b q^(kb)) 1{x >= q}
                          - E alpha^p (x^(kb) v q^(kb)) / (p q^(kb))

and the candidate decoupling field is V(x, q) = B x^(p+bk) / q^(bk) on
{x >= q}, continued by B x^p below the diagonal, i.e.
V(x, q) = B x^p max(x^(bk) / q^(bk), 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from mfglab.model_core import (
    INIT,
    ParameterError,
    NumericalError,
    TimeGrid,
    chunked,
    make_noise,
    map_ordered,
    ordered_mean_se,
    stream,
)

_B_CAP = 1e150


@dataclass(frozen=True)
class ParetoParams:
    k: float = 3.0
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    E: float = 1.0
    p: float = 2.0
    sigma: float = 0.5
    r: float = 0.0
    T: float = 1.0
    B: float | None = None
    gamma: float | None = None

    def __post_init__(self) -> None:
        for name in ("k", "a", "b", "c", "E", "p", "sigma", "r", "T"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ParameterError(f"{name} must be finite, got {v}")
        if self.k <= 0 or self.b <= 0 or self.E <= 0 or self.T <= 0:
            raise ParameterError("k, b, E and T must be positive")
        if self.p <= 1:
            raise ParameterError(f"p must exceed 1, got {self.p}")
        if self.c < 0 or self.sigma < 0 or self.r < 0:
            raise ParameterError("c, sigma and r must be nonnegative")
        if not math.isclose(self.a + self.b, self.p, rel_tol=1e-12, abs_tol=1e-12):
            raise ParameterError(f"need a + b = p, got a={self.a}, b={self.b}, p={self.p}")
        if not self.p * (self.p - 1) < self.b * self.k:
            raise ParameterError(f"need p(p-1) < bk, got p={self.p}, bk={self.b * self.k}")

    @property
    def bk(self) -> float:
        return self.b * self.k

    @property
    def n(self) -> float:
        """Exponent p + bk of x in the candidate field."""
        return self.p + self.bk

    @property
    def is_solved(self) -> bool:
        return self.B is not None and self.gamma is not None

    def with_(self, **changes) -> "ParetoParams":
        return replace(self, **changes)


def F_of_B(B, prm: ParetoParams):
    """Left-hand side of the equation for B once gamma has been eliminated."""
    p, bk, E = prm.p, prm.bk, prm.E
    B = np.asarray(B, dtype=float)
    lead = (p + bk) ** (1 / (p - 1)) * E ** (-1 / (p - 1)) * (p - 1 - bk / p)
    out = lead * B ** (p / (p - 1)) + (0.5 * prm.sigma**2 * p * (p - 1) - prm.r) * B + prm.c / prm.k**prm.b
    return float(out) if out.ndim == 0 else out


def _G(B: float, prm: ParetoParams) -> float:
    # F(B) / B, finite at 0+ when c = 0
    p, bk, E = prm.p, prm.bk, prm.E
    lead = (p + bk) ** (1 / (p - 1)) * E ** (-1 / (p - 1)) * (p - 1 - bk / p)
    return lead * B ** (1 / (p - 1)) + 0.5 * prm.sigma**2 * p * (p - 1) - prm.r + prm.c / prm.k**prm.b / B


@dataclass(frozen=True)
class RootResult:
    B: float
    residual: float
    degenerate: bool
    iterations: int


def solve_B(prm: ParetoParams) -> RootResult:
    """Positive root of F by bisection on F(B)/B.

    The upper end of the bracket doubles until the sign changes; the leading
    coefficient is negative, so it always does.  With c = 0 the equation
    factors as B * (...) = 0: the positive root is returned when it exists,
    B = 0 otherwise, and the result is flagged degenerate.
    """
    degenerate = prm.c == 0.0
    if degenerate and not _G(1e-300, prm) > 0.0:
        return RootResult(0.0, 0.0, True, 0)
    hi = 1.0
    while _G(hi, prm) > 0.0:
        hi *= 2.0
        if hi > _B_CAP:
            raise NumericalError("no sign change of F below the bracket cap")
    lo, it = 0.0, 0
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        it += 1
        if _G(mid, prm) > 0.0:
            lo = mid
        else:
            hi = mid
    # pick the end of the final bracket with the smaller residual
    cands = [b for b in (lo, hi) if b > 0.0]
    B = min(cands, key=lambda b: abs(F_of_B(b, prm)))
    return RootResult(B, abs(F_of_B(B, prm)), degenerate, it)


def gamma_of_B(prm: ParetoParams, B: float | None = None) -> float:
    """gamma = (B (p + bk) / E)^(1/(p-1))."""
    B = prm.B if B is None else B
    if B is None or B < 0.0:
        raise ParameterError("gamma needs a nonnegative B")
    return (B * prm.n / prm.E) ** (1.0 / (prm.p - 1.0))


def solve(prm: ParetoParams) -> ParetoParams:
    """Copy of ``prm`` with B and gamma filled in."""
    B = solve_B(prm).B
    return prm.with_(B=B, gamma=gamma_of_B(prm, B))


def optimal_feedback(prm: ParetoParams, x, q, y):
    """Maximizer of the Hamiltonian at x, Pareto parameter q and adjoint y >= 0."""
    x, q, y = (np.asarray(v, dtype=float) for v in (x, q, y))
    return (y / prm.E * np.minimum(q**prm.bk / x**prm.bk, 1.0)) ** (1.0 / (prm.p - 1.0))


def tail_mass(x, q: float, k: float):
    """mu^(q)([x, inf)) = min(1, q^k / x^k)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.minimum(1.0, (q / x) ** k)


def sample_pareto(q: float, k: float, n: int, seed: int, scenario_id: int = 0) -> np.ndarray:
    """Inverse-CDF draws x = q U^(-1/k) with U uniform on (0, 1]."""
    if q <= 0 or k <= 0:
        raise ParameterError("q and k must be positive")
    U = 1.0 - stream(seed, INIT, scenario_id, 0).random(n)
    return q * U ** (-1.0 / k)


def _require_solved(prm: ParetoParams) -> None:
    if not prm.is_solved:
        raise ParameterError("parameters must carry B and gamma (see solve)")


@dataclass(frozen=True)
class ParetoState:
    """Paths of q and of the particles for every scenario.

    ``q`` has shape (S, steps+1) with q_0 = 1 and ``X`` (S, n, steps+1).
    ``growth`` holds the exponential factor shared by q and the particles.
    """

    params: ParetoParams
    grid: TimeGrid
    q: np.ndarray
    X: np.ndarray
    growth: np.ndarray
    control_rate: float

    def ratios(self, step: int, scenario: int = 0) -> np.ndarray:
        return self.X[scenario, :, step] / self.q[scenario, step]


def _factors(prm: ParetoParams, grid: TimeGrid, seed: int, scenario: int, rate: float) -> np.ndarray:
    w0 = make_noise(seed, scenario, grid, 0, (1.0,)).common_path(0)
    return np.exp((rate - 0.5 * prm.sigma**2) * grid.times + prm.sigma * w0)


def simulate_growth(
    prm: ParetoParams,
    grid: TimeGrid,
    n_particles: int,
    n_scenarios: int,
    seed: int,
    gamma_dev: float | None = None,
) -> ParetoState:
    """Exact geometric stepping from X_0 ~ Pareto(1, k) and q_0 = 1.

    With ``gamma_dev`` the particles use the control gamma_dev * X while q
    keeps the equilibrium rate.
    """
    _require_solved(prm)
    if n_particles < 1 or n_scenarios < 1:
        raise ParameterError("need at least one particle and one scenario")
    rate = prm.gamma if gamma_dev is None else float(gamma_dev)
    if rate < 0:
        raise ParameterError("the control rate must be nonnegative")
    q = np.empty((n_scenarios, grid.steps + 1))
    X = np.empty((n_scenarios, n_particles, grid.steps + 1))
    for s in range(n_scenarios):
        q[s] = _factors(prm, grid, seed, s, prm.gamma)
        gx = q[s] if gamma_dev is None else _factors(prm, grid, seed, s, rate)
        X[s] = sample_pareto(1.0, prm.k, n_particles, seed, s)[:, None] * gx
    return ParetoState(prm, grid, q, X, q.copy(), rate)


def ks_statistic(ratios: np.ndarray, k: float) -> float:
    """Kolmogorov-Smirnov distance to the Pareto(1, k) law."""
    return float(stats.kstest(ratios, lambda x: 1.0 - tail_mass(x, 1.0, k)).statistic)


def ks_critical(n: int, level: float = 0.01) -> float:
    return float(stats.kstwo.ppf(1.0 - level, n))


def value_field(prm: ParetoParams, x, q, B: float | None = None, capped: bool = True):
    """B x^(p+bk) / q^(bk), or B x^p max(x^(bk) / q^(bk), 1) when capped."""
    B = prm.B if B is None else B
    x, q = np.asarray(x, dtype=float), np.asarray(q, dtype=float)
    if capped:
        return B * x**prm.p * np.maximum((x / q) ** prm.bk, 1.0)
    return B * x**prm.n / q**prm.bk


def reward(prm: ParetoParams, x, q, alpha):
    """Running reward f(x, mu^(q), alpha)."""
    x, q, alpha = (np.asarray(v, dtype=float) for v in (x, q, alpha))
    qb = q**prm.bk
    prod = prm.c * x ** (prm.a + prm.b * (prm.k + 1)) / (prm.k**prm.b * qb) * (x >= q)
    return prod - prm.E / (prm.p * qb) * alpha**prm.p * np.maximum(x**prm.bk, qb)


def _d1(f, z, h):
    return (f(z - 2 * h) - 8 * f(z - h) + 8 * f(z + h) - f(z + 2 * h)) / (12 * h)


def _d2(f, z, h):
    return (-f(z - 2 * h) + 16 * f(z - h) - 30 * f(z) + 16 * f(z + h) - f(z + 2 * h)) / (12 * h * h)


def pareto_residual_at(prm: ParetoParams, x, q, h: float, B: float | None = None) -> np.ndarray:
    """Master-equation residual of the (capped) candidate field by 4th-order differences."""
    _require_solved(prm)
    B = prm.B if B is None else B
    x, q = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(q, dtype=float))

    def V(xx, qq):
        return value_field(prm, xx, qq, B)

    vx = _d1(lambda z: V(z, q), x, h)
    vxx = _d2(lambda z: V(z, q), x, h)
    vq = _d1(lambda z: V(x, z), q, h)
    vqq = _d2(lambda z: V(x, z), q, h)
    vxq = _d1(lambda z: _d1(lambda w: V(w, z), x, h), q, h)
    p, bk = prm.p, prm.bk
    ham = (p - 1) / p * prm.E ** (-1 / (p - 1)) * np.maximum(vx, 0.0) ** (p / (p - 1)) * np.minimum(
        (q / x) ** (bk / (p - 1)), 1.0
    )
    prod = prm.c * x ** (prm.a + (prm.k + 1) * prm.b) / (prm.k**prm.b * q**bk) * (x >= q)
    second = 0.5 * prm.sigma**2 * (x * x * vxx + q * q * vqq + 2 * x * q * vxq)
    return ham + prod + prm.gamma * q * vq + second - prm.r * V(x, q)


def _stencil_clear(x, q, h):
    # the mixed stencil moves x - q by up to 4h
    return np.abs(x - q) > 4.0 * h


def pareto_master_residual(
    prm: ParetoParams, xs, qs, h: float, B: float | None = None, region: str = "above"
) -> float:
    """Max |residual| over the lattice xs x qs restricted to one side of the diagonal.

    ``region="above"`` keeps x > q and returns max |residual|;
    ``region="below"`` keeps x < q and returns the minimum residual (its sign
    is the quantity of interest there).  Points whose stencil would cross
    the diagonal are dropped.
    """
    X, Q = np.meshgrid(np.asarray(xs, dtype=float), np.asarray(qs, dtype=float), indexing="ij")
    if np.any(Q - 2 * h <= 0) or np.any(X - 2 * h <= 0):
        raise ParameterError("lattice must keep the stencil inside x, q > 0")
    if region not in ("above", "below"):
        raise ParameterError(f"unknown region {region!r}")
    keep = _stencil_clear(X, Q, h) & ((X > Q) if region == "above" else (X < Q))
    if not np.any(keep):
        raise ParameterError("no lattice point left after excluding the diagonal band")
    res = pareto_residual_at(prm, X[keep], Q[keep], h, B)
    return float(np.max(np.abs(res))) if region == "above" else float(np.min(res))


@dataclass(frozen=True)
class MartingaleReport:
    """Normalized drift E[(M_t - M_0) / V(X_0, q_0)] on a time mesh."""

    gamma_dev: float
    times: np.ndarray
    mean_drift: np.ndarray
    std_err: np.ndarray
    bias: np.ndarray
    tail: float  # e^{-rT} E[V(X_T, q_T) / V(X_0, q_0)]

    def is_martingale(self, k: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.mean_drift) <= k * self.std_err + self.bias))

    def is_submartingale(self, k: float = 3.0) -> bool:
        return bool(np.all(self.mean_drift >= -k * self.std_err))

    def is_supermartingale(self, k: float = 3.0) -> bool:
        return bool(np.all(self.mean_drift <= k * self.std_err))


def _trapezoid(f: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid integral along the last axis, starting at 0."""
    out = np.zeros_like(f)
    np.cumsum(0.5 * (f[:, 1:] + f[:, :-1]) * dt, axis=1, out=out[:, 1:])
    return out


def _mart_chunk(prm, grid, seed, scenarios, n, rate, mesh_idx, factor):
    t = grid.times
    disc = np.exp(-prm.r * t)
    out = np.empty((len(scenarios), len(mesh_idx)))
    coarse = np.empty_like(out)
    tail = np.empty(len(scenarios))
    for row, s in enumerate(scenarios):
        q = _factors(prm, grid, seed, s, prm.gamma)
        g = q if rate == prm.gamma else _factors(prm, grid, seed, s, rate)
        x0 = sample_pareto(1.0, prm.k, n, seed, s)
        X = x0[:, None] * g
        V0 = value_field(prm, x0, 1.0)
        V = disc * value_field(prm, X, q) / V0[:, None]
        f = disc * reward(prm, X, q, rate * X) / V0[:, None]
        M = V + _trapezoid(f, grid.dt)
        out[row] = (M[:, mesh_idx] - M[:, :1]).mean(axis=0)
        # the same paths seen on every factor-th node
        fc = f[:, ::factor]
        Mc = V[:, ::factor] + _trapezoid(fc, grid.dt * factor)
        coarse[row] = (Mc[:, mesh_idx // factor] - Mc[:, :1]).mean(axis=0)
        tail[row] = V[:, -1].mean()
    return out, coarse, tail


def martingale_checks(
    prm: ParetoParams,
    grid: TimeGrid,
    n_scenarios: int,
    n_particles: int,
    seed: int,
    gamma_dev: float | None = None,
    mesh: int = 5,
    threads: int = 1,
) -> MartingaleReport:
    """Drift of M_t = e^{-rt} V(X_t, q_t) + int_0^t e^{-rs} f(X_s, mu^(q_s), g X_s) ds.

    ``g`` is gamma (equilibrium) or ``gamma_dev``.  Each particle's M is
    divided by V(X_0, q_0), which is known at time 0, so martingale and
    sign properties are unchanged while the heavy Pareto tail of V drops
    out.  The time integral is a trapezoid sum; ``bias`` is its change
    when every second node is dropped (paths are exact, so only the
    quadrature moves).
    """
    _require_solved(prm)
    rate = prm.gamma if gamma_dev is None else float(gamma_dev)
    if rate < 0:
        raise ParameterError("gamma_dev must be nonnegative")
    if grid.t0 != 0.0 or not math.isclose(grid.T, prm.T, abs_tol=1e-12):
        raise ParameterError("grid must cover [0, T]")
    if grid.steps % (2 * mesh):
        raise ParameterError("grid steps must be a multiple of 2 * mesh")
    mesh_idx = np.arange(1, mesh + 1) * (grid.steps // mesh)
    per = max(1, (1 << 22) // (n_particles * (grid.steps + 1)))
    parts = map_ordered(
        lambda sc: _mart_chunk(prm, grid, seed, sc, n_particles, rate, mesh_idx, 2),
        chunked(n_scenarios, per),
        threads,
    )
    fine = np.concatenate([p[0] for p in parts])
    coarse = np.concatenate([p[1] for p in parts])
    tail = np.concatenate([p[2] for p in parts])
    m, se = ordered_mean_se(fine)
    bias = np.abs(m - coarse.mean(axis=0))
    return MartingaleReport(rate, grid.times[mesh_idx], m, se, bias, float(tail.mean()))


def deviation_drift_rate(prm: ParetoParams, gamma_dev: float) -> float:
    """Exact drift of M per unit of V on {x >= q} under the control gamma_dev X.

    Equals (h(gamma_dev) - h(gamma)) / B with h(g) = (p + bk) B g - E g^p / p,
    which is never positive because h peaks at gamma.
    """
    _require_solved(prm)

    def h(g):
        return prm.n * prm.B * g - prm.E * g**prm.p / prm.p

    return (h(gamma_dev) - h(prm.gamma)) / prm.B


def write_growth_csv(
    path: str | Path,
    state: ParetoState,
    ks: Sequence[float],
    steps: Sequence[int],
    eq: MartingaleReport,
    devs: Sequence[tuple[str, MartingaleReport]],
) -> None:
    """Columns t, q_t, ks_stat, mart_drift and one submart_drift column per deviation.

    Rows sit on the martingale mesh; q_t and ks_stat come from scenario 0.
    """
    t_idx = {round(float(t), 12): i for i, t in enumerate(state.grid.times)}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "q_t", "ks_stat", "mart_drift"] + [f"submart_drift_{name}" for name, _ in devs])
        ks_at = dict(zip(steps, ks))
        for j, t in enumerate(eq.times):
            i = t_idx[round(float(t), 12)]
            row = [repr(float(t)), repr(float(state.q[0, i])), repr(float(ks_at.get(i, float("nan")))), repr(float(eq.mean_drift[j]))]
            row += [repr(float(r.mean_drift[j])) for _, r in devs]
            w.writerow(row)


def deviation_drift_mean(prm: ParetoParams, gamma_dev: float, t) -> np.ndarray:
    """Exact E[(M_t - M_0) / V(X_0, q_0)] under the control gamma_dev X, gamma_dev >= gamma.

    Such paths never leave {x >= q}, where the drift of M is
    kappa e^{-rt} V(X_t, q_t) with kappa from :func:`deviation_drift_rate`, and
    E[e^{-rt} V(X_t, q_t)] / V(X_0, q_0) = e^{lam t} with
    lam = (p + bk) gamma_dev - bk gamma + sigma^2 p (p - 1) / 2 - r.
    """
    _require_solved(prm)
    if gamma_dev < prm.gamma:
        raise ParameterError("the closed form needs gamma_dev >= gamma (paths stay on x >= q)")
    kappa = deviation_drift_rate(prm, gamma_dev)
    lam = prm.n * gamma_dev - prm.bk * prm.gamma + 0.5 * prm.sigma**2 * prm.p * (prm.p - 1.0) - prm.r
    t = np.asarray(t, dtype=float)
    growth = t if lam == 0.0 else np.expm1(lam * t) / lam
    return kappa * growth
