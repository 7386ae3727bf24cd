"""Finite-difference master equation of the mean-field LQ model.

The decoupling field V(t, x, m) solves

    V_t + (a+q)(m-x) V_x + (eps-q^2)(m-x)^2/2 - V_x^2/2
        + sigma^2/2 V_xx + sigma^2 rho^2/2 V_mm + sigma^2 rho^2 V_xm = 0,

with V(T, x, m) = c (m-x)^2 / 2.  Its exact solution is the quadratic
v(t, x, m) = eta_t (x-m)^2 / 2 + chi_t of the limit Riccati system.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from mfglab.mkv_particles import simulate_mkv_batch
from mfglab.model_core import InitialLaw, LqParams, NumericalError, ParameterError, TimeGrid
from mfglab.nplayer_game import running_cost
from mfglab.riccati import _chi_factor, closed_curves, eta_closed

Field = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

FRAME = 2  # boundary cells clamped to the exact solution


@dataclass(frozen=True)
class MasterGrid:
    params: LqParams
    x_axis: np.ndarray
    m_axis: np.ndarray
    t_axis: TimeGrid
    saved_times: np.ndarray
    values: np.ndarray  # (len(saved_times), n_x, n_m)

    def slice_at(self, t: float) -> np.ndarray:
        idx = np.flatnonzero(np.isclose(self.saved_times, t, rtol=0, atol=1e-12))
        if idx.size == 0:
            raise ParameterError(f"time {t} was not saved; saved: {self.saved_times}")
        return self.values[idx[0]]

    def exact(self, t: float) -> np.ndarray:
        X, M = np.meshgrid(self.x_axis, self.m_axis, indexing="ij")
        return exact_field(self.params)(np.full_like(X, t), X, M)

    def interior_error(self, t: float = 0.0) -> float:
        err = np.abs(self.slice_at(t) - self.exact(t))
        return float(err[FRAME:-FRAME, FRAME:-FRAME].max())

    def field_at(self, t: float) -> Field:
        """Cubic interpolant of the saved slice at time ``t`` as a field V(t, x, m)."""
        interp = RegularGridInterpolator((self.x_axis, self.m_axis), self.slice_at(t), method="cubic")

        def field(_t, x, m):
            x, m = np.broadcast_arrays(np.asarray(x, float), np.asarray(m, float))
            return interp(np.stack([x.ravel(), m.ravel()], axis=-1)).reshape(x.shape)

        return field

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "m", "V", "V_exact", "abs_err"])
            for t, vals in zip(self.saved_times, self.values):
                ex = self.exact(t)
                for i, x in enumerate(self.x_axis):
                    for j, m in enumerate(self.m_axis):
                        v, e = float(vals[i, j]), float(ex[i, j])
                        w.writerow([repr(float(t)), repr(float(x)), repr(float(m)), repr(v), repr(e), repr(abs(v - e))])


def exact_field(p: LqParams, eta_scale: float = 1.0) -> Field:
    """Vectorised v(t, x, m) = eta_t (x-m)^2/2 + chi_t in the limit regime.

    ``eta_scale`` inflates the quadratic coefficient; used for negative controls.
    """
    p = p if p.is_limit else p.with_(N="limit")
    k = _chi_factor(p)
    nodes, weights = np.polynomial.legendre.leggauss(40)

    def chi(t: np.ndarray) -> np.ndarray:
        if k == 0.0:
            return np.zeros_like(t)
        s = 0.5 * (p.T - t)[:, None] * nodes + 0.5 * (p.T + t)[:, None]
        return k * 0.5 * (p.T - t) * (np.asarray(eta_closed(s, p)) @ weights)

    def field(t, x, m):
        t, x, m = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float), np.asarray(m, float))
        uniq, inv = np.unique(t, return_inverse=True)
        eta = np.asarray(eta_closed(uniq, p)).reshape(-1)[inv].reshape(t.shape)
        ch = chi(uniq)[inv].reshape(t.shape)
        return 0.5 * eta_scale * eta * (x - m) ** 2 + ch

    return field


def _second_order_upwind(V: np.ndarray, b: np.ndarray, dx: float) -> np.ndarray:
    """b * V_x with one-sided three-point differences taken in the direction of b (backward time)."""
    n, F = V.shape[0], FRAME
    out = np.zeros_like(V)
    v0 = V[F : n - F]
    fwd = (-3 * v0 + 4 * V[F + 1 : n - F + 1] - V[F + 2 : n - F + 2]) / (2 * dx)
    bwd = (3 * v0 - 4 * V[F - 1 : n - F - 1] + V[F - 2 : n - F - 2]) / (2 * dx)
    bc = b[F : n - F]
    out[F : n - F] = np.where(bc > 0, bc * fwd, bc * bwd)
    return out


def _operator(V: np.ndarray, X: np.ndarray, M: np.ndarray, p: LqParams, dx: float, dm: float) -> np.ndarray:
    """Spatial part of the master equation on the interior (zero on the frame)."""
    s2, s2r2 = p.sigma**2, (p.sigma * p.rho) ** 2
    L = np.zeros_like(V)
    i = slice(1, -1)
    Vx = (V[2:, i] - V[:-2, i]) / (2 * dx)
    Vxx = (V[2:, i] - 2 * V[i, i] + V[:-2, i]) / dx**2
    Vmm = (V[i, 2:] - 2 * V[i, i] + V[i, :-2]) / dm**2
    Vxm = (V[2:, 2:] - V[2:, :-2] - V[:-2, 2:] + V[:-2, :-2]) / (4 * dx * dm)
    d = M[i, i] - X[i, i]
    L[i, i] = 0.5 * (p.eps - p.q**2) * d * d - 0.5 * Vx * Vx + 0.5 * s2 * Vxx + 0.5 * s2r2 * Vmm + s2r2 * Vxm
    L += _second_order_upwind(V, (p.a + p.q) * (M - X), dx)
    return L


def cfl_number(p: LqParams, dt: float, dx: float, dm: float, span: float) -> float:
    s2, s2r2 = p.sigma**2, (p.sigma * p.rho) ** 2
    eta_max = float(np.max(closed_curves(p, TimeGrid(0.0, p.T, 64)).eta))
    adv = (p.a + p.q) * span / dx + eta_max * span / dx
    return dt * (s2 / dx**2 + s2r2 / dm**2 + s2r2 / (dx * dm) + adv)


def solve_master(
    p: LqParams,
    x_range: tuple[float, float] = (-3.0, 3.0),
    n_x: int = 61,
    m_range: tuple[float, float] = (-3.0, 3.0),
    n_m: int = 61,
    steps: int = 400,
    save_every: int | None = None,
) -> MasterGrid:
    """Explicit backward time stepping of the master equation.

    Boundary frame (two cells deep) is clamped to the exact solution.  The
    quadratic term uses the lagged (already known) time level.
    """
    if not p.is_limit:
        raise ParameterError("solve_master works in the limit regime (N='limit')")
    if n_x < 2 * FRAME + 1 or n_m < 2 * FRAME + 1 or steps < 1:
        raise ParameterError("lattice too small")
    x = np.linspace(*x_range, n_x)
    m = np.linspace(*m_range, n_m)
    dx, dm = x[1] - x[0], m[1] - m[0]
    grid = TimeGrid(0.0, p.T, steps)
    dt = grid.dt
    span = max(abs(x[-1] - m[0]), abs(m[-1] - x[0]))
    cfl = cfl_number(p, dt, dx, dm, span)
    if cfl > 0.5:
        raise NumericalError(f"CFL number {cfl:.3f} exceeds 1/2; use more steps or a coarser lattice")
    X, M = np.meshgrid(x, m, indexing="ij")
    curves = closed_curves(p, grid)
    times = grid.times

    def exact_at(k: int) -> np.ndarray:
        return 0.5 * curves.eta[k] * (X - M) ** 2 + curves.chi[k]

    save_every = save_every or steps
    saved_t, saved_v = [], []
    V = 0.5 * p.c * (M - X) ** 2
    saved_t.append(times[-1])
    saved_v.append(V.copy())
    frame = np.ones_like(V, dtype=bool)
    frame[FRAME:-FRAME, FRAME:-FRAME] = False
    for k in range(steps, 0, -1):
        V = V + dt * _operator(V, X, M, p, dx, dm)
        V[frame] = exact_at(k - 1)[frame]
        if not np.all(np.isfinite(V)):
            i, j = np.argwhere(~np.isfinite(V))[0]
            raise NumericalError(f"non-finite value at t={times[k - 1]}, x={x[i]}, m={m[j]}")
        if (steps - (k - 1)) % save_every == 0 or k == 1:
            saved_t.append(times[k - 1])
            saved_v.append(V.copy())
    order = np.argsort(saved_t)
    return MasterGrid(p, x, m, grid, np.array(saved_t)[order], np.array(saved_v)[order])


def _d1(f: Callable[[float], np.ndarray], h: float) -> np.ndarray:
    return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)


def _d2(f: Callable[[float], np.ndarray], h: float) -> np.ndarray:
    return (-f(2 * h) + 16 * f(h) - 30 * f(0.0) + 16 * f(-h) - f(-2 * h)) / (12 * h * h)


def master_residual(field: Field, p: LqParams, t, x, m, h: float) -> np.ndarray:
    """Left side of the master equation, every derivative by 4th-order central differences."""
    t, x, m = np.broadcast_arrays(*(np.asarray(v, float) for v in (t, x, m)))
    Vt = _d1(lambda e: field(t + e, x, m), h)
    Vx = _d1(lambda e: field(t, x + e, m), h)
    Vxx = _d2(lambda e: field(t, x + e, m), h)
    Vmm = _d2(lambda e: field(t, x, m + e), h)
    Vxm = _d1(lambda e: _d1(lambda g: field(t, x + g, m + e), h), h)
    s2, s2r2 = p.sigma**2, (p.sigma * p.rho) ** 2
    d = m - x
    return (
        Vt
        + (p.a + p.q) * d * Vx
        + 0.5 * (p.eps - p.q**2) * d * d
        - 0.5 * Vx * Vx
        + 0.5 * s2 * Vxx
        + 0.5 * s2r2 * Vmm
        + s2r2 * Vxm
    )


def residual_of_field(field: Field, p: LqParams, ts: Sequence[float], xs: Sequence[float], ms: Sequence[float], h: float) -> float:
    """Max absolute master-equation residual of ``field`` over the probe lattice ts x xs x ms."""
    if min(ts) - 2 * h < 0.0 or max(ts) + 2 * h > p.T:
        raise ParameterError("probe times need a 2h margin inside [0, T]")
    T_, X_, M_ = np.meshgrid(ts, xs, ms, indexing="ij")
    return float(np.max(np.abs(master_residual(field, p, T_, X_, M_, h))))


def restriction_check(field: Field, points, weights, t: float, h: float = 1e-4) -> float:
    """Integral of V_x(t, ., m) against a discrete measure whose mean is m."""
    points = np.asarray(points, float)
    weights = np.asarray(weights, float)
    if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-12):
        raise ParameterError("weights must be nonnegative and sum to 1")
    m = float(weights @ points)
    tt = np.full_like(points, t)
    vx = (field(tt, points + h, m) - field(tt, points - h, m)) / (2 * h)
    return float(weights @ vx)


@dataclass(frozen=True)
class DecouplingReport:
    times: np.ndarray
    mean_drift: np.ndarray
    std_err: np.ndarray
    bias: np.ndarray
    statistic: float  # max_t |E[S_t - S_0]|
    passed: bool


def _martingale_increments(p, grid, n_scenarios, n_particles, seed, law, field, noise_factor, mesh_idx):
    states, means = simulate_mkv_batch(p, grid, n_scenarios, n_particles, seed, law, "exact", noise_factor)
    t = grid.times
    eta = np.asarray(eta_closed(t, p)).reshape(-1)
    alpha = (p.q + eta)[None, None, :] * (means[:, None, :] - states)
    f = running_cost(states, means[:, None, :], alpha, p)
    run = np.concatenate([np.zeros(f.shape[:2] + (1,)), np.cumsum(f[..., :-1] * grid.dt, axis=-1)], axis=-1)
    tt = np.broadcast_to(t, states.shape)
    S = field(tt, states, np.broadcast_to(means[:, None, :], states.shape)) + run
    return (S[..., mesh_idx] - S[..., :1]).mean(axis=1)  # (S, len(mesh))


def decoupling_consistency(
    p: LqParams,
    grid: TimeGrid,
    n_scenarios: int,
    seed: int,
    n_particles: int = 4,
    initial_law: InitialLaw = InitialLaw(0.0, 1.0),
    eta_scale: float = 1.0,
    mesh: int = 10,
) -> DecouplingReport:
    """Martingale test of v(t, X_t, m_t) + running cost along the MKV equilibrium.

    The time-discretization bias at every mesh point is the step-halving gap.
    """
    if not p.is_limit:
        raise ParameterError("decoupling_consistency needs the limit regime")
    if grid.steps % (2 * mesh):
        raise ParameterError("grid steps must be a multiple of 2 * mesh")
    field = exact_field(p, eta_scale)
    fine_idx = np.arange(1, mesh + 1) * (grid.steps // mesh)
    fine = _martingale_increments(p, grid, n_scenarios, n_particles, seed, initial_law, field, 1, fine_idx)
    cgrid = grid.coarsen(2)
    coarse = _martingale_increments(p, cgrid, n_scenarios, n_particles, seed, initial_law, field, 2, fine_idx // 2)
    mean = fine.mean(axis=0)
    se = fine.std(axis=0, ddof=1) / math.sqrt(n_scenarios)
    bias = np.abs(mean - coarse.mean(axis=0))
    stat = float(np.max(np.abs(mean)))
    return DecouplingReport(grid.times[fine_idx], mean, se, bias, stat, bool(np.all(np.abs(mean) <= 3 * se + bias)))
