"""Scalar Riccati system of the LQ interbank game, closed form and RK4.

For finite N the quadratic coefficient of the value function solves

    eta' = 2(a+q) eta + (1 - 1/N^2) eta^2 - (eps - q^2),   eta_T = c,
    chi' = -sigma^2 (1 - rho^2) (1 - 1/N) eta / 2,         chi_T = 0,

and the mean-field limit drops the 1/N and 1/N^2 terms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

from mfglab.model_core import LqParams, NumericalError, ParameterError, TimeGrid


@dataclass(frozen=True)
class DeltaPair:
    delta_plus: float
    delta_minus: float
    R: float


@dataclass(frozen=True)
class RiccatiCurves:
    grid: TimeGrid
    eta: np.ndarray
    chi: np.ndarray
    regime: str
    N: int | str

    def to_csv(self, path: str | Path) -> None:
        write_curves_csv(path, [self])


def _quad_factor(p: LqParams) -> float:
    return 1.0 - p.inv_n**2


def _chi_factor(p: LqParams) -> float:
    return 0.5 * p.sigma**2 * (1.0 - p.rho**2) * (1.0 - p.inv_n)


def compute_deltas(p: LqParams) -> DeltaPair:
    R = (p.a + p.q) ** 2 + _quad_factor(p) * (p.eps - p.q**2)
    if R < -1e-12:
        raise ParameterError(f"R = {R} must be nonnegative")
    R = max(R, 0.0)
    s = math.sqrt(R)
    return DeltaPair(-(p.a + p.q) + s, -(p.a + p.q) - s, R)


def _eta_closed_array(t: np.ndarray, p: LqParams) -> np.ndarray:
    d = compute_deltas(p)
    k = _quad_factor(p)
    # divided by delta_plus - delta_minus, so R -> 0 stays well conditioned
    D = d.delta_plus - d.delta_minus
    tau = p.T - t
    phi = np.expm1(D * tau) / D if D > 0.0 else tau
    num = (p.eps - p.q**2) * phi + p.c * (1.0 + d.delta_plus * phi)
    den = 1.0 - d.delta_minus * phi + p.c * k * phi
    if not np.all(den > 0.0):
        raise ParameterError("closed-form denominator is not strictly positive")
    out = num / den
    # anchor the terminal value exactly
    return np.where(t == p.T, p.c, out)


def eta_closed(t, p: LqParams):
    """Explicit solution eta_t of the Riccati equation (scalar or array ``t``)."""
    ta = np.asarray(t, dtype=float)
    if np.any(ta < 0.0) or np.any(ta > p.T):
        raise ParameterError(f"t must lie in [0, T={p.T}]")
    out = _eta_closed_array(ta, p)
    return float(out) if out.ndim == 0 else out


def chi_closed(t: float, p: LqParams) -> float:
    """chi_t as the scaled integral of eta over [t, T], by adaptive quadrature."""
    if not 0.0 <= t <= p.T:
        raise ParameterError(f"t must lie in [0, T={p.T}]")
    k = _chi_factor(p)
    if k == 0.0 or t == p.T:
        return 0.0
    val, _ = integrate.quad(lambda s: eta_closed(s, p), t, p.T, epsabs=1e-14, epsrel=1e-13)
    return k * val


def closed_curves(p: LqParams, grid: TimeGrid) -> RiccatiCurves:
    """Closed-form eta and chi on a grid; chi accumulates per-interval quadratures from T."""
    _check_grid(p, grid)
    t = grid.times
    eta = np.asarray(eta_closed(t, p), dtype=float).reshape(-1)
    chi = np.zeros_like(eta)
    k = _chi_factor(p)
    if k != 0.0 and len(t) > 1:
        # 10-point Gauss-Legendre on every grid interval, summed backward from T
        nodes, weights = np.polynomial.legendre.leggauss(10)
        lo, hi = t[:-1, None], t[1:, None]
        s = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        pieces = 0.5 * (hi[:, 0] - lo[:, 0]) * (_eta_closed_array(s, p) @ weights)
        chi[:-1] = k * np.cumsum(pieces[::-1])[::-1]
    return RiccatiCurves(grid, eta, chi, _regime(p), p.N)


def _regime(p: LqParams) -> str:
    return "limit" if p.is_limit else "finite"


def _check_grid(p: LqParams, grid: TimeGrid) -> None:
    if not math.isclose(grid.T, p.T, rel_tol=0, abs_tol=1e-12):
        raise ParameterError(f"grid final time {grid.T} differs from T={p.T}")
    if grid.t0 < 0.0:
        raise ParameterError("grid must start at t0 >= 0")


def _rhs(p: LqParams, eta: float) -> tuple[float, float]:
    k = _quad_factor(p)
    deta = 2.0 * (p.a + p.q) * eta + k * eta * eta - (p.eps - p.q**2)
    return deta, -_chi_factor(p) * eta


def integrate_riccati(p: LqParams, grid: TimeGrid, bound: float = 1e8) -> RiccatiCurves:
    """Backward RK4 for (eta, chi) from (c, 0) at T."""
    _check_grid(p, grid)
    n = grid.steps
    if n == 0:
        raise ParameterError("grid needs at least one step")
    h = -grid.dt
    eta = np.empty(n + 1)
    chi = np.empty(n + 1)
    eta[n], chi[n] = p.c, 0.0
    e, x = p.c, 0.0
    for i in range(n, 0, -1):
        k1e, k1x = _rhs(p, e)
        k2e, k2x = _rhs(p, e + 0.5 * h * k1e)
        k3e, k3x = _rhs(p, e + 0.5 * h * k2e)
        k4e, k4x = _rhs(p, e + h * k3e)
        e = e + h / 6.0 * (k1e + 2 * k2e + 2 * k3e + k4e)
        x = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        if not abs(e) <= bound:
            raise NumericalError(f"Riccati blow-up at t={grid.times[i - 1]}: |eta|={abs(e)}")
        eta[i - 1], chi[i - 1] = e, x
    return RiccatiCurves(grid, eta, chi, _regime(p), p.N)


def value_v(t, x, m, p: LqParams):
    """v(t, x, m) = eta_t (x - m)^2 / 2 + chi_t for the regime of ``p``."""
    return 0.5 * eta_closed(t, p) * (np.asarray(x) - m) ** 2 + chi_closed(t, p)


def feedback_alpha(t, x, m, p: LqParams):
    """Equilibrium control (q + (1 - 1/N) eta_t)(m - x)."""
    return (p.q + (1.0 - p.inv_n) * eta_closed(t, p)) * (np.asarray(m) - x)


def write_curves_csv(path: str | Path, curves: list[RiccatiCurves]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "eta", "chi", "regime", "N"])
        for cv in curves:
            for t, e, x in zip(cv.grid.times, cv.eta, cv.chi):
                w.writerow([repr(float(t)), repr(float(e)), repr(float(x)), cv.regime, cv.N])
