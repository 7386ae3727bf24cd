"""Shared parameter sets, time grids and counter-keyed noise generation.

Every random quantity in the package is drawn from a Philox stream whose key
and counter are fixed by ``(seed, kind, scenario_id, path_index)``.  A path can
therefore be regenerated on its own, in any order and on any worker, and it
will be bit-identical to the one produced inside a larger batch.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

LIMIT = "limit"

# stream kinds; part of the Philox key
COMMON = 0
IDIO = 1
INIT = 2
AUX = 3

_U64 = (1 << 64) - 1

T_ = TypeVar("T_")
R_ = TypeVar("R_")


class ParameterError(ValueError):
    """A parameter set or call violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A scheme became unstable, blew up or produced NaN."""


@dataclass(frozen=True)
class LqParams:
    """Constants of the interbank LQ game.

    ``N`` is a player count or :data:`LIMIT` for the mean-field regime.
    """

    a: float = 0.1
    q: float = 0.2
    eps: float = 0.5
    c: float = 0.3
    sigma: float = 1.0
    rho: float = 0.5
    T: float = 1.0
    N: int | str = LIMIT

    def __post_init__(self) -> None:
        if self.N != LIMIT:
            if isinstance(self.N, bool) or not isinstance(self.N, (int, np.integer)) or self.N < 1:
                raise ParameterError(f"N must be a positive integer or {LIMIT!r}, got {self.N!r}")
            object.__setattr__(self, "N", int(self.N))
        for name in ("a", "q", "eps", "c", "sigma", "rho", "T"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ParameterError(f"{name} must be finite, got {v}")
        if self.q * self.q > self.eps * (1 + 1e-12):
            raise ParameterError(f"need q^2 <= eps, got q={self.q}, eps={self.eps}")
        if not 0.0 <= self.rho <= 1.0:
            raise ParameterError(f"rho must lie in [0, 1], got {self.rho}")
        if self.sigma < 0.0:
            raise ParameterError(f"sigma must be nonnegative, got {self.sigma}")
        if self.T <= 0.0:
            raise ParameterError(f"T must be positive, got {self.T}")
        if self.a < 0.0 or self.c < 0.0:
            raise ParameterError("a and c must be nonnegative")

    @property
    def is_limit(self) -> bool:
        return self.N == LIMIT

    @property
    def inv_n(self) -> float:
        """1/N, or 0 in the limit regime."""
        return 0.0 if self.is_limit else 1.0 / self.N

    @property
    def idio_vol(self) -> float:
        return self.sigma * math.sqrt(1.0 - self.rho * self.rho)

    @property
    def common_vol(self) -> float:
        return self.sigma * self.rho

    def with_(self, **changes) -> "LqParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    steps: int

    def __post_init__(self) -> None:
        if not self.T > self.t0:
            raise ParameterError(f"grid needs T > t0, got t0={self.t0}, T={self.T}")
        if self.steps < 0 or int(self.steps) != self.steps:
            raise ParameterError(f"steps must be a nonnegative integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.steps if self.steps else 0.0

    @property
    def times(self) -> np.ndarray:
        if self.steps == 0:
            return np.array([self.t0])
        t = self.t0 + self.dt * np.arange(self.steps + 1)
        t[-1] = self.T
        return t

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.steps * factor)

    def coarsen(self, factor: int = 2) -> "TimeGrid":
        if self.steps % factor:
            raise ParameterError(f"{self.steps} steps not divisible by {factor}")
        return TimeGrid(self.t0, self.T, self.steps // factor)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NoiseBundle:
    """Brownian increments for one scenario.

    ``common[j]`` holds the increments of common mode ``j`` (variance
    ``mode_weights[j] * dt``); ``idiosyncratic[i]`` those of path ``i``
    (variance ``dt``).
    """

    common: np.ndarray
    idiosyncratic: np.ndarray
    mode_weights: tuple[float, ...]
    seed: int
    scenario_id: int
    dt: float

    @property
    def steps(self) -> int:
        return self.common.shape[-1]

    def common_path(self, mode: int = 0) -> np.ndarray:
        """Brownian path of one common mode, starting at 0 (length steps+1)."""
        return brownian_path(self.common[mode])

    def coarsen(self, factor: int) -> "NoiseBundle":
        return NoiseBundle(
            common=_frozen(coarsen_increments(self.common, factor)),
            idiosyncratic=_frozen(coarsen_increments(self.idiosyncratic, factor)),
            mode_weights=self.mode_weights,
            seed=self.seed,
            scenario_id=self.scenario_id,
            dt=self.dt * factor,
        )


def _check_ids(seed: int, scenario_id: int) -> None:
    if not 0 <= seed <= _U64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if not 0 <= scenario_id <= _U64:
        raise ParameterError(f"scenario_id must be a 64-bit unsigned integer, got {scenario_id}")


def stream(seed: int, kind: int, scenario_id: int, index: int) -> np.random.Generator:
    """Generator for one ``(seed, kind, scenario, path)`` stream.

    Streams differ in the Philox key (seed, kind) or in the high counter words
    (scenario, path), so draws never overlap.
    """
    _check_ids(seed, scenario_id)
    bitgen = np.random.Philox(key=[seed, kind], counter=[0, 0, int(index), int(scenario_id)])
    return np.random.Generator(bitgen)


def stream_normals(seed: int, kind: int, scenario_id: int, index: int, n: int) -> np.ndarray:
    return stream(seed, kind, scenario_id, index).standard_normal(n)


def make_noise(
    seed: int,
    scenario_id: int,
    grid: TimeGrid,
    n_idio: int,
    mode_weights: Sequence[float] = (1.0,),
    path_ids: Sequence[int] | None = None,
) -> NoiseBundle:
    """Generate the noise of one scenario.

    ``path_ids`` maps row ``i`` of the idiosyncratic block to a stream index
    (default ``range(n_idio)``); it lets a caller re-map players to streams.
    """
    if n_idio < 0:
        raise ParameterError(f"n_idio must be nonnegative, got {n_idio}")
    weights = tuple(float(w) for w in mode_weights)
    if any(not math.isfinite(w) or w < 0.0 for w in weights):
        raise ParameterError(f"mode weights must be nonnegative, got {weights}")
    _check_ids(seed, scenario_id)
    ids = range(n_idio) if path_ids is None else list(path_ids)
    if len(ids) != n_idio:
        raise ParameterError("path_ids must have n_idio entries")
    steps, dt = grid.steps, grid.dt
    sq = math.sqrt(dt)
    common = np.empty((len(weights), steps))
    for j, w in enumerate(weights):
        common[j] = math.sqrt(w) * sq * stream_normals(seed, COMMON, scenario_id, j, steps)
    idio = np.empty((n_idio, steps))
    for row, pid in enumerate(ids):
        idio[row] = sq * stream_normals(seed, IDIO, scenario_id, pid, steps)
    return NoiseBundle(_frozen(common), _frozen(idio), weights, seed, scenario_id, dt)


def coarsen_increments(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments along the last axis."""
    n = increments.shape[-1]
    if n % factor:
        raise ParameterError(f"{n} increments not divisible by {factor}")
    return increments.reshape(*increments.shape[:-1], n // factor, factor).sum(axis=-1)


def brownian_path(increments: np.ndarray) -> np.ndarray:
    out = np.zeros(increments.shape[:-1] + (increments.shape[-1] + 1,))
    np.cumsum(increments, axis=-1, out=out[..., 1:])
    return out


@dataclass(frozen=True)
class InitialLaw:
    """Sampling rule for initial states: a normal law or a point mass."""

    mean: float = 0.0
    std: float = 0.0
    kind: str = field(default="normal")

    @classmethod
    def point(cls, x: float) -> "InitialLaw":
        return cls(mean=x, std=0.0, kind="point")

    @property
    def variance(self) -> float:
        return 0.0 if self.kind == "point" else self.std**2

    def sample(self, seed: int, scenario_id: int, n: int) -> np.ndarray:
        if self.kind == "point" or self.std == 0.0:
            return np.full(n, float(self.mean))
        return self.mean + self.std * stream_normals(seed, INIT, scenario_id, 0, n)


def map_ordered(fn: Callable[[T_], R_], items: Iterable[T_], threads: int = 1) -> list[R_]:
    """Apply ``fn`` to ``items``; results come back in input order.

    Thread count changes wall time only: every item is computed from its own
    seeded streams and callers reduce the returned list in order.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def chunked(n: int, size: int) -> list[range]:
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def ordered_mean_se(samples: np.ndarray) -> tuple[float, float]:
    """Sample mean and standard error along axis 0."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se
