"""Time grids, cadlag paths with jump bookkeeping, and driving-noise samplers.

Paths are grid-synchronous: ``values[k]`` is the state at ``times[k]`` and
``jump_flags[k]`` says whether the increment ``values[k] - values[k-1]`` is a
genuine jump. The left limit at ``t_k`` is ``values[k-1]``.

Stopping times are grid indices; "never" is the sentinel ``N + 1``.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import DomainError, EmbeddedManifold

CHUNK = 256


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise DomainError("a grid needs at least two points")
        if t[0] != 0.0:
            raise DomainError("grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise DomainError("grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimeGrid":
        return cls(np.linspace(0.0, horizon, steps + 1))

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def never(self) -> int:
        """Sentinel index for a stopping time that does not occur on the grid."""
        return len(self.times)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def is_uniform(self) -> bool:
        d = self.dt
        return bool(np.allclose(d, d[0], rtol=1e-12, atol=0))

    def index_at(self, t: float) -> int:
        """First grid index with time >= t (the grid point enclosing t)."""
        return int(np.searchsorted(self.times, t - 1e-12 * max(1.0, self.horizon)))

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())


@dataclass
class EventLog:
    """What the constructor did at each grid step.

    ``kind`` codes: 0 nothing, 1 walk step, 2 geodesic jump, 3 killing.
    ``angle`` is the realised geodesic length of walk/jump steps.
    """

    kind: np.ndarray
    angle: np.ndarray
    angle_law: str = "fixed"
    theta: float = 0.0
    walk_angle: float = 0.0

    NONE = 0
    WALK = 1
    JUMP = 2
    KILL = 3


@dataclass
class CadlagPath:
    grid: TimeGrid
    values: np.ndarray
    jump_flags: np.ndarray
    trap: np.ndarray
    kill_index: int | None = None
    events: EventLog | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.jump_flags = np.asarray(self.jump_flags, dtype=bool)
        self.trap = np.asarray(self.trap, dtype=float)
        n = len(self.grid.times)
        if self.values.shape[0] != n or self.jump_flags.shape != (n,):
            raise DomainError("values and flags must match the grid")
        if self.jump_flags[0]:
            raise DomainError("jump_flags[0] must be false")
        if self.kill_index is not None and self.kill_index < n:
            if not np.all(self.values[self.kill_index :] == self.trap):
                raise DomainError("path must sit at the trap from kill_index on")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    @property
    def left_limits(self) -> np.ndarray:
        """X_{t_k-} for k = 1..N."""
        return self.values[:-1]

    def truncated(self, k: int) -> "CadlagPath":
        """The path observed up to index k, frozen afterwards."""
        vals = self.values.copy()
        vals[k + 1 :] = vals[k]
        flags = self.jump_flags.copy()
        flags[k + 1 :] = False
        kill = self.kill_index if self.kill_index is not None and self.kill_index <= k else None
        return CadlagPath(self.grid, vals, flags, self.trap, kill)

    def stopped(self, k: int) -> "CadlagPath":
        """X^tau for tau = t_k; alias of :meth:`truncated` for readability."""
        return self.truncated(min(k, self.grid.steps))


@dataclass
class PathEnsemble:
    grid: TimeGrid
    values: np.ndarray  # (K, N+1, d)
    jump_flags: np.ndarray  # (K, N+1)
    trap: np.ndarray
    base_seed: int
    per_path_seeds: np.ndarray
    kill_index: np.ndarray | None = None  # (K,), grid.never when not killed
    events: EventLog | None = None  # arrays of shape (K, N+1)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        k = self.values.shape[0]
        if self.kill_index is None:
            self.kill_index = np.full(k, self.grid.never, dtype=int)
        if len(np.unique(self.per_path_seeds)) != len(self.per_path_seeds):
            raise DomainError("per-path seeds collide")

    def __len__(self):
        return self.values.shape[0]

    def __iter__(self):
        return (self.path(i) for i in range(len(self)))

    def path(self, i: int) -> CadlagPath:
        kill = int(self.kill_index[i])
        ev = None
        if self.events is not None:
            e = self.events
            ev = EventLog(e.kind[i], e.angle[i], e.angle_law, e.theta, e.walk_angle)
        return CadlagPath(
            self.grid,
            self.values[i],
            self.jump_flags[i],
            self.trap,
            kill if kill < self.grid.never else None,
            ev,
        )


# ---------------------------------------------------------------------------
# seeds


def path_seed(base_seed: int, index: int) -> int:
    """Per-path seed as a hash of (base_seed, index)."""
    h = hashlib.blake2b(f"{int(base_seed)}:{int(index)}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def path_seeds(base_seed: int, count: int) -> np.ndarray:
    seeds = np.array([path_seed(base_seed, i) for i in range(count)], dtype=np.int64)
    if len(np.unique(seeds)) != count:
        raise DomainError("seed collision")
    return seeds


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one named stream of a path seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def map_chunks(fn: Callable[[int, int], object], count: int, threads: int = 1) -> list:
    """Apply ``fn(lo, hi)`` over fixed-size index chunks, results in chunk order.

    The chunk layout does not depend on ``threads``, so results are identical
    for any worker count.
    """
    bounds = [(lo, min(lo + CHUNK, count)) for lo in range(0, count, CHUNK)]
    if threads <= 1 or len(bounds) == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))


# ---------------------------------------------------------------------------
# samplers


def _dyadic_level(grid: TimeGrid) -> int | None:
    n = grid.steps
    if grid.is_uniform() and n & (n - 1) == 0:
        return int(round(math.log2(n)))
    return None


def _brownian_values(grid: TimeGrid, dim: int, seed: int) -> np.ndarray:
    level = _dyadic_level(grid)
    if level is None:
        rng = generator(seed, 0)
        inc = rng.standard_normal((grid.steps, dim)) * np.sqrt(grid.dt)[:, None]
        return np.vstack([np.zeros((1, dim)), np.cumsum(inc, axis=0)])
    # Brownian bridge refinement: the path on 2^L steps is the subsample of
    # the path on 2^(L+1) steps drawn from the same seed.
    T = grid.horizon
    w = np.zeros((2, dim))
    w[1] = np.sqrt(T) * generator(seed, 0).standard_normal(dim)
    span = T
    for lvl in range(1, level + 1):
        z = generator(seed, lvl).standard_normal((2 ** (lvl - 1), dim))
        mid = 0.5 * (w[:-1] + w[1:]) + 0.5 * np.sqrt(span) * z
        out = np.empty((2 * len(w) - 1, dim))
        out[0::2] = w
        out[1::2] = mid
        w = out
        span /= 2
    return w


def sample_brownian(grid: TimeGrid, dim: int, seed: int) -> CadlagPath:
    """Standard Brownian motion in R^dim; no increment is flagged as a jump."""
    if dim < 1:
        raise DomainError("dim must be >= 1")
    vals = _brownian_values(grid, dim, seed)
    return CadlagPath(grid, vals, np.zeros(len(grid.times), bool), np.zeros(dim))


def symmetric_stable(rng: np.random.Generator, alpha: float, size) -> np.ndarray:
    """Chambers-Mallows-Stuck draw with characteristic function exp(-|xi|^alpha)."""
    u = rng.uniform(-np.pi / 2, np.pi / 2, size)
    w = rng.standard_exponential(size)
    if alpha == 1.0:
        return np.tan(u)
    return (
        np.sin(alpha * u)
        / np.cos(u) ** (1.0 / alpha)
        * (np.cos((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha)
    )


def sample_alpha_stable(
    grid: TimeGrid, dim: int, alpha: float, seed: int, jump_threshold: float = 3.0
) -> CadlagPath:
    """Symmetric alpha-stable process, independent coordinates.

    Increments whose norm exceeds ``jump_threshold * sqrt(dt)`` are flagged
    as jumps; the rest are attributed to the continuous part.
    """
    if not 0.0 < alpha < 2.0:
        raise DomainError("alpha must lie in (0, 2)")
    rng = generator(seed, 0)
    dt = grid.dt
    inc = symmetric_stable(rng, alpha, (grid.steps, dim)) * (dt ** (1.0 / alpha))[:, None]
    vals = np.vstack([np.zeros((1, dim)), np.cumsum(inc, axis=0)])
    flags = np.zeros(len(grid.times), bool)
    flags[1:] = np.linalg.norm(inc, axis=1) > jump_threshold * np.sqrt(dt)
    return CadlagPath(grid, vals, flags, np.zeros(dim))


def sample_compound_poisson(
    grid: TimeGrid, dim: int, rate: float, jump_scale: float, seed: int
) -> CadlagPath:
    """Compound Poisson process with N(0, jump_scale^2 I) marks."""
    if rate < 0 or jump_scale < 0:
        raise DomainError("rate and jump_scale must be nonnegative")
    rng = generator(seed, 0)
    counts = rng.poisson(rate * grid.dt)
    marks = rng.standard_normal((grid.steps, dim)) * jump_scale
    inc = marks * np.sqrt(counts)[:, None]  # sum of n iid normals ~ sqrt(n) N
    vals = np.vstack([np.zeros((1, dim)), np.cumsum(inc, axis=0)])
    flags = np.zeros(len(grid.times), bool)
    flags[1:] = counts > 0
    return CadlagPath(grid, vals, flags, np.zeros(dim))


def sample_ensemble(
    sampler: Callable[..., CadlagPath],
    count: int,
    base_seed: int,
    threads: int = 1,
    **kwargs,
) -> PathEnsemble:
    """Run a per-path sampler ``sampler(seed=...)`` for ``count`` hashed seeds."""
    seeds = path_seeds(base_seed, count)

    def work(lo, hi):
        return [sampler(seed=int(s), **kwargs) for s in seeds[lo:hi]]

    paths = [p for chunk in map_chunks(work, count, threads) for p in chunk]
    return PathEnsemble(
        paths[0].grid,
        np.stack([p.values for p in paths]),
        np.stack([p.jump_flags for p in paths]),
        paths[0].trap,
        base_seed,
        seeds,
    )


def c_constant(m: int, alpha: float) -> float:
    """Normalising constant of the fractional Dirichlet form on R^m."""
    if m < 1 or not 0.0 < alpha < 2.0:
        raise DomainError("need m >= 1 and alpha in (0, 2)")
    return (
        alpha
        * 2.0 ** (alpha - 2.0)
        * math.pi ** (-(m + 2) / 2.0)
        * math.sin(alpha * math.pi / 2.0)
        * math.gamma((m + alpha) / 2.0)
        * math.gamma(alpha / 2.0)
    )


# ---------------------------------------------------------------------------
# stopping times and killing


def _values(path) -> np.ndarray:
    return path.values if isinstance(path, CadlagPath) else np.asarray(path, dtype=float)


def first_exit_time(path, center, radius: float, start: int = 0) -> int:
    """Smallest index k >= start with |X_k - center| > radius, else N + 1."""
    if radius <= 0:
        raise DomainError("radius must be positive")
    vals = _values(path)
    if vals.ndim == 1:
        vals = vals[:, None]
    out = np.linalg.norm(vals[start:] - np.asarray(center, dtype=float), axis=-1) > radius
    hit = np.flatnonzero(out)
    return int(start + hit[0]) if len(hit) else len(vals)


def first_exit_times(values: np.ndarray, centers: np.ndarray, radius: float) -> np.ndarray:
    """Vectorised :func:`first_exit_time` over an array of shape (K, N+1, d)."""
    out = np.linalg.norm(values - centers[:, None, :], axis=-1) > radius
    any_ = out.any(axis=1)
    return np.where(any_, out.argmax(axis=1), values.shape[1])


def detect_killing(path, manifold: EmbeddedManifold, tol: float = 1e-9) -> int:
    """First index at which the path is off the manifold (N + 1 if never)."""
    vals = _values(path)
    off = ~manifold.is_on_manifold(vals, tol=tol)
    hit = np.flatnonzero(off)
    return int(hit[0]) if len(hit) else len(vals)


def detect_killing_many(values: np.ndarray, manifold: EmbeddedManifold, tol: float = 1e-9) -> np.ndarray:
    off = ~manifold.is_on_manifold(values, tol=tol)
    return np.where(off.any(axis=1), off.argmax(axis=1), values.shape[1])


def apply_killing(path: CadlagPath, kill_index: int, trap=None) -> CadlagPath:
    """Freeze the path at the trap from ``kill_index`` on; that increment is a jump."""
    n = len(path.grid.times)
    if kill_index < 0 or kill_index > n:
        raise DomainError("kill_index outside the grid")
    trap = path.trap if trap is None else np.asarray(trap, dtype=float)
    if kill_index >= n:
        return CadlagPath(path.grid, path.values.copy(), path.jump_flags.copy(), trap, path.kill_index, path.events)
    vals = path.values.copy()
    vals[kill_index:] = trap
    flags = path.jump_flags.copy()
    flags[kill_index:] = False
    if kill_index > 0:
        flags[kill_index] = True
    return CadlagPath(path.grid, vals, flags, trap, kill_index, None)


@dataclass(frozen=True)
class StoppingRule:
    """A grid stopping time.

    kinds:
      * ``first_exit_ball``: params ``center``, ``radius``, optional ``start``;
      * ``first_exit_set``: param ``inside`` (vectorised predicate on values);
      * ``deterministic``: param ``time``;
      * ``composite``: param ``rules``; the earliest of them.
    """

    kind: str
    params: dict

    def evaluate(self, path: CadlagPath) -> int:
        vals = path.values
        never = len(vals)
        if self.kind == "first_exit_ball":
            return first_exit_time(vals, self.params["center"], self.params["radius"], self.params.get("start", 0))
        if self.kind == "first_exit_set":
            outside = ~np.asarray(self.params["inside"](vals), dtype=bool)
            hit = np.flatnonzero(outside)
            return int(hit[0]) if len(hit) else never
        if self.kind == "deterministic":
            k = path.grid.index_at(self.params["time"])
            return min(k, never)
        if self.kind == "composite":
            rules: Sequence[StoppingRule] = self.params["rules"]
            return min(r.evaluate(path) for r in rules)
        raise DomainError(f"unknown stopping rule kind {self.kind!r}")
