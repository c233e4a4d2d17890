"""Manifold-valued martingales with an end point, built by symmetry.

At a grid step the constructor either

* jumps along a geodesic of length theta in a uniform random tangent
  direction (Poisson event times, flagged),
* takes a small geodesic walk step of length ``walk * sqrt(dt)`` in a
  uniform direction (unflagged), or
* is killed: it jumps to the trap and stays there.

A uniform tangent direction V and -V are equally likely, so the mean
increment given the past is normal to M and every tangent test field sees
zero-mean increments.

Several perturbation ``scales`` can be simulated from one set of random
primitives (event times, directions, angle draws); the path for scale s
uses angles multiplied by s. This gives the coupled pairs and sequences the
verification experiments need.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from .geometry import DomainError, EmbeddedManifold
from .metrics import MetricReport
from .paths import (
    CadlagPath,
    EventLog,
    PathEnsemble,
    TimeGrid,
    generator,
    map_chunks,
    path_seed,
    path_seeds,
)
from .calculus import RealPath, SemimartingaleDecomposition

EVENT_STREAM, WALK_STREAM, KILL_STREAM = 1, 2, 3


@dataclass(frozen=True)
class JumpMartingaleSpec:
    x0: tuple[float, ...]
    rate: float = 1.0
    angle_law: str = "fixed"  # "fixed" or "uniform" on [0, theta]
    theta: float | None = None  # None: the largest angle allowed by jump_cap
    walk: float = 0.0
    kill_rate: float = 0.0
    horizon: float = 4.0
    jump_cap: float = 0.5
    bias: float = 0.0  # > 0 only for negative controls
    bias_direction: int = 0

    def resolved_theta(self, m: EmbeddedManifold) -> float:
        if self.theta is not None:
            return float(self.theta)
        return m.angle_for_chord(self.jump_cap)

    def validate(self, m: EmbeddedManifold, grid: TimeGrid | None = None, scales=(1.0,)):
        if self.angle_law not in ("fixed", "uniform"):
            raise DomainError(f"unknown angle law {self.angle_law!r}")
        if min(self.rate, self.walk, self.kill_rate) < 0 or self.bias < 0:
            raise DomainError("rates and scales must be nonnegative")
        if len(self.x0) != m.ambient_dim or not m.is_on_manifold(np.asarray(self.x0), tol=1e-9):
            raise DomainError("x0 must be a point of the manifold")
        smax = max(scales)
        if min(scales) < 0:
            raise DomainError("scales must be nonnegative")
        th = self.resolved_theta(m)
        if m.max_chord(th * smax) > self.jump_cap * (1 + 1e-12):
            raise DomainError("jump angle (times the largest scale) violates the jump cap")
        if grid is not None:
            if abs(grid.horizon - self.horizon) > 1e-12 * max(1.0, self.horizon):
                raise DomainError("grid horizon differs from the process horizon")
            dtmax = float(grid.dt.max())
            if (self.rate + self.kill_rate) * dtmax >= 0.1:
                raise DomainError("grid too coarse: need (rate + kill_rate) * dt < 0.1")
            if self.walk > 0 and m.max_chord(self.walk * np.sqrt(dtmax) * smax) > self.jump_cap:
                raise DomainError("walk step violates the jump cap")


# ---------------------------------------------------------------------------
# random primitives


@dataclass
class _Primitives:
    event: np.ndarray  # (C, N+1) bool
    gauss: np.ndarray  # (C, N+1, d) direction draws for events
    unif: np.ndarray  # (C, N+1) angle draws for events
    walk_gauss: np.ndarray | None  # (C, N, d)
    kill: np.ndarray  # (C,) grid index, N+1 = never


def _event_indices(grid: TimeGrid, times: np.ndarray) -> np.ndarray:
    """Round event times up to grid points, pushing collisions to the next free point."""
    n = grid.steps
    out = []
    last = 0
    for t in times:
        k = max(grid.index_at(t), last + 1)
        if k > n:
            break
        out.append(k)
        last = k
    return np.asarray(out, dtype=int)


def _draw(spec: JumpMartingaleSpec, grid: TimeGrid, d: int, seeds: Sequence[int]) -> _Primitives:
    C, n1 = len(seeds), len(grid.times)
    event = np.zeros((C, n1), bool)
    gauss = np.zeros((C, n1, d))
    unif = np.zeros((C, n1))
    walk = np.zeros((C, n1 - 1, d)) if spec.walk > 0 else None
    kill = np.full(C, n1, dtype=int)
    T = grid.horizon
    for c, seed in enumerate(seeds):
        if spec.rate > 0:
            rng = generator(seed, EVENT_STREAM)
            times = []
            t = rng.exponential(1.0 / spec.rate)
            while t <= T:
                times.append(t)
                t += rng.exponential(1.0 / spec.rate)
            cnt = len(times)
            g = rng.standard_normal((cnt, d))
            u = rng.uniform(size=cnt)
            idx = _event_indices(grid, np.asarray(times))
            event[c, idx] = True
            gauss[c, idx] = g[: len(idx)]
            unif[c, idx] = u[: len(idx)]
        if walk is not None:
            walk[c] = generator(seed, WALK_STREAM).standard_normal((n1 - 1, d))
        if spec.kill_rate > 0:
            z = generator(seed, KILL_STREAM).exponential(1.0 / spec.kill_rate)
            if z <= T:
                kill[c] = grid.index_at(z)
    return _Primitives(event, gauss, unif, walk, kill)


def _run(m: EmbeddedManifold, spec: JumpMartingaleSpec, grid: TimeGrid, prim: _Primitives, scale: float):
    C, n1 = prim.event.shape
    d = m.ambient_dim
    x0 = np.asarray(spec.x0, dtype=float)
    trap = m.trap_point
    theta = spec.resolved_theta(m) * scale
    sqdt = np.sqrt(grid.dt)
    vals = np.empty((C, n1, d))
    vals[:, 0] = x0
    flags = np.zeros((C, n1), bool)
    kind = np.zeros((C, n1), np.int8)
    angle = np.zeros((C, n1))
    x = np.repeat(x0[None], C, axis=0)
    alive = np.ones(C, bool)
    bias_vec = np.zeros(d)
    bias_vec[spec.bias_direction] = 1.0
    for k in range(1, n1):
        killed = alive & (prim.kill == k)
        if killed.any():
            x[killed] = trap
            alive &= ~killed
            flags[killed, k] = True
            kind[killed, k] = EventLog.KILL
        jump = alive & prim.event[:, k]
        if jump.any():
            xj = x[jump]
            v = m.random_tangent(xj, prim.gauss[jump, k])
            if spec.bias > 0:
                v = m.random_tangent(xj, v + spec.bias * m.project(xj, np.broadcast_to(bias_vec, xj.shape)))
            th = theta if spec.angle_law == "fixed" else theta * prim.unif[jump, k]
            th = np.broadcast_to(th, (len(xj),))
            x[jump] = m.geodesic_step(xj, v, th, check=False)
            flags[jump, k] = True
            kind[jump, k] = EventLog.JUMP
            angle[jump, k] = th
        if prim.walk_gauss is not None:
            wk = alive & ~jump
            if wk.any():
                xw = x[wk]
                v = m.random_tangent(xw, prim.walk_gauss[wk, k - 1])
                if spec.bias > 0:
                    v = m.random_tangent(xw, v + spec.bias * m.project(xw, np.broadcast_to(bias_vec, xw.shape)))
                h = spec.walk * sqdt[k - 1] * scale
                x[wk] = m.geodesic_step(xw, v, np.full(len(xw), h), check=False)
                kind[wk, k] = EventLog.WALK
                angle[wk, k] = h
        vals[:, k] = x
    return vals, flags, kind, angle, prim.kill.copy()


def build_ensembles(
    m: EmbeddedManifold,
    spec: JumpMartingaleSpec,
    grid: TimeGrid,
    count: int,
    base_seed: int,
    scales: Sequence[float] = (1.0,),
    threads: int = 1,
    seeds: np.ndarray | None = None,
) -> list[PathEnsemble]:
    """One ensemble per scale, all driven by the same per-path primitives."""
    spec.validate(m, grid, scales)
    seeds = path_seeds(base_seed, count) if seeds is None else np.asarray(seeds)

    def work(lo, hi):
        prim = _draw(spec, grid, m.ambient_dim, [int(s) for s in seeds[lo:hi]])
        return [_run(m, spec, grid, prim, s) for s in scales]

    chunks = map_chunks(work, count, threads)
    th = spec.resolved_theta(m)
    out = []
    for j, s in enumerate(scales):
        parts = [c[j] for c in chunks]
        vals, flags, kind, angle, kill = (np.concatenate([p[i] for p in parts]) for i in range(5))
        log = EventLog(kind, angle, spec.angle_law, th * s, spec.walk * s)
        out.append(
            PathEnsemble(
                grid,
                vals,
                flags,
                m.trap_point,
                base_seed,
                seeds,
                kill_index=kill,
                events=log,
                meta={"scale": float(s), "manifold": m.catalog_id},
            )
        )
    return out


def build_ensemble(m, spec, grid, count, base_seed, threads=1) -> PathEnsemble:
    return build_ensembles(m, spec, grid, count, base_seed, (1.0,), threads)[0]


def build_geodesic_jump_martingale(
    m: EmbeddedManifold, spec: JumpMartingaleSpec, grid: TimeGrid, seed: int
) -> CadlagPath:
    """A single path of the construction, driven by ``seed``."""
    spec.validate(m, grid)
    prim = _draw(spec, grid, m.ambient_dim, [seed])
    vals, flags, kind, angle, kill = _run(m, spec, grid, prim, 1.0)
    th = spec.resolved_theta(m)
    k = int(kill[0])
    return CadlagPath(
        grid,
        vals[0],
        flags[0],
        m.trap_point,
        k if k < grid.never else None,
        EventLog(kind[0], angle[0], spec.angle_law, th, spec.walk),
    )


@dataclass
class CoupledPair:
    x: CadlagPath
    y: CadlagPath
    epsilon: float

    def sup_distance(self) -> float:
        return float(np.max(np.linalg.norm(self.x.values - self.y.values, axis=-1)))


def build_coupled_pair(
    m: EmbeddedManifold, spec: JumpMartingaleSpec, epsilon: float, grid: TimeGrid, seed: int
) -> CoupledPair:
    """Paths for angle scales 1 and 1 + epsilon from identical primitives."""
    if epsilon < 0:
        raise DomainError("epsilon must be nonnegative")
    scales = (1.0, 1.0 + epsilon)
    spec.validate(m, grid, scales)
    prim = _draw(spec, grid, m.ambient_dim, [seed])
    th = spec.resolved_theta(m)
    paths = []
    for s in scales:
        vals, flags, kind, angle, kill = _run(m, spec, grid, prim, s)
        k = int(kill[0])
        paths.append(
            CadlagPath(grid, vals[0], flags[0], m.trap_point, k if k < grid.never else None,
                       EventLog(kind[0], angle[0], spec.angle_law, th * s, spec.walk * s))
        )
    return CoupledPair(paths[0], paths[1], float(epsilon))


# ---------------------------------------------------------------------------
# compensator


def _mean_cos_law(m: EmbeddedManifold, law: str, theta: float) -> float:
    if law == "fixed":
        return float(m.mean_cosine(theta))
    if theta == 0:
        return 1.0
    val, _ = quad(lambda t: float(m.mean_cosine(t)), 0.0, theta, epsabs=1e-14, epsrel=1e-13)
    return val / theta


def compensator_arrays(m: EmbeddedManifold, values: np.ndarray, log: EventLog) -> np.ndarray:
    """Cumulative finite-variation part A of constructed paths, shape like ``values``.

    Given the event schedule, a jump step has conditional mean
    (E cos - 1) x_c in each block, a walk step the same with its fixed
    angle, and a killing step the whole (predictable) move to the trap.
    """
    kind = log.kind[..., 1:]
    left = values[..., :-1, :]
    jump_c = _mean_cos_law(m, log.angle_law, log.theta) - 1.0
    inc = np.zeros_like(left)
    jmask = kind == EventLog.JUMP
    inc[jmask] = jump_c * left[jmask]
    wmask = kind == EventLog.WALK
    if wmask.any():
        ang = log.angle[..., 1:][wmask]
        inc[wmask] = (m.mean_cosine(ang) - 1.0)[:, None] * left[wmask]
    kmask = kind == EventLog.KILL
    if kmask.any():
        inc[kmask] = m.trap_point - left[kmask]
    out = np.zeros_like(values)
    np.cumsum(inc, axis=-2, out=out[..., 1:, :])
    return out


def canonical_decomposition(
    path: CadlagPath, i: int, manifold: EmbeddedManifold
) -> SemimartingaleDecomposition:
    """X^i = X^i_0 + M + A with A the compensator of the construction."""
    if path.events is None:
        raise DomainError("canonical decomposition needs the constructor's event log")
    A = compensator_arrays(manifold, path.values, path.events)[:, i]
    X = path.values[:, i]
    Mv = X - X[0] - A
    return SemimartingaleDecomposition(
        float(X[0]),
        RealPath(path.grid, Mv, path.jump_flags),
        RealPath(path.grid, A, path.jump_flags),
    )


# ---------------------------------------------------------------------------
# martingale tester


def _predictable_family(g: np.ndarray, times: np.ndarray) -> dict[str, np.ndarray]:
    """Test integrands H_k (multiplying increment k) for increments g (..., N)."""
    ones = np.ones_like(g)
    sign_prev = np.zeros_like(g)
    sign_prev[..., 1:] = np.sign(g[..., :-1])
    half = 0.5 * times[-1]
    window = np.broadcast_to((times[:-1] < half).astype(float), g.shape)
    return {"one": ones, "sign_last": sign_prev, "first_half": window}


def martingale_statistic(
    ensemble: PathEnsemble,
    manifold: EmbeddedManifold,
    checkpoints: Sequence[float] | None = None,
    threads: int = 1,
) -> MetricReport:
    """Largest |mean| / SE of int H d(int <Pi e_i, dX>) over fields, H, checkpoints.

    Values below 3 are consistent with the martingale property.
    """
    K = len(ensemble)
    if K == 0:
        raise DomainError("empty ensemble")
    grid = ensemble.grid
    if checkpoints is None:
        checkpoints = [0.5 * grid.horizon, grid.horizon]
    cidx = np.array([min(grid.index_at(t), grid.steps) for t in checkpoints])
    d = manifold.ambient_dim

    def work(lo, hi):
        vals = ensemble.values[lo:hi]
        left = vals[:, :-1]
        inc = np.diff(vals, axis=1)
        proj = manifold.project(left, inc)  # proj[..., i] = <Pi e_i, dX>
        res = []
        for i in range(d):
            g = proj[..., i]
            for name, H in _predictable_family(g, grid.times).items():
                cum = np.zeros((hi - lo, grid.steps + 1))
                np.cumsum(H * g, axis=1, out=cum[:, 1:])
                res.append(cum[:, cidx])
        return np.stack(res, axis=1)  # (C, tests, checkpoints)

    stats = np.concatenate(map_chunks(work, K, threads), axis=0)
    mean = stats.mean(axis=0)
    se = stats.std(axis=0, ddof=1) / np.sqrt(K) if K > 1 else np.zeros_like(mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, np.abs(mean) / np.where(se > 0, se, 1.0), np.where(mean == 0, 0.0, np.inf))
    flat = int(np.argmax(z))
    names = [f"{i}:{n}" for i in range(d) for n in ("one", "sign_last", "first_half")]
    t_idx, c_idx = divmod(flat, len(cidx))
    return MetricReport(
        estimate=float(z.max()),
        standard_error=0.0,
        kind="martingale_z",
        params={"worst_test": names[t_idx], "worst_checkpoint": float(checkpoints[c_idx])},
        sample_count=K,
    )
