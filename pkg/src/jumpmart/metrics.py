"""Monte Carlo estimators for the path-space distances.

* ``ucp_metric``: r(X) = sum_k 2^-k E[1 ^ sup_{t<=k} |X_t|], truncated at the
  horizon with the analytic tail bound reported alongside.
* ``rhat_lower``: max of r(int <H, dX>) over a finite predictable dictionary,
  a lower bound for the semimartingale distance.
* ``hp_norm_upper``: H^p size of one explicit decomposition, an upper bound
  for the H^p norm.

Inputs are stacked paths ``(K, N+1)`` or ``(K, N+1, d)`` on a common grid,
or a :class:`PathEnsemble`. Standard errors are jackknife estimates.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import DomainError
from .paths import PathEnsemble, TimeGrid, generator, map_chunks, path_seed

KINDS = ("r_ucp", "rhat_lower", "hp_upper", "martingale_z")


@dataclass
class MetricReport:
    estimate: float
    standard_error: float
    kind: str
    params: dict = field(default_factory=dict)
    sample_count: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown metric kind {self.kind!r}")
        if not (self.estimate >= 0 and self.standard_error >= 0):
            raise DomainError("metric estimates and errors are nonnegative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=float)


def jackknife(samples: np.ndarray, transform: Callable[[float], float] | None = None):
    """(transform(mean), jackknife SE) for per-path samples."""
    x = np.asarray(samples, dtype=float)
    K = len(x)
    if K == 0:
        raise DomainError("empty ensemble")
    est = float(x.mean()) if transform is None else transform(float(x.mean()))
    if K == 1:
        return est, 0.0
    loo = (x.sum() - x) / (K - 1)
    th = loo if transform is None else np.array([transform(float(v)) for v in loo])
    se = math.sqrt((K - 1) / K * float(np.sum((th - th.mean()) ** 2)))
    return est, se


def _stack(x, grid: TimeGrid | None):
    if isinstance(x, PathEnsemble):
        return x.values, x.grid
    v = np.asarray(x, dtype=float)
    if grid is None:
        raise DomainError("a time grid is needed for raw arrays")
    if v.ndim == 2:
        v = v[..., None]
    if v.ndim != 3 or v.shape[1] != len(grid.times):
        raise DomainError("expected paths of shape (K, N+1[, d]) on the grid")
    if len(v) == 0:
        raise DomainError("empty ensemble")
    return v, grid


def _year_indices(grid: TimeGrid) -> np.ndarray:
    """Last grid index with time <= k for k = 1..floor(T)."""
    K = int(math.floor(grid.horizon + 1e-12))
    return np.array([np.searchsorted(grid.times, k + 1e-12, side="right") - 1 for k in range(1, K + 1)])


def ucp_samples(values: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Per-path sum_k 2^-k (1 ^ sup_{t<=k}|X_t|); values (K, N+1, d)."""
    norms = np.linalg.norm(values, axis=-1)
    run = np.maximum.accumulate(norms, axis=-1)
    idx = _year_indices(grid)
    if len(idx) == 0:
        return np.zeros(len(values))
    w = 0.5 ** np.arange(1, len(idx) + 1)
    return np.minimum(run[:, idx], 1.0) @ w


def ucp_metric(x, grid: TimeGrid | None = None) -> MetricReport:
    """u.c.p. distance of difference paths from zero."""
    v, grid = _stack(x, grid)
    est, se = jackknife(ucp_samples(v, grid))
    floor_t = int(math.floor(grid.horizon + 1e-12))
    return MetricReport(
        est, se, "r_ucp", {"horizon": grid.horizon, "tail_bound": 0.5**floor_t}, len(v)
    )


# ---------------------------------------------------------------------------
# semimartingale lower bound


def _constant_vectors(d: int) -> list[np.ndarray]:
    """Coordinate vectors and sign vectors up to an overall sign (r is even)."""
    out = [np.eye(d)[i] for i in range(d)]
    if d > 1 and d <= 4:
        for bits in range(2 ** (d - 1)):
            s = np.ones(d)
            for j in range(1, d):
                if bits >> (j - 1) & 1:
                    s[j] = -1.0
            out.append(s)
    return out


def dictionary_names(d: int, coin_flips: int) -> list[str]:
    names = [f"const{j}" for j in range(len(_constant_vectors(d)))]
    names += ["sign_last"] + [f"sign_last_{i}" for i in range(d)] if d > 1 else ["sign_last"]
    names += ["window_first_half", "window_second_half"]
    names += [f"coin{j}" for j in range(coin_flips)]
    return names


def _integrands(inc: np.ndarray, times: np.ndarray, coin_flips: int, seed: int, lo: int):
    """Yield predictable integrands H (C, N, d) with |H^i| <= 1."""
    C, N, d = inc.shape
    for c in _constant_vectors(d):
        yield np.broadcast_to(c, inc.shape)
    last = np.zeros_like(inc)
    last[:, 1:] = np.sign(inc[:, :-1])
    yield last
    if d > 1:
        for i in range(d):
            h = np.zeros_like(inc)
            h[..., i] = last[..., i]
            yield h
    half = 0.5 * times[-1]
    first = (times[:-1] < half).astype(float)[None, :, None]
    yield np.broadcast_to(first, inc.shape)
    yield np.broadcast_to(1.0 - first, inc.shape)
    for j in range(coin_flips):
        rng = generator(path_seed(seed, lo), 100 + j)
        yield rng.choice([-1.0, 1.0], size=inc.shape)


def rhat_lower(
    x,
    grid: TimeGrid | None = None,
    coin_flips: int = 4,
    seed: int = 0,
    threads: int = 1,
) -> MetricReport:
    """max over a predictable dictionary of r(int <H, dX>).

    The dictionary holds constant integrands (each e_i and sign vectors),
    the sign of the previous increment, first/second-half window
    indicators and ``coin_flips`` seeded i.i.d. +-1 integrands. Since the
    integrands are predictable and bounded by one in each coordinate, the
    result is a lower bound of the semimartingale distance from zero.
    """
    v, grid = _stack(x, grid)
    if coin_flips < 0:
        raise DomainError("coin_flips must be nonnegative")
    names = dictionary_names(v.shape[-1], coin_flips)

    def work(lo, hi):
        inc = np.diff(v[lo:hi], axis=1)
        cols = []
        for H in _integrands(inc, grid.times, coin_flips, seed, lo):
            integral = np.zeros((hi - lo, grid.steps + 1, 1))
            np.cumsum(np.sum(H * inc, axis=-1), axis=1, out=integral[:, 1:, 0])
            cols.append(ucp_samples(integral, grid))
        return np.stack(cols, axis=1)

    samples = np.concatenate(map_chunks(work, len(v), threads), axis=0)
    means = samples.mean(axis=0)
    j = int(np.argmax(means))
    est, se = jackknife(samples[:, j])
    return MetricReport(
        est,
        se,
        "rhat_lower",
        {"horizon": grid.horizon, "dictionary_size": len(names), "attained_by": names[j]},
        len(v),
    )


# ---------------------------------------------------------------------------
# H^p upper bound


def hp_samples(x0: np.ndarray, mart: np.ndarray, fv: np.ndarray, p: float, upto: int | None = None):
    """Per-path |X0|^p + [M,M]^{p/2} + TV(A)^p; arrays (K, N+1[, d])."""
    x0 = np.asarray(x0, dtype=float)
    mart = np.asarray(mart, dtype=float)
    fv = np.asarray(fv, dtype=float)
    if mart.ndim == 2:
        mart, fv = mart[..., None], fv[..., None]
    if x0.ndim == 1:
        x0 = x0[:, None]
    end = mart.shape[1] if upto is None else upto + 1
    dm = np.diff(mart[:, :end], axis=1)
    da = np.diff(fv[:, :end], axis=1)
    qv = np.sum(dm * dm, axis=(1, 2))
    tv = np.sum(np.linalg.norm(da, axis=-1), axis=1)
    return np.linalg.norm(x0, axis=-1) ** p + qv ** (p / 2) + tv**p


def hp_norm_upper_arrays(x0, mart, fv, p: float = 2.0, upto: int | None = None, params=None) -> MetricReport:
    if p < 1:
        raise DomainError("p must be at least 1")
    s = hp_samples(x0, mart, fv, p, upto)
    est, se = jackknife(s, lambda m: max(m, 0.0) ** (1.0 / p))
    return MetricReport(est, se, "hp_upper", {"p": p, **(params or {})}, len(s))


def hp_norm_upper(path, decomposition, p: float = 2.0, horizon: float | None = None, tol: float = 1e-9):
    """H^p size of one decomposition of a real path (or a list of them).

    ``path`` is an array of values or a ``RealPath``; ``decomposition`` a
    :class:`SemimartingaleDecomposition` (or matching lists for an ensemble).
    """
    paths = path if isinstance(path, (list, tuple)) else [path]
    decs = decomposition if isinstance(decomposition, (list, tuple)) else [decomposition]
    if len(paths) != len(decs) or not paths:
        raise DomainError("need one decomposition per path")
    grid = decs[0].martingale_part.grid
    vals = np.stack([np.asarray(getattr(pp, "values", pp), dtype=float) for pp in paths])
    for v, dcp in zip(vals, decs):
        if np.max(np.abs(dcp.reconstruct() - v)) > tol:
            raise DomainError("decomposition does not reconstruct the path")
    upto = None if horizon is None else min(grid.index_at(horizon), grid.steps)
    return hp_norm_upper_arrays(
        np.array([dcp.x0 for dcp in decs]),
        np.stack([dcp.martingale_part.values for dcp in decs]),
        np.stack([dcp.fv_part.values for dcp in decs]),
        p,
        upto,
        {"horizon": grid.horizon if horizon is None else horizon},
    )


# ---------------------------------------------------------------------------
# convergence classification


@dataclass
class SequencePoint:
    """Difference paths X^n - X and (optionally) a decomposition of them."""

    n: int
    diff: np.ndarray  # (K, N+1, d)
    mart: np.ndarray | None = None
    fv: np.ndarray | None = None
    x0: np.ndarray | None = None
    stop_index: np.ndarray | None = None  # optional pre-stopping times (K,)


@dataclass
class ClassifierRow:
    n: int
    r: MetricReport
    rhat: MetricReport
    hp: MetricReport | None
    r_pre: MetricReport | None = None
    rhat_pre: MetricReport | None = None


@dataclass
class ConvergenceReport:
    rows: list[ClassifierRow]
    rates: dict[str, float | None]
    label: str

    def to_csv(self) -> str:
        lines = ["n,r,r_se,rhat_lb,rhat_se,hp_ub,hp_se,r_pre_gap,rhat_pre_gap"]
        for row in self.rows:
            hp = (row.hp.estimate, row.hp.standard_error) if row.hp else (float("nan"),) * 2
            gr = row.r.estimate - row.r_pre.estimate if row.r_pre else float("nan")
            gh = row.rhat.estimate - row.rhat_pre.estimate if row.rhat_pre else float("nan")
            vals = [row.r.estimate, row.r.standard_error, row.rhat.estimate, row.rhat.standard_error, *hp, gr, gh]
            lines.append(f"{row.n}," + ",".join(repr(float(v)) for v in vals))
        return "\n".join(lines) + "\n"


def _decay_rate(ns: Sequence[int], ests: Sequence[float]) -> float | None:
    """Slope of log(estimate) against n, or None when a fit is impossible."""
    ns = np.asarray(ns, float)
    e = np.asarray(ests, float)
    if len(ns) < 3 or np.any(e <= 0):
        return None
    return float(np.polyfit(ns, np.log(e), 1)[0])


def _decreasing(reports: Sequence[MetricReport], tol: float, z: float = 3.0) -> bool:
    for a, b in zip(reports, reports[1:]):
        if b.estimate > a.estimate + z * math.hypot(a.standard_error, b.standard_error):
            return False
    last = reports[-1]
    return last.estimate <= tol + z * last.standard_error


def convergence_classifier(
    points: Sequence[SequencePoint],
    grid: TimeGrid,
    p: float = 2.0,
    tol: float = 0.01,
    coin_flips: int = 4,
    seed: int = 0,
    threads: int = 1,
) -> ConvergenceReport:
    """Metrics triple per n, log-linear decay rates and a convergence label.

    Labels, strongest first: "converged" (all metrics zero), "H^p
    (upper-bound evidence)", "semimartingale (lower-bound evidence)",
    "u.c.p. only" and "not converging". A metric counts as converging when
    it is non-increasing within 3 SE and ends below ``tol`` (within 3 SE).
    When stopping indices are given, the pre-stopped processes are
    evaluated too and the gap is reported.
    """
    from .calculus import stop_index_values

    if not points:
        raise DomainError("empty sequence")
    rows = []
    for pt in points:
        hp = None
        if pt.mart is not None and pt.fv is not None:
            x0 = pt.x0 if pt.x0 is not None else pt.diff[:, 0]
            hp = hp_norm_upper_arrays(x0, pt.mart, pt.fv, p)
        row = ClassifierRow(
            pt.n,
            ucp_metric(pt.diff, grid),
            rhat_lower(pt.diff, grid, coin_flips, seed, threads),
            hp,
        )
        if pt.stop_index is not None:
            pre = stop_index_values(pt.diff, pt.stop_index, pre=True)
            row.r_pre = ucp_metric(pre, grid)
            row.rhat_pre = rhat_lower(pre, grid, coin_flips, seed, threads)
        rows.append(row)
    ns = [r.n for r in rows]
    rates = {
        "r": _decay_rate(ns, [r.r.estimate for r in rows]),
        "rhat": _decay_rate(ns, [r.rhat.estimate for r in rows]),
        "hp": _decay_rate(ns, [r.hp.estimate for r in rows]) if all(r.hp for r in rows) else None,
    }
    everything = [r.r for r in rows] + [r.rhat for r in rows] + [r.hp for r in rows if r.hp]
    if all(m.estimate == 0 for m in everything):
        label = "converged"
    elif all(r.hp for r in rows) and _decreasing([r.hp for r in rows], tol):
        label = "H^p (upper-bound evidence)"
    elif _decreasing([r.rhat for r in rows], tol):
        label = "semimartingale (lower-bound evidence)"
    elif _decreasing([r.r for r in rows], tol):
        label = "u.c.p. only"
    else:
        label = "not converging"
    return ConvergenceReport(rows, rates, label)


def sawtooth(grid: TimeGrid, n: int) -> np.ndarray:
    """(1/n) times a unit triangle wave with n^2 oscillations over the horizon."""
    phase = (n * n) * grid.times / grid.horizon
    tri = 4.0 * np.abs(phase - np.floor(phase + 0.5)) - 1.0  # period 1, range [-1, 1]
    return (tri + 1.0) / n
