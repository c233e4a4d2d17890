"""Empirical checks of the quadratic-variation bounds and the convergence results.

Every check returns a report object with a boolean ``passed`` and a CSV
rendering; CSV bytes depend only on (config, seed), not on thread count.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..calculus import stop_index_values, theorem_parts_arrays
from ..geometry import EmbeddedManifold
from ..martingales import JumpMartingaleSpec, build_ensembles, compensator_arrays, martingale_statistic
from ..metrics import (
    MetricReport,
    SequencePoint,
    convergence_classifier,
    rhat_lower,
    ucp_metric,
)
from ..paths import PathEnsemble, TimeGrid, detect_killing_many, first_exit_times, generator, map_chunks
from .config import ConfigError, ExperimentConfig
from .io import table_csv

Z = 3.0


# ---------------------------------------------------------------------------
# Hessian inequality for h(w, z) = exp(|z - w|^2) - 1


def hessian_h(w: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Closed-form Hessian of h at (w, z), shape (..., 2d, 2d)."""
    s = z - w
    d = s.shape[-1]
    H = 2.0 * s[..., :, None] * s[..., None, :] + np.eye(d)
    scale = 2.0 * np.exp(np.sum(s * s, axis=-1))[..., None, None]
    top = np.concatenate([H, -H], axis=-1)
    return scale * np.concatenate([top, -top], axis=-2)


@dataclass
class HessianReport:
    samples: int
    violations: int
    min_margin: float
    passed: bool

    def to_csv(self) -> str:
        return table_csv(["samples", "violations", "min_margin", "passed"],
                         [[self.samples, self.violations, self.min_margin, self.passed]])


def verify_hessian_bound(samples: int, R: float, alpha: float, dim: int = 3, seed: int = 0,
                         threads: int = 1, chunk: int = 100_000) -> HessianReport:
    """[u; v]^T Hess h(w, z) [u; v] >= |u - v|^2 on |z - w| <= 2 (R + alpha)."""
    if R <= 0 or alpha <= 0:
        raise ConfigError("R and alpha must be positive")
    rmax = 2.0 * (R + alpha)
    nchunks = -(-samples // chunk)

    def work(lo, hi):
        out = []
        for c in range(lo, hi):
            n = min(chunk, samples - c * chunk)
            rng = generator(seed, 1000 + c)
            w = rng.uniform(-2.0, 2.0, (n, dim))
            direc = rng.standard_normal((n, dim))
            direc /= np.linalg.norm(direc, axis=1, keepdims=True)
            rad = rmax * rng.uniform(size=(n, 1)) ** (1.0 / dim)
            z = w + rad * direc
            u = rng.standard_normal((n, dim))
            v = rng.standard_normal((n, dim))
            # include the boundary and the diagonal u = v explicitly
            z[:8] = w[:8] + rmax * direc[:8]
            v[8:16] = u[8:16]
            uv = np.concatenate([u, v], axis=1)
            form = np.einsum("ki,kij,kj->k", uv, hessian_h(w, z), uv)
            out.append(form - np.sum((u - v) ** 2, axis=1))
        return np.concatenate(out)

    # chunks of chunks: each worker item handles one block of samples
    margins = np.concatenate([r for r in _blocks(work, nchunks, threads)])
    viol = int(np.sum(margins < -1e-12))
    return HessianReport(samples, viol, float(margins.min()), viol == 0)


def _blocks(work, n, threads):
    from concurrent.futures import ThreadPoolExecutor

    if threads <= 1:
        return [work(i, i + 1) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda i: work(i, i + 1), range(n)))


# ---------------------------------------------------------------------------
# helpers


@lru_cache(maxsize=16)
def _bounds(m: EmbeddedManifold, radius: float):
    return m.derivative_bounds(radius, region="ball")


def threshold(cfg: ExperimentConfig) -> dict:
    """R bound 1 / (2 d e^2 a2) with a2 taken on the ball of radius R0 + alpha + beta."""
    m = cfg.manifold
    b = _bounds(m, cfg.R0 + cfg.alpha + cfg.beta)
    bound = 1.0 / (2 * m.ambient_dim * math.e**2 * b.a2)
    return {"a1": b.a1, "a2": b.a2, "a3": b.a3, "R_threshold": bound, "R": cfg.R, "R_ok": cfg.R < bound}


def check_threshold(cfg: ExperimentConfig, strict: bool | None = None) -> dict:
    info = threshold(cfg)
    if (cfg.strict_threshold if strict is None else strict) and not info["R_ok"]:
        raise ConfigError(
            f"R = {cfg.R!r} violates the threshold R < 1/(2 d e^2 a2) = {info['R_threshold']!r} "
            f"(a2 = {info['a2']!r})"
        )
    return info


def _ext(m: EmbeddedManifold, values: np.ndarray) -> np.ndarray:
    return m.extension_value(values)


def exit_index(m: EmbeddedManifold, values: np.ndarray, R: float) -> np.ndarray:
    """First index with |ext(X_k) - ext(X_0)| > R (N + 1 if never)."""
    ev = _ext(m, values)
    return first_exit_times(ev, ev[:, 0], R)


def _stopped_sq_increments(ev: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """|Delta ext(X)_k|^2 for k <= tau, zero afterwards; shape (K, N)."""
    inc = np.sum(np.diff(ev, axis=1) ** 2, axis=-1)
    steps = np.arange(1, ev.shape[1])
    return np.where(steps[None, :] <= tau[:, None], inc, 0.0)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def _jack_ratio(num: np.ndarray, den: np.ndarray, fn) -> tuple[float, float]:
    """fn(mean(num), mean(den)) with a jackknife standard error."""
    K = len(num)
    est = fn(num.mean(), den.mean())
    ln = (num.sum() - num) / (K - 1)
    ld = (den.sum() - den) / (K - 1)
    th = fn(ln, ld)
    se = math.sqrt((K - 1) / K * float(np.sum((th - th.mean()) ** 2)))
    return float(est), se


# ---------------------------------------------------------------------------
# bounded quadratic variation


@dataclass
class QuadraticBoundReport:
    rows: list[tuple]  # (rate, steps, estimate, se, exit_fraction)
    threshold: dict
    fitted_constant: float
    drift_ok: bool
    single_jump: dict | None = None
    passed: bool = False

    HEADER = ("rate", "steps", "estimate", "se", "exit_fraction")

    def to_csv(self) -> str:
        return table_csv(self.HEADER, self.rows)


def stopped_qv_moment(cfg: ExperimentConfig, spec: JumpMartingaleSpec, steps: int, paths: int,
                      seed: int, p: float) -> tuple[float, float, float]:
    """E[[ext X, ext X]^p_tau] with tau the first exit from the R-ball; (mean, SE, P(exit))."""
    grid = TimeGrid.uniform(spec.horizon, steps)
    m = cfg.manifold

    def work(lo, hi):
        ens = build_ensembles(m, spec, grid, hi - lo, seed, threads=1,
                              seeds=_seed_slice(seed, paths, lo, hi))[0]
        ev = _ext(m, ens.values)
        tau = first_exit_times(ev, ev[:, 0], cfg.R)
        qv = _stopped_sq_increments(ev, tau).sum(axis=1)
        return np.stack([qv**p, tau <= steps], axis=1)

    res = np.concatenate(map_chunks(work, paths, cfg.threads), axis=0)
    mean, se = _mean_se(res[:, 0])
    return mean, se, float(res[:, 1].mean())


@lru_cache(maxsize=8)
def _seeds(seed: int, count: int) -> np.ndarray:
    from ..paths import path_seeds

    return path_seeds(seed, count)


def _seed_slice(seed: int, count: int, lo: int, hi: int) -> np.ndarray:
    return _seeds(seed, count)[lo:hi]


def single_jump_check(cfg: ExperimentConfig, rate_horizon: float = 0.02, paths: int = 40_000,
                      steps: int = 40, p: float = 1.0) -> dict:
    """Rare fixed-angle jumps without walk: E[[X,X]^p_tau] ~ lam T (4 sin^2(theta/2))^p."""
    T = cfg.spec.horizon
    spec = replace(cfg.spec, rate=rate_horizon / T, walk=0.0, kill_rate=0.0, angle_law="fixed")
    theta = spec.resolved_theta(cfg.manifold)
    rho = cfg.manifold.radii[0]
    chord_sq = (2 * rho * math.sin(theta / (2 * rho))) ** 2
    hand = rate_horizon * chord_sq**p
    est, se, _ = stopped_qv_moment(cfg, spec, steps, paths, cfg.seed + 17, p)
    ok = abs(est - hand) <= Z * se
    return {"hand": hand, "estimate": est, "se": se, "p": p, "passed": bool(ok)}


def verify_lemma_quadratic_bound(cfg: ExperimentConfig, strict: bool | None = None,
                                 with_single_jump: bool = True) -> QuadraticBoundReport:
    """Stopped QV moment over the (rate, grid) sweep plus the one-jump oracle.

    The drift check fails when moving to the next larger rate (fixed grid)
    or the next finer grid (fixed rate) raises the estimate by more than
    3 combined SE.
    """
    info = check_threshold(cfg, strict)
    table = {}
    for rate in cfg.rates:
        for steps in cfg.sweep_steps:
            spec = replace(cfg.spec, rate=rate)
            try:
                spec.validate(cfg.manifold, TimeGrid.uniform(spec.horizon, steps))
            except Exception as exc:
                raise ConfigError(f"sweep point rate={rate}, steps={steps}: {exc}") from exc
            table[(rate, steps)] = stopped_qv_moment(cfg, spec, steps, cfg.paths, cfg.seed, cfg.p)
    drift_ok = True
    rates, grids = list(cfg.rates), list(cfg.sweep_steps)
    for a, b in [((r1, n), (r2, n)) for n in grids for r1, r2 in zip(rates, rates[1:])] + [
        ((r, n1), (r, n2)) for r in rates for n1, n2 in zip(grids, grids[1:])
    ]:
        (ea, sa, _), (eb, sb, _) = table[a], table[b]
        if eb - ea > Z * math.hypot(sa, sb):
            drift_ok = False
    rows = [(r, n, *table[(r, n)]) for r in rates for n in grids]
    fitted = max(e + Z * s for _, _, e, s, _ in rows)
    single = single_jump_check(cfg) if with_single_jump else None
    passed = drift_ok and (single is None or single["passed"])
    return QuadraticBoundReport(rows, info, fitted, drift_ok, single, passed)


# ---------------------------------------------------------------------------
# coupled-pair ratio tables


@dataclass
class RatioTable:
    """Rows (family, epsilon, numerator, numerator SE, denominator, denominator SE, ratio, ratio SE)."""

    kind: str
    rows: list[tuple] = field(default_factory=list)
    skipped: list[float] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    HEADER = ("family", "epsilon", "numerator", "numerator_se", "denominator", "denominator_se",
              "ratio", "ratio_se")

    def ratios(self) -> np.ndarray:
        return np.array([r[6] for r in self.rows])

    def ratio_ses(self) -> np.ndarray:
        return np.array([r[7] for r in self.rows])

    @property
    def finite_positive(self) -> bool:
        r = self.ratios()
        return bool(len(r) and np.all(np.isfinite(r)) and np.all(r > 0))

    @property
    def bounded(self) -> bool:
        """No blow-up: along decreasing epsilon, no ratio exceeds the running
        maximum of the larger-epsilon ratios by more than 3 combined SE."""
        order = np.argsort([-r[1] for r in self.rows], kind="stable")
        r, s = self.ratios()[order], self.ratio_ses()[order]
        for k in range(1, len(r)):
            j = int(np.argmax(r[:k]))
            if r[k] > r[j] + Z * math.hypot(s[k], s[j]):
                return False
        return self.finite_positive

    @property
    def stable(self) -> bool:
        """Max ratio within 3 SE (of the max row) of the median ratio."""
        r, s = self.ratios(), self.ratio_ses()
        if not len(r):
            return False
        j = int(np.argmax(r))
        return bool(abs(r[j] - np.median(r)) <= Z * s[j])

    def to_csv(self) -> str:
        return table_csv(self.HEADER, self.rows)


def _coupled(cfg: ExperimentConfig, spec: JumpMartingaleSpec, steps: int, paths: int, seed: int,
             epsilons: Sequence[float], per_chunk):
    """Run ``per_chunk(base, [eps ensembles])`` over chunks of coupled ensembles."""
    grid = TimeGrid.uniform(spec.horizon, steps)
    m = cfg.manifold
    scales = [1.0] + [1.0 + e for e in epsilons]
    spec.validate(m, grid, scales)

    def work(lo, hi):
        ens = build_ensembles(m, spec, grid, hi - lo, seed, scales, threads=1,
                              seeds=_seed_slice(seed, paths, lo, hi))
        return per_chunk(ens[0], ens[1:])

    return map_chunks(work, paths, cfg.threads)


def _pair_stop(m, xv, yv, R):
    ex, ey = _ext(m, xv), _ext(m, yv)
    tau = np.minimum(first_exit_times(ex, ex[:, 0], R), first_exit_times(ey, ey[:, 0], R))
    return ex, ey, tau


def difference_samples(m: EmbeddedManifold, xv, yv, R: float, p: float):
    """Per-path [D,D]^p_tau and (sup |D|)^{2p} with D = ext(X) - ext(Y) stopped."""
    ex, ey, tau = _pair_stop(m, xv, yv, R)
    D = stop_index_values(ex - ey, tau)
    qv = np.sum(np.diff(D, axis=1) ** 2, axis=(1, 2))
    sup = np.max(np.linalg.norm(D, axis=-1), axis=1)
    return qv**p, sup ** (2 * p)


def theorem_samples(m: EmbeddedManifold, xv, yv, xf, yf, R: float, p: float):
    """Per-path H^p-bound sample of ext(X)^tau - ext(Y)^tau and (sup |D|)^{2p}.

    The decomposition of each coordinate is N_X - N_Y (martingale part) and
    (A + B)_X - (A + B)_Y (finite-variation part).
    """
    ex, ey, tau = _pair_stop(m, xv, yv, R)
    xs, ys = stop_index_values(xv, tau), stop_index_values(yv, tau)
    d = m.ambient_dim
    Mp = np.zeros(xs.shape)
    Ap = np.zeros(xs.shape)
    for i in range(d):
        nx, ax, bx = theorem_parts_arrays(m, xs, xf, i)
        ny, ay, by = theorem_parts_arrays(m, ys, yf, i)
        Mp[..., i] = nx - ny
        Ap[..., i] = (ax + bx) - (ay + by)
    D = stop_index_values(ex - ey, tau)
    qv = np.sum(np.diff(Mp, axis=1) ** 2, axis=(1, 2))
    tv = np.sum(np.linalg.norm(np.diff(Ap, axis=1), axis=-1), axis=1)
    hp = np.linalg.norm(D[:, 0], axis=-1) ** p + qv ** (p / 2) + tv**p
    sup = np.max(np.linalg.norm(D, axis=-1), axis=1)
    return hp, sup ** (2 * p)


def _ratio_table(cfg, kind, spec, steps, paths, seed, family, sampler, fn) -> RatioTable:
    eps = [e for e in cfg.epsilons if e > 0]
    skipped = [e for e in cfg.epsilons if e <= 0]

    def per_chunk(base, others):
        return [sampler(base, o) for o in others]

    chunks = _coupled(cfg, spec, steps, paths, seed, eps, per_chunk)
    table = RatioTable(kind, skipped=skipped, params={"p": cfg.p, "R": cfg.R, "steps": steps, "paths": paths})
    for j, e in enumerate(eps):
        num = np.concatenate([c[j][0] for c in chunks])
        den = np.concatenate([c[j][1] for c in chunks])
        if not np.any(den > 0):
            table.skipped.append(e)
            continue
        nm, ns = _mean_se(num)
        dm, ds = _mean_se(den)
        r, rs = _jack_ratio(num, den, fn)
        table.rows.append((family, e, nm, ns, dm, ds, r, rs))
    return table


def verify_lemma_difference_bound(cfg: ExperimentConfig, strict: bool | None = None,
                                  family: str = "default") -> RatioTable:
    """E[[D,D]^p_tau] / E[(sup |D|)^{2p}]^{1/2} over the epsilon ladder."""
    info = check_threshold(cfg, strict)
    m, p = cfg.manifold, cfg.p
    table = _ratio_table(
        cfg, "lemma_difference", cfg.spec, cfg.steps, cfg.paths, cfg.seed, family,
        lambda b, o: difference_samples(m, b.values, o.values, cfg.R, p),
        lambda n, d: n / np.sqrt(d),
    )
    table.params.update(info)
    return table


def one_jump_ratio_check(cfg: ExperimentConfig, epsilon: float = 0.1, rate_horizon: float = 0.02,
                         paths: int = 20_000, steps: int = 40) -> dict:
    """Single shared jump: ratio = sqrt(1 - exp(-lam T)) (2 sin(eps theta / 2))^p exactly.

    Needs R below the jump chord so the first jump stops both paths.
    """
    T = cfg.spec.horizon
    spec = replace(cfg.spec, rate=rate_horizon / T, walk=0.0, kill_rate=0.0, angle_law="fixed")
    m, p = cfg.manifold, cfg.p
    theta = spec.resolved_theta(m)
    rho = m.radii[0]
    if 2 * rho * math.sin(theta / (2 * rho)) <= cfg.R:
        raise ConfigError("one-jump oracle needs R below the jump chord")
    hand = math.sqrt(1 - math.exp(-rate_horizon)) * (2 * rho * math.sin(epsilon * theta / (2 * rho))) ** p
    sub = replace(cfg, epsilons=(epsilon,))
    table = _ratio_table(
        sub, "lemma_difference", spec, steps, paths, cfg.seed + 29, "one_jump",
        lambda b, o: difference_samples(m, b.values, o.values, cfg.R, p),
        lambda n, d: n / np.sqrt(d),
    )
    _, e, *_, r, rs = table.rows[0]
    return {"hand": hand, "ratio": r, "se": rs, "passed": bool(abs(r - hand) <= Z * rs + 1e-12 * hand)}


def verify_theorem_ratio(cfg: ExperimentConfig, strict: bool | None = None,
                         family: str = "default") -> RatioTable:
    """H^p bound of the stopped difference over E[(sup |D|)^{2p}]^{1/(4p)}."""
    info = check_threshold(cfg, strict)
    m, p = cfg.manifold, cfg.p
    table = _ratio_table(
        cfg, "theorem", cfg.spec, cfg.steps, cfg.paths, cfg.seed, family,
        lambda b, o: theorem_samples(m, b.values, o.values, b.jump_flags, o.jump_flags, cfg.R, p),
        lambda n, d: np.maximum(n, 0) ** (1 / p) / np.maximum(d, 1e-300) ** (1 / (4 * p)),
    )
    table.params.update(info)
    return table


# ---------------------------------------------------------------------------
# convergence of coupled sequences


@dataclass
class CorollaryReport:
    epsilons: list[float]
    ucp: list[MetricReport]
    rhat: list[MetricReport]
    limit_statistic: MetricReport | None
    killing_fraction: float | None
    classifier_csv: str
    label: str
    rates: dict
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_csv(self) -> str:
        rows = []
        for e, u, r in zip(self.epsilons, self.ucp, self.rhat):
            rows.append([e, u.estimate, u.standard_error, r.estimate, r.standard_error, r.params["attained_by"]])
        return table_csv(["epsilon", "r", "r_se", "rhat_lb", "rhat_se", "rhat_attained_by"], rows)


def _decreasing_to(reports: Sequence[MetricReport], tol: float) -> bool:
    for a, b in zip(reports, reports[1:]):
        if b.estimate > a.estimate + Z * math.hypot(a.standard_error, b.standard_error):
            return False
    return reports[-1].estimate < tol + Z * reports[-1].standard_error


def sequence_epsilons(cfg: ExperimentConfig) -> list[float]:
    return [cfg.eps0 * 2.0**-n for n in range(cfg.n_max + 1)]


def verify_corollary(cfg: ExperimentConfig, independent: bool = False, kill_rate: float | None = None,
                     n0: int = 1) -> CorollaryReport:
    """Coupled sequence X^n (angle scale 1 + eps0 2^-n) against the limit X.

    Checks: (a) u.c.p. distance and (b) semimartingale lower bound decrease
    to below ``tol`` (within 3 SE); (c) the limit passes the martingale
    tester; (d) with killing, each path's killing index agrees with the
    limit's for all n >= n0 on at least 99% of paths. ``independent=True``
    draws each X^n from its own seeds (the negative control).
    """
    m = cfg.manifold
    eps = sequence_epsilons(cfg)
    spec = replace(cfg.spec, kill_rate=0.0)
    grid = TimeGrid.uniform(spec.horizon, cfg.steps)
    scales = [1.0] + [1 + e for e in eps]
    spec.validate(m, grid, scales)
    base = build_ensembles(m, spec, grid, cfg.paths, cfg.seed, scales, cfg.threads)
    limit, seq = base[0], base[1:]
    if independent:
        seq = [
            build_ensembles(m, spec, grid, cfg.paths, cfg.seed + 7919 * (n + 1), [1 + e], cfg.threads)[0]
            for n, e in enumerate(eps)
        ]
    el = _ext(m, limit.values)
    Al = compensator_arrays(m, limit.values, limit.events)
    tau = exit_index(m, limit.values, cfg.R)
    points, ucps, rhats = [], [], []
    for n, ens in enumerate(seq):
        diff = _ext(m, ens.values) - el
        A = compensator_arrays(m, ens.values, ens.events) - Al
        Mp = diff - diff[:, :1] - A
        points.append(SequencePoint(n, diff, Mp, A, diff[:, 0], tau))
    report = convergence_classifier(points, grid, cfg.p, cfg.tol, seed=cfg.seed, threads=cfg.threads)
    ucps = [r.r for r in report.rows]
    rhats = [r.rhat for r in report.rows]
    stat = martingale_statistic(limit, m, threads=cfg.threads)
    checks = {
        "a_ucp_decreasing": _decreasing_to(ucps, cfg.tol),
        "b_rhat_decreasing": _decreasing_to(rhats, cfg.tol),
        "c_limit_martingale": stat.estimate < Z,
    }
    frac = None
    kr = cfg.spec.kill_rate if kill_rate is None else kill_rate
    if kr > 0:
        frac = killing_agreement(cfg, replace(cfg.spec, kill_rate=kr), eps, n0, independent)
        checks["d_common_killing"] = frac >= 0.99
    return CorollaryReport(eps, ucps, rhats, stat, frac, report.to_csv(), report.label, report.rates, checks)


def killing_agreement(cfg: ExperimentConfig, spec: JumpMartingaleSpec, eps: Sequence[float], n0: int,
                      independent: bool = False) -> float:
    """Fraction of paths whose detected killing index equals the limit's for all n >= n0."""
    m = cfg.manifold
    grid = TimeGrid.uniform(spec.horizon, cfg.steps)
    scales = [1.0] + [1 + e for e in eps]
    ens = build_ensembles(m, spec, grid, cfg.paths, cfg.seed + 3, scales, cfg.threads)
    zeta = detect_killing_many(ens[0].values, m)
    agree = np.ones(cfg.paths, bool)
    for n, e in enumerate(ens[1:]):
        if independent:
            e = build_ensembles(m, spec, grid, cfg.paths, cfg.seed + 7919 * (n + 1), [scales[n + 1]], cfg.threads)[0]
        if n >= n0:
            agree &= detect_killing_many(e.values, m) == zeta
    return float(agree.mean())
