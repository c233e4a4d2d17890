"""Stopping-time sequences built from a ball cover.

For a path X and a cover (U_j inside V_j), with j(i) running round-robin over
the cover:

    tau_0 = 0,  tau_{i+1} = first exit of X from U_{j(i)} at or after tau_i,
    sigma~_m^(i) = first exit of X^m from V_{j(i)} at or after tau_i,
    sigma_m^(i) = min(min_{n >= m} sigma~_n^(i), tau_{i+1}).

A stage where X_{tau_i} is outside U_{j(i)} has tau_{i+1} = tau_i; such
stages are skipped in O(1) by jumping ahead to the next cover index whose
inner ball holds X_{tau_i}. The table records only the nontrivial stages
together with their stage number i.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..geometry import BallCover, DomainError
from .io import table_csv


@dataclass
class LocalizationTable:
    never: int
    stages: list[int] = field(default_factory=list)  # stage number i
    balls: list[int] = field(default_factory=list)  # j(i)
    tau: list[int] = field(default_factory=list)  # tau_i
    tau_next: list[int] = field(default_factory=list)  # tau_{i+1}
    sigma: list[list[int]] = field(default_factory=list)  # sigma_m^(i), m = 0..n_max
    property_iv: bool = True
    uncovered: bool = False

    def to_csv(self) -> str:
        nm = len(self.sigma[0]) if self.sigma else 0
        header = ["stage", "ball", "tau", "tau_next"] + [f"sigma_{m}" for m in range(nm)]
        rows = [[i, j, a, b, *s] for i, j, a, b, s in zip(self.stages, self.balls, self.tau, self.tau_next, self.sigma)]
        return table_csv(header, rows)

    def sigma_reaches_tau(self, m: int) -> bool:
        """Property (ii) surrogate: sigma_m^(i) = tau_{i+1} on every recorded stage."""
        return all(s[m] == t for s, t in zip(self.sigma, self.tau_next))


def _first_outside(vals: np.ndarray, center: np.ndarray, radius: float, start: int) -> int:
    """Smallest k >= start with |X_k - center| >= radius (open ball), else len(vals)."""
    out = np.linalg.norm(vals[start:] - center, axis=-1) >= radius
    hit = np.flatnonzero(out)
    return int(start + hit[0]) if len(hit) else len(vals)


def build_localization_times(
    path,
    cover: BallCover,
    sequence: Sequence = (),
    max_stages: int | None = None,
) -> LocalizationTable:
    """Localization stages of ``path`` with sigma times for the paths in ``sequence``.

    ``path`` and the members of ``sequence`` are value arrays (N+1, d) or
    objects with ``values``; the stage loop stops once tau reaches the end of
    the grid (the infinite sentinel N + 1).
    """
    X = np.asarray(getattr(path, "values", path), dtype=float)
    seq = [np.asarray(getattr(s, "values", s), dtype=float) for s in sequence]
    if any(s.shape != X.shape for s in seq):
        raise DomainError("sequence paths must share the grid of the base path")
    n1 = len(X)
    J = len(cover)
    C = cover.centers
    table = LocalizationTable(never=n1)
    t, i = 0, 0
    while t < n1 and (max_stages is None or len(table.stages) < max_stages):
        din = np.linalg.norm(C - X[t], axis=1) < cover.inner_radius
        if not din.any():
            table.uncovered = True  # the cover misses X_t; no stage can make progress
            break
        # next stage i' >= i whose ball j(i') = i' mod J holds X_t
        offs = (np.flatnonzero(din) - i) % J
        i += int(offs.min())
        j = i % J
        nxt = _first_outside(X, C[j], cover.inner_radius, t)
        tilde = [_first_outside(s, C[j], cover.outer_radius, t) for s in seq]
        sig = []
        for m in range(len(seq)):
            sig.append(min(min(tilde[m:]), nxt))
        table.stages.append(i)
        table.balls.append(j)
        table.tau.append(t)
        table.tau_next.append(nxt)
        table.sigma.append(sig)
        for m, sm in enumerate(sig):
            for s in seq[m:]:
                if sm > t and np.any(np.linalg.norm(s[t:sm] - C[j], axis=-1) >= cover.outer_radius):
                    table.property_iv = False
        t = nxt
        i += 1
    return table
