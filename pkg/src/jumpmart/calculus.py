"""Discrete stochastic calculus on grid paths.

All integrals are left-point sums: the integrand evaluated at ``X[k-1]``
multiplies the increment ``X[k] - X[k-1]``. Unflagged increments feed the
continuous quadratic variation, flagged ones the jump part.

Functions ending in ``_arrays`` work on stacked values of shape
``(..., N+1, d)`` and flags ``(..., N+1)`` so the experiment harness can
call them on a chunk of an ensemble at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .geometry import DomainError, EmbeddedManifold
from .paths import CadlagPath, TimeGrid


@dataclass
class RealPath:
    grid: TimeGrid
    values: np.ndarray
    jump_flags: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.grid.times),):
            raise DomainError("real path must have one value per grid point")

    def __add__(self, other: "RealPath") -> "RealPath":
        _check_grid(self.grid, other.grid)
        return RealPath(self.grid, self.values + other.values, self.jump_flags | other.jump_flags)

    def __sub__(self, other: "RealPath") -> "RealPath":
        _check_grid(self.grid, other.grid)
        return RealPath(self.grid, self.values - other.values, self.jump_flags | other.jump_flags)


@dataclass
class SemimartingaleDecomposition:
    x0: float
    martingale_part: RealPath
    fv_part: RealPath

    def __post_init__(self):
        if self.martingale_part.values[0] != 0 or self.fv_part.values[0] != 0:
            raise DomainError("decomposition parts must start at 0")

    def reconstruct(self) -> np.ndarray:
        return self.x0 + self.martingale_part.values + self.fv_part.values


class TheoremParts(NamedTuple):
    N: RealPath
    A: RealPath
    B: RealPath


@dataclass(frozen=True)
class ScalarField:
    """A function on M together with an extension to R^d and its derivatives.

    ``grad`` and ``hess`` are the Euclidean gradient and Hessian of the
    extension; all three callables are vectorised over leading axes.
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]


def _check_grid(a: TimeGrid, b: TimeGrid):
    if a is not b and a != b:
        raise DomainError("paths live on different grids")


# ---------------------------------------------------------------------------
# field dictionary


def coordinate_field(m: EmbeddedManifold, i: int) -> ScalarField:
    """The i-th coordinate of the embedding, extended by the extension map."""
    return ScalarField(
        f"coord{i}",
        lambda x: m.extension_value(x)[..., i],
        lambda x: m.extension_jacobian(x)[..., i, :],
        lambda x: m.extension_hessian_tensor(x)[..., i, :, :],
    )


def linear_field(c) -> ScalarField:
    c = np.asarray(c, dtype=float)
    return ScalarField(
        "linear",
        lambda x: np.asarray(x) @ c,
        lambda x: np.broadcast_to(c, np.shape(x)).copy(),
        lambda x: np.zeros(np.shape(x) + (len(c),)),
    )


def angle_field() -> ScalarField:
    """Polar angle on a chart of the unit circle; 0-homogeneous, so its
    gradient is tangent on the circle."""

    def value(x):
        x = np.asarray(x)
        return np.arctan2(x[..., 1], x[..., 0])

    def grad(x):
        x = np.asarray(x)
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return np.stack([-x[..., 1] / r2, x[..., 0] / r2], axis=-1)

    def hess(x):
        x = np.asarray(x)
        a, b = x[..., 0], x[..., 1]
        r4 = (a**2 + b**2) ** 2
        h = np.empty(x.shape[:-1] + (2, 2))
        h[..., 0, 0] = 2 * a * b / r4
        h[..., 1, 1] = -2 * a * b / r4
        h[..., 0, 1] = h[..., 1, 0] = (b**2 - a**2) / r4
        return h

    return ScalarField("angle", value, grad, hess)


def field_dictionary(m: EmbeddedManifold) -> dict[str, ScalarField]:
    fields = {f"coord{i}": coordinate_field(m, i) for i in range(m.ambient_dim)}
    if m.ambient_dim == 2:
        fields["angle"] = angle_field()
    return fields


# ---------------------------------------------------------------------------
# integrals and brackets


def stochastic_integral(H, X: CadlagPath) -> RealPath:
    """Left-point integral of an R^d-valued integrand against X."""
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    if H.shape != X.values.shape:
        raise DomainError("integrand must be defined on the path's grid")
    inc = np.einsum("kd,kd->k", H[:-1], X.increments)
    return RealPath(X.grid, np.concatenate([[0.0], np.cumsum(inc)]), X.jump_flags)


def stochastic_integral_arrays(H: np.ndarray, values: np.ndarray) -> np.ndarray:
    inc = np.sum(H[..., :-1, :] * np.diff(values, axis=-2), axis=-1)
    return _cumsum0(inc)


def _cumsum0(inc: np.ndarray) -> np.ndarray:
    out = np.zeros(inc.shape[:-1] + (inc.shape[-1] + 1,))
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out


def quadratic_variation(X: CadlagPath, Y: CadlagPath):
    """([X,Y], [X,Y]^c, [X,Y]^d) as real paths; a flag on either path makes
    the increment a jump."""
    _check_grid(X.grid, Y.grid)
    flags = X.jump_flags | Y.jump_flags
    total, cont, jump = qv_arrays(X.values, Y.values, flags)
    return (
        RealPath(X.grid, total, flags),
        RealPath(X.grid, cont, flags),
        RealPath(X.grid, jump, flags),
    )


def qv_arrays(xv: np.ndarray, yv: np.ndarray, flags: np.ndarray):
    prod = np.sum(np.diff(xv, axis=-2) * np.diff(yv, axis=-2), axis=-1)
    jmask = flags[..., 1:]
    total = _cumsum0(prod)
    jump = _cumsum0(np.where(jmask, prod, 0.0))
    return total, total - jump, jump


def _live_mask(X: CadlagPath) -> np.ndarray:
    """Steps whose left limit is a point of M (before or at the killing step)."""
    n = X.grid.steps
    k = X.kill_index if X.kill_index is not None else n + 1
    return np.arange(1, n + 1) <= k


def _require_on_manifold(m: EmbeddedManifold | None, X: CadlagPath):
    if m is None:
        return
    k = X.kill_index if X.kill_index is not None else len(X.values)
    if not np.all(m.is_on_manifold(X.values[:k], tol=1e-9)):
        raise DomainError("path leaves the manifold before its killing time")


def ito_integral_embedding(
    grad: Callable[[np.ndarray], np.ndarray] | ScalarField,
    X: CadlagPath,
    manifold: EmbeddedManifold | None = None,
) -> RealPath:
    """sum_k <D fbar(X_{k-1}), X_k - X_{k-1}>.

    After the killing time the increments vanish, so the integrand is only
    evaluated at left limits that lie on M.
    """
    _require_on_manifold(manifold, X)
    gfun = grad.grad if isinstance(grad, ScalarField) else grad
    live = _live_mask(X)
    left = X.left_limits
    G = np.zeros_like(left)
    if live.any():
        G[live] = gfun(left[live])
    inc = np.einsum("kd,kd->k", G, X.increments)
    return RealPath(X.grid, _cumsum0(inc), X.jump_flags)


def ito_integral_connection(
    f: ScalarField, X: CadlagPath, manifold: EmbeddedManifold
) -> RealPath:
    """Ito integral of df along X defined through the connection rule:

    f(X) - f(X_0) - 1/2 sum_c nabla df(X_-)(dX, dX)
                  - sum_j {f(X) - f(X_-) - <df(X_-), gamma(X_-, X)>}

    where c runs over unflagged and j over flagged increments, nabla df is the
    tangent-projected Hessian, and gamma(x, y) = Pi_x (y - x).
    """
    _require_on_manifold(manifold, X)
    live = _live_mask(X)
    left = X.left_limits
    dX = X.increments
    fv = f.value(X.values)
    cont = (~X.jump_flags[1:]) & live
    jump = X.jump_flags[1:] & live

    hess_term = np.zeros(len(dX))
    if cont.any():
        xl = left[cont]
        pd = manifold.project(xl, dX[cont])
        H = f.hess(xl)
        hess_term[cont] = np.einsum("ki,kij,kj->k", pd, H, pd)

    jump_term = np.zeros(len(dX))
    if jump.any():
        xl = left[jump]
        df = manifold.project(xl, f.grad(xl))
        gamma = manifold.project(xl, dX[jump])
        jump_term[jump] = (fv[1:][jump] - fv[:-1][jump]) - np.sum(df * gamma, axis=-1)

    vals = (fv - fv[0]) - 0.5 * _cumsum0(hess_term) - _cumsum0(jump_term)
    return RealPath(X.grid, vals, X.jump_flags)


def theorem_decomposition(
    X: CadlagPath, i: int, manifold: EmbeddedManifold
) -> TheoremParts:
    """Split ext^i(X) - ext^i(X_0) into N + A + B.

    N is the embedding Ito integral of D ext^i against ext(X); A collects the
    exact second-order residuals of unflagged increments (the discrete
    counterpart of the continuous bracket term) and B those of flagged ones.
    The split is exact on the grid.
    """
    _require_on_manifold(manifold, X)
    N, A, B = theorem_parts_arrays(manifold, X.values, X.jump_flags, i, _live_mask(X))
    return TheoremParts(
        RealPath(X.grid, N, X.jump_flags),
        RealPath(X.grid, A, X.jump_flags),
        RealPath(X.grid, B, X.jump_flags),
    )


def theorem_parts_arrays(m: EmbeddedManifold, values, flags, i, live=None):
    """N, A, B for coordinate i on stacked paths ``(..., N+1, d)``.

    ``live`` masks steps whose left limit lies on M; elsewhere the increment
    is zero and the integrand is not evaluated.
    """
    ext = m.extension_value(values)
    dext = np.diff(ext, axis=-2)
    left = values[..., :-1, :]
    if live is None:
        live = np.linalg.norm(dext, axis=-1) > 0
    live = np.broadcast_to(live, left.shape[:-1])
    grad = np.zeros_like(left)
    if live.any():
        grad[live] = m.extension_jacobian(left[live])[..., i, :]
    n_inc = np.sum(grad * dext, axis=-1)
    resid = dext[..., i] - n_inc
    jmask = flags[..., 1:]
    return (
        _cumsum0(n_inc),
        _cumsum0(np.where(jmask, 0.0, resid)),
        _cumsum0(np.where(jmask, resid, 0.0)),
    )


def continuous_hessian_term(X: CadlagPath, i: int, manifold: EmbeddedManifold) -> RealPath:
    """1/2 sum over unflagged steps of Pi Hess ext^i Pi contracted with dX dX^T."""
    live = _live_mask(X)
    cont = (~X.jump_flags[1:]) & live
    out = np.zeros(X.grid.steps)
    if cont.any():
        xl = X.left_limits[cont]
        pd = manifold.project(xl, X.increments[cont])
        H = manifold.extension_hessian(xl, i)
        out[cont] = 0.5 * np.einsum("ki,kij,kj->k", pd, H, pd)
    return RealPath(X.grid, _cumsum0(out), X.jump_flags)


def stop_index_values(values: np.ndarray, idx: np.ndarray, pre: bool = False) -> np.ndarray:
    """X^tau (or X^{tau-} with ``pre=True``) for per-path grid indices.

    ``values`` has shape (K, N+1, ...); indices >= N+1 mean "never".
    """
    K, n1 = values.shape[:2]
    k = np.asarray(idx).copy()
    if pre:
        k = np.where(k < n1, k - 1, k)
    k = np.clip(k, 0, n1 - 1)
    out = values.copy()
    steps = np.arange(n1)
    mask = steps[None, :] > k[:, None]
    frozen = values[np.arange(K), k]
    out[mask] = np.repeat(frozen, mask.sum(axis=1), axis=0)
    return out
