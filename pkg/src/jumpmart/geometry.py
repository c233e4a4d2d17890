"""Embedded manifolds and the smooth extension of their embedding.

Every catalog manifold is a product of round spheres ("blocks") sitting in
orthogonal coordinate blocks of R^d:

* ``sphere(d)`` is the single block S^{d-1} of radius rho;
* ``torus(k)`` is k circles, i.e. the flat torus T^k in R^{2k}.

Because each block is round, the closest-point map, the tangent projector and
geodesics have closed forms, and the extension of the embedding is a radial
map ``z -> g(|z|) z`` per block whose derivatives are explicit.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc

MEMBERSHIP_TOL = 1e-12
PROJECTOR_TOL = 1e-10


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


# ---------------------------------------------------------------------------
# C-infinity cutoff


def _psi(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def _psi_derivs(s):
    s = np.asarray(s, dtype=float)
    p = _psi(s)
    safe = np.where(s > 0, s, 1.0)
    d1 = np.where(s > 0, p / safe**2, 0.0)
    d2 = np.where(s > 0, p * (1.0 - 2.0 * safe) / safe**4, 0.0)
    return p, d1, d2


def _smoothstep(tau):
    """Smooth transition S from 0 (tau <= 0) to 1 (tau >= 1) with S', S''."""
    tau = np.asarray(tau, dtype=float)
    a, a1, a2 = _psi_derivs(tau)
    b, b1, b2 = _psi_derivs(1.0 - tau)
    b1 = -b1  # d/dtau of psi(1 - tau)
    den = a + b
    s = a / den
    num = a1 * b - a * b1
    s1 = num / den**2
    num1 = a2 * b - a * b2
    den2 = den**2
    dden2 = 2.0 * den * (a1 + b1)
    s2 = (num1 * den2 - num * dden2) / den2**2
    return s, s1, s2


def cutoff(t, blend_radius: float):
    """Bump chi(t) = 1 on [0, b/2], 0 on [b, inf) and its first two derivatives."""
    half = 0.5 * blend_radius
    tau = (np.asarray(t, dtype=float) - half) / half
    s, s1, s2 = _smoothstep(tau)
    return 1.0 - s, -s1 / half, -s2 / half**2


# ---------------------------------------------------------------------------
# manifold


@dataclass(frozen=True)
class EmbeddedManifold:
    catalog_id: Literal["sphere", "torus"]
    ambient_dim: int
    blocks: tuple[int, ...]
    radii: tuple[float, ...]
    blend_radius: float
    trap: tuple[float, ...]
    _offsets: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.ambient_dim < 2:
            raise DomainError("ambient dimension must be at least 2")
        if sum(self.blocks) != self.ambient_dim or len(self.blocks) != len(self.radii):
            raise DomainError("block layout does not match the ambient dimension")
        if self.blend_radius <= 0:
            raise DomainError("blend_radius must be positive")
        if len(self.trap) != self.ambient_dim:
            raise DomainError("trap has the wrong dimension")
        if not np.all(np.isfinite(self.trap)):
            raise DomainError("trap must be finite")
        offs = np.concatenate([[0], np.cumsum(self.blocks)]).astype(int)
        object.__setattr__(self, "_offsets", tuple(int(o) for o in offs))
        if self.distance(np.asarray(self.trap)) <= self.blend_radius:
            raise DomainError(
                "trap must lie farther than blend_radius from the manifold"
            )

    # -- basic structure -------------------------------------------------

    @property
    def intrinsic_dim(self) -> int:
        return sum(b - 1 for b in self.blocks)

    @property
    def trap_point(self) -> np.ndarray:
        return np.asarray(self.trap, dtype=float)

    def block_slices(self):
        offs = self._offsets
        return [slice(offs[c], offs[c + 1]) for c in range(len(self.blocks))]

    def _uniform_blocks(self) -> bool:
        return len(set(self.blocks)) == 1

    def _split(self, x: np.ndarray) -> np.ndarray:
        """View ``(..., d)`` as ``(..., nblocks, bdim)``; catalog blocks are uniform."""
        return x.reshape(x.shape[:-1] + (len(self.blocks), self.blocks[0]))

    def _radii(self) -> np.ndarray:
        return np.asarray(self.radii, dtype=float)

    def block_norms(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(self._split(x), axis=-1)

    def distance(self, x) -> np.ndarray:
        """Euclidean distance from x to the manifold."""
        return np.sqrt(np.sum((self.block_norms(x) - self._radii()) ** 2, axis=-1))

    def is_on_manifold(self, x, tol: float = MEMBERSHIP_TOL):
        x = np.asarray(x, dtype=float)
        dev = np.abs(self.block_norms(x) - self._radii())
        return np.all(dev <= tol * np.maximum(1.0, self._radii()), axis=-1)

    def _require_on(self, x):
        if not np.all(self.is_on_manifold(x, tol=1e-9)):
            raise DomainError("point is not on the manifold")

    def closest_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = self._split(x)
        r = np.linalg.norm(z, axis=-1, keepdims=True)
        if np.any(r == 0):
            raise DomainError("closest point undefined on a block axis")
        return (z * (self._radii()[:, None] / r)).reshape(x.shape)

    def retract(self, x) -> np.ndarray:
        """Renormalise points that are already on M up to rounding."""
        return self.closest_point(x)

    # -- tangent structure ----------------------------------------------

    def unit_normals(self, x) -> np.ndarray:
        """Per-block unit normals, shape (..., nblocks, bdim)."""
        z = self._split(np.asarray(x, dtype=float))
        r = np.linalg.norm(z, axis=-1, keepdims=True)
        return z / np.where(r > 0, r, 1.0)

    def project(self, x, v) -> np.ndarray:
        """Apply the tangent projector at x to v (vectorised over leading axes)."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        nx = self.unit_normals(x)
        vb = self._split(v)
        out = vb - np.sum(vb * nx, axis=-1, keepdims=True) * nx
        return out.reshape(v.shape)

    def tangent_projection(self, x) -> np.ndarray:
        """Orthogonal projector onto T_xM as a d x d matrix."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.ambient_dim,):
            raise DomainError("expected a single ambient point")
        self._require_on(x)
        return self.project(x, np.eye(self.ambient_dim)).T

    def connection_rule(self, x, y) -> np.ndarray:
        """gamma(x, y) = Pi_x (y - x)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._require_on(x)
        self._require_on(y)
        return self.project(x, y - x)

    def random_tangent(self, x, gauss) -> np.ndarray:
        """Uniform unit tangent vector at x built from an ambient Gaussian draw."""
        t = self.project(x, gauss)
        nrm = np.linalg.norm(t, axis=-1, keepdims=True)
        return t / np.where(nrm > 0, nrm, 1.0)

    def geodesic_step(self, x, v, theta, *, check: bool = True) -> np.ndarray:
        """Follow the geodesic from x with unit initial velocity v for length theta.

        In each block the speed is |v_c| and the block point rotates by angle
        ``theta * |v_c|`` in the plane of x_c and v_c.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if check:
            self._require_on(x)
            if not np.allclose(self.project(x, v), v, atol=1e-10):
                raise DomainError("direction is not tangent")
            if not np.allclose(np.linalg.norm(v, axis=-1), 1.0, atol=1e-10):
                raise DomainError("direction is not a unit vector")
        xb = self._split(x)
        vb = self._split(v)
        rho = self._radii()[:, None]
        speed = np.linalg.norm(vb, axis=-1, keepdims=True)
        ang = theta[..., None, None] * speed / rho
        # x_c on a circle of radius rho: rotate by ang in the (x_c, v_c) plane
        step = np.cos(ang) * xb + (theta[..., None, None] * np.sinc(ang / np.pi)) * vb
        out = step.reshape(x.shape)
        return self.retract(out)

    def max_chord(self, theta) -> float:
        """Largest ambient displacement produced by a geodesic step of length theta.

        For k round blocks of radius rho the worst unit direction spreads its
        speed evenly over the blocks (the chord is concave in the squared speeds).
        """
        n = len(self.blocks)
        rho = self.radii[0]
        a = min(float(theta) / (2 * rho * np.sqrt(n)), np.pi / 2)
        return float(2 * rho * np.sqrt(n) * np.sin(a))

    def angle_for_chord(self, chord: float) -> float:
        """Inverse of :meth:`max_chord`."""
        n = len(self.blocks)
        rho = self.radii[0]
        return float(2 * rho * np.sqrt(n) * np.arcsin(min(1.0, chord / (2 * rho * np.sqrt(n)))))

    def mean_cosine(self, theta) -> np.ndarray:
        """E[cos(theta * |V_c| / rho)] for V uniform on the unit tangent sphere.

        The squared block speeds of a uniform tangent direction are those of a
        uniform point on S^{n-1}, n = number of blocks, whose coordinate law
        gives a Bessel-function closed form.
        """
        from scipy.special import gamma, jv

        n = len(self.blocks)
        a = np.asarray(theta, dtype=float) / self.radii[0]
        if n == 1:
            return np.cos(a)
        nu = n / 2.0 - 1.0
        safe = np.where(a > 0, a, 1.0)
        val = gamma(n / 2.0) * (2.0 / safe) ** nu * jv(nu, safe)
        return np.where(a > 0, val, 1.0)

    # -- extension of the embedding -------------------------------------

    def _radial_profile(self, r):
        """g, g', g'' of the per-block radial extension z -> g(|z|) z."""
        rho = self._radii()
        rs = np.where(r > 0, r, 1.0)
        s = r - rho
        c, c1, c2 = cutoff(np.abs(s), self.blend_radius)
        c1 = c1 * np.sign(s)
        u = rho / rs - 1.0
        u1 = -rho / rs**2
        u2 = 2.0 * rho / rs**3
        g = 1.0 + c * u
        g1 = c1 * u + c * u1
        g2 = c2 * u + 2 * c1 * u1 + c * u2
        return g, g1, g2

    def extension_value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = self._split(x)
        r = np.linalg.norm(z, axis=-1)
        g, _, _ = self._radial_profile(r)
        return (g[..., None] * z).reshape(x.shape)

    def extension_jacobian(self, x) -> np.ndarray:
        """D ext(x) with entry [i, j] = d ext^i / d x_j; shape (..., d, d)."""
        x = np.asarray(x, dtype=float)
        z = self._split(x)
        r = np.linalg.norm(z, axis=-1)
        g, g1, _ = self._radial_profile(r)
        phi = np.where(r > 0, g1 / np.where(r > 0, r, 1.0), 0.0)
        nb, bd = len(self.blocks), self.blocks[0]
        blk = g[..., None, None] * np.eye(bd) + phi[..., None, None] * (
            z[..., :, None] * z[..., None, :]
        )
        out = np.zeros(x.shape[:-1] + (self.ambient_dim, self.ambient_dim))
        for c in range(nb):
            sl = slice(c * bd, (c + 1) * bd)
            out[..., sl, sl] = blk[..., c, :, :]
        return out

    def extension_hessian_tensor(self, x) -> np.ndarray:
        """Second derivatives T[..., i, j, k] = d^2 ext^i / dx_j dx_k."""
        x = np.asarray(x, dtype=float)
        z = self._split(x)
        r = np.linalg.norm(z, axis=-1)
        rs = np.where(r > 0, r, 1.0)
        _, g1, g2 = self._radial_profile(r)
        phi = g1 / rs
        dphi_over_r = (g2 * rs - g1) / rs**3
        nb, bd = len(self.blocks), self.blocks[0]
        eye = np.eye(bd)
        zi = z[..., :, None, None]
        zj = z[..., None, :, None]
        zk = z[..., None, None, :]
        blk = phi[..., None, None, None] * (
            zk * eye[:, :, None] + zj * eye[:, None, :] + zi * eye[None, :, :]
        ) + dphi_over_r[..., None, None, None] * (zi * zj * zk)
        d = self.ambient_dim
        out = np.zeros(x.shape[:-1] + (d, d, d))
        for c in range(nb):
            sl = slice(c * bd, (c + 1) * bd)
            out[..., sl, sl, sl] = blk[..., c, :, :, :]
        return out

    def extension_hessian(self, x, i: int) -> np.ndarray:
        """Hessian matrix of the i-th component of the extension."""
        return self.extension_hessian_tensor(x)[..., i, :, :]

    # -- derivative bounds --------------------------------------------------

    def derivative_bounds(
        self,
        radius: float,
        region: Literal["ball", "tube"] = "ball",
        samples: int = 10_000,
        safety: float = 1.1,
    ) -> "DerivativeBounds":
        """Sampled upper estimates of a1, a2, a3 over a region.

        ``region="ball"`` is the closed ball of the given radius about the
        origin; ``region="tube"`` is the set of points within ``radius`` of M.
        Samples are drawn in dyadic shells so that the sample for a smaller
        radius is contained in the sample for a larger one, which makes the
        bounds nondecreasing in ``radius``.
        """
        if radius <= 0:
            raise DomainError("radius must be positive")
        pts = _shell_sample(self, radius, region, samples)
        jac = self.extension_jacobian(pts)
        a1 = np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1)))
        hess = self.extension_hessian_tensor(pts)
        # sup_u |T(u,u)| <= sqrt(sum_i ||H_i||^2)
        hn = np.linalg.norm(hess, ord=2, axis=(-2, -1))
        a2 = np.max(np.sqrt(np.sum(hn**2, axis=-1)))
        h = 1e-5
        a3 = 0.0
        for j in range(self.ambient_dim):
            e = np.zeros(self.ambient_dim)
            e[j] = h
            third = (
                self.extension_hessian_tensor(pts + e)
                - self.extension_hessian_tensor(pts - e)
            ) / (2 * h)
            a3 = max(a3, float(np.max(np.abs(third))))
        dist = self.distance(pts)
        in_shell = (dist > 0.5 * self.blend_radius) & (dist < self.blend_radius)
        return DerivativeBounds(
            a1=float(safety * a1),
            a2=float(safety * a2),
            a3=float(safety * a3),
            radius=float(radius),
            region=region,
            blend_shell_sampled=bool(np.any(in_shell)),
        )


@dataclass(frozen=True)
class DerivativeBounds:
    a1: float
    a2: float
    a3: float
    radius: float
    region: str = "ball"
    # True when the sample reaches the blend shell where the cutoff derivatives live
    blend_shell_sampled: bool = False


_SHELL_R0 = 1.0 / 64.0


def _sobol(dim: int, seed: int, n: int) -> np.ndarray:
    k = max(1, int(np.ceil(np.log2(n))))
    return qmc.Sobol(dim, scramble=True, seed=seed).random_base2(k)[:n]


def _shell_edges(radius: float) -> list[tuple[int, float, float]]:
    edges = [(0, 0.0, _SHELL_R0)]
    j = 1
    while edges[-1][2] < radius:
        edges.append((j, _SHELL_R0 * 2 ** (j - 1), _SHELL_R0 * 2**j))
        j += 1
    return edges


def _shell_sample(m: EmbeddedManifold, radius: float, region: str, n: int) -> np.ndarray:
    out = []
    for j, lo, hi in _shell_edges(radius):
        if region == "ball":
            dim = m.ambient_dim
            sob = _sobol(dim + 1, 1000 + j, n)
            t = sob[:, 0]
            rad = (lo**dim + t * (hi**dim - lo**dim)) ** (1.0 / dim)
            g = norm.ppf(np.clip(sob[:, 1:], 1e-12, 1 - 1e-12))
            pts = rad[:, None] * g / np.linalg.norm(g, axis=1, keepdims=True)
            keep = rad <= radius
        elif region == "tube":
            nb = len(m.blocks)
            sob = _sobol(m.ambient_dim + nb + 1, 2000 + j, n)
            g = norm.ppf(np.clip(sob[:, : m.ambient_dim], 1e-12, 1 - 1e-12))
            base = m.closest_point(g)
            t = sob[:, m.ambient_dim]
            off = lo + t * (hi - lo)
            if nb == 1:
                sgn = np.where(sob[:, -1] < 0.5, -1.0, 1.0)
                ndir = sgn[:, None]
            else:
                h = norm.ppf(np.clip(sob[:, m.ambient_dim + 1 :], 1e-12, 1 - 1e-12))
                hh = np.concatenate([h, np.ones((n, max(0, nb - h.shape[1])))], axis=1)[:, :nb]
                ndir = hh / np.linalg.norm(hh, axis=1, keepdims=True)
            normals = m.unit_normals(base)
            shift = (off[:, None] * ndir)[:, :, None] * normals
            pts = base + shift.reshape(base.shape)
            keep = off <= radius
        else:
            raise DomainError(f"unknown region {region!r}")
        out.append(pts[keep])
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# ball covers


@dataclass(frozen=True)
class BallCover:
    centers: np.ndarray
    inner_radius: float
    outer_radius: float

    def __len__(self):
        return len(self.centers)

    def inner_contains(self, j: int, x) -> np.ndarray:
        return np.linalg.norm(np.asarray(x) - self.centers[j], axis=-1) < self.inner_radius

    def outer_contains(self, j: int, x) -> np.ndarray:
        return np.linalg.norm(np.asarray(x) - self.centers[j], axis=-1) < self.outer_radius

    def covering_radius(self, pts) -> float:
        d, _ = cKDTree(self.centers).query(np.asarray(pts))
        return float(np.max(d))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.centers.shape[1]
        w.writerow([f"c{i + 1}" for i in range(d)] + ["inner_radius", "outer_radius"])
        for c in self.centers:
            w.writerow([repr(float(v)) for v in c] + [repr(self.inner_radius), repr(self.outer_radius)])
        return buf.getvalue()


def dense_sample(m: EmbeddedManifold, n: int = 10_000, seed: int = 0) -> np.ndarray:
    """Deterministic, roughly uniform sample of manifold points."""
    if m.catalog_id == "sphere" and m.ambient_dim == 2:
        a = 2 * np.pi * (np.arange(n) + 0.5) / n
        return m.radii[0] * np.column_stack([np.cos(a), np.sin(a)])
    if m.catalog_id == "sphere" and m.ambient_dim == 3:
        i = np.arange(n) + 0.5
        zc = 1 - 2 * i / n
        phi = np.pi * (1 + 5**0.5) * i
        rr = np.sqrt(1 - zc**2)
        return m.radii[0] * np.column_stack([rr * np.cos(phi), rr * np.sin(phi), zc])
    g = norm.ppf(np.clip(_sobol(m.ambient_dim, seed, n), 1e-12, 1 - 1e-12))
    return m.closest_point(g)


def ball_cover(
    m: EmbeddedManifold,
    inner_radius: float,
    outer_radius: float,
    n_dense: int = 10_000,
) -> BallCover:
    """Cover M by ambient balls of radius ``inner_radius`` centred on M.

    Farthest-point greedy selection on a dense sample; the loop stops once the
    sample's covering radius is below ``inner_radius`` minus a fill-distance
    margin, so points between samples are covered as well.
    """
    if not 0 < inner_radius < outer_radius:
        raise DomainError("need 0 < inner_radius < outer_radius")
    pts = dense_sample(m, n_dense)
    probe = dense_sample(m, 4096, seed=7) if m.catalog_id != "sphere" or m.ambient_dim > 3 else None
    if probe is None:
        rng = np.random.default_rng(7)
        probe = m.closest_point(rng.standard_normal((4096, m.ambient_dim)))
    fill, _ = cKDTree(pts).query(probe)
    margin = 1.5 * float(np.max(fill))
    target = inner_radius - margin
    if target <= 0:
        raise DomainError("inner_radius too small for the dense sample")
    chosen = [0]
    dmin = np.linalg.norm(pts - pts[0], axis=1)
    while dmin.max() > target:
        k = int(np.argmax(dmin))
        chosen.append(k)
        dmin = np.minimum(dmin, np.linalg.norm(pts - pts[k], axis=1))
    return BallCover(pts[chosen].copy(), float(inner_radius), float(outer_radius))


# ---------------------------------------------------------------------------
# catalog


def sphere(
    ambient_dim: int = 3,
    radius: float = 1.0,
    blend_radius: float = 0.5,
    trap: Sequence[float] | None = None,
) -> EmbeddedManifold:
    """Round sphere S^{d-1} of the given radius; trap defaults to the origin."""
    trap = tuple(float(t) for t in (trap if trap is not None else np.zeros(ambient_dim)))
    return EmbeddedManifold(
        "sphere", ambient_dim, (ambient_dim,), (float(radius),), float(blend_radius), trap
    )


def torus(
    circles: int = 2,
    radius: float = 1.0,
    blend_radius: float = 0.5,
    trap: Sequence[float] | None = None,
) -> EmbeddedManifold:
    """Flat torus: product of ``circles`` circles in R^{2 * circles}."""
    d = 2 * circles
    trap = tuple(float(t) for t in (trap if trap is not None else np.zeros(d)))
    return EmbeddedManifold(
        "torus", d, (2,) * circles, (float(radius),) * circles, float(blend_radius), trap
    )


def from_config(block: dict) -> EmbeddedManifold:
    """Build a catalog manifold from a key-value config block."""
    cid = str(block.get("catalog_id", "sphere")).strip()
    ambient = int(block.get("ambient_dim", 3))
    blend = float(block.get("blend_radius", 0.5))
    radius = float(block.get("radius", 1.0))
    trap = block.get("trap")
    if isinstance(trap, str):
        trap = [float(t) for t in trap.replace(",", " ").split()]
    if cid == "sphere":
        return sphere(ambient, radius, blend, trap)
    if cid == "torus":
        if ambient % 2:
            raise DomainError("torus needs an even ambient dimension")
        return torus(ambient // 2, radius, blend, trap)
    raise DomainError(f"unknown catalog_id {cid!r}")


def to_config(m: EmbeddedManifold) -> dict[str, str]:
    return {
        "catalog_id": m.catalog_id,
        "ambient_dim": str(m.ambient_dim),
        "radius": repr(m.radii[0]),
        "blend_radius": repr(m.blend_radius),
        "trap": " ".join(repr(t) for t in m.trap),
    }
