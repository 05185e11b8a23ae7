"""
Scaled monomials and quadrature on polygons and edges.

Monomials are ``m_a(x) = ((x - x_K)/h_K)^a`` in the fixed order
``[1, xi, eta, xi^2, xi*eta, eta^2]``. Polygon rules fan triangles out of the
centroid (ear clipping when the fan would invert) and use a collapsed Gauss
rule on each triangle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .mesh import ElementGeometry, MeshError

_EXPONENTS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


def monomial_dim(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


@dataclass(frozen=True)
class ScaledMonomialBasis:
    centroid: np.ndarray
    diameter: float
    degree: int = 1

    @classmethod
    def of(cls, geom: ElementGeometry, degree: int = 1) -> "ScaledMonomialBasis":
        if degree not in (0, 1, 2):
            raise ValueError("degree must be 0, 1 or 2")
        return cls(geom.centroid, geom.diameter, degree)

    @property
    def dim(self) -> int:
        return monomial_dim(self.degree)

    def scaled(self, pts) -> np.ndarray:
        return (np.atleast_2d(pts) - self.centroid) / self.diameter

    def values(self, pts) -> np.ndarray:
        """(npts, dim) matrix of monomial values."""
        s = self.scaled(pts)
        return np.column_stack([s[:, 0] ** a * s[:, 1] ** b for a, b in _EXPONENTS[: self.dim]])

    def gradients(self, pts) -> np.ndarray:
        """(npts, dim, 2) array of monomial gradients."""
        s = self.scaled(pts)
        xi, eta = s[:, 0], s[:, 1]
        out = np.zeros((len(s), self.dim, 2))
        for k, (a, b) in enumerate(_EXPONENTS[: self.dim]):
            if a:
                out[:, k, 0] = a * xi ** (a - 1) * eta**b
            if b:
                out[:, k, 1] = b * xi**a * eta ** (b - 1)
        return out / self.diameter


@dataclass(frozen=True)
class PolygonQuadrature:
    points: np.ndarray
    weights: np.ndarray

    def integrate(self, values) -> float | np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=None)
def _reference_triangle_rule(exactness: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed (Duffy) Gauss rule on the unit triangle, exact to ``exactness``."""
    n = max(1, math.ceil((exactness + 2) / 2))
    g, w = np.polynomial.legendre.leggauss(n)
    g, w = 0.5 * (g + 1.0), 0.5 * w
    U, V = np.meshgrid(g, g, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    # (u, v) in the unit square -> (u, v(1-u)) in the triangle, Jacobian (1-u)
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    wts = (WU * WV * (1.0 - U)).ravel()
    return pts, wts


def triangle_quadrature(tri: np.ndarray, exactness: int = 4) -> tuple[np.ndarray, np.ndarray]:
    ref_pts, ref_w = _reference_triangle_rule(exactness)
    a, b, c = tri
    J = np.column_stack([b - a, c - a])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    return a + ref_pts @ J.T, ref_w * abs(det)


def _ear_clip(pts: np.ndarray) -> list[tuple[int, int, int]]:
    idx = list(range(len(pts)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(pts) ** 2:
            raise MeshError("ear clipping failed; polygon is not simple")
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = pts[i0], pts[i1], pts[i2]
            if cross(a, b, c) <= 0:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = pts[j]
                if cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0:
                    inside = True
                    break
            if not inside:
                tris.append((i0, i1, i2))
                idx.pop(k)
                break
    tris.append(tuple(idx))
    return tris


def polygon_triangles(geom: ElementGeometry) -> list[np.ndarray]:
    """Centroid fan, or an ear-clipping triangulation if the fan inverts."""
    v = geom.vertices
    c = geom.centroid
    fan = [np.array([c, v[i], v[(i + 1) % len(v)]]) for i in range(len(v))]
    tol = 1e-14 * geom.diameter**2
    ok = all(
        (t[1, 0] - t[0, 0]) * (t[2, 1] - t[0, 1]) - (t[1, 1] - t[0, 1]) * (t[2, 0] - t[0, 0]) > tol for t in fan
    )
    if ok:
        return fan
    return [v[list(t)] for t in _ear_clip(v)]


def polygon_quadrature(geom: ElementGeometry, exactness: int = 4) -> PolygonQuadrature:
    if exactness > 8:
        raise ValueError("polygon rules are provided up to exactness 8")
    pts, wts = [], []
    for tri in polygon_triangles(geom):
        p, w = triangle_quadrature(tri, exactness)
        pts.append(p)
        wts.append(w)
    return PolygonQuadrature(np.vstack(pts), np.concatenate(wts))


def monomial_moments(basis: ScaledMonomialBasis, quad: PolygonQuadrature) -> np.ndarray:
    """Mass matrix ``H[a, b] = int_K m_a m_b``."""
    M = basis.values(quad.points)
    H = (M * quad.weights[:, None]).T @ M
    H = 0.5 * (H + H.T)
    if np.linalg.eigvalsh(H)[0] <= 0.0:
        raise MeshError("monomial mass matrix is not positive definite")
    return H


@dataclass(frozen=True)
class EdgeQuadrature:
    """Rule on the unit parameter interval; weights sum to one."""

    name: str
    nodes: np.ndarray
    weights: np.ndarray


TRAPEZOID = EdgeQuadrature("trapezoid", np.array([0.0, 1.0]), np.array([0.5, 0.5]))
GAUSS_LOBATTO3 = EdgeQuadrature("gauss-lobatto-3", np.array([0.0, 0.5, 1.0]), np.array([1.0, 4.0, 1.0]) / 6.0)


def edge_integral(a, b, rule: EdgeQuadrature, integrand: Callable[[np.ndarray], np.ndarray]) -> float:
    """Integrate ``integrand`` (vectorised over points) along the segment a-b."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    pts = a + rule.nodes[:, None] * (b - a)
    return float(np.linalg.norm(b - a) * np.dot(rule.weights, integrand(pts)))


def dump_csv(path, H: np.ndarray, quad: PolygonQuadrature | None = None) -> None:
    """Write ``H`` (and optionally a quadrature rule) for cross-checking."""
    with open(path, "w") as fh:
        fh.write("# H\n")
        for row in H:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        if quad is not None:
            fh.write("# x,y,w\n")
            for (x, y), w in zip(quad.points, quad.weights):
                fh.write(f"{x:.17g},{y:.17g},{w:.17g}\n")
