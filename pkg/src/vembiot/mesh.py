"""
Polygonal meshes of the unit square.

A :class:`PolyMesh` stores counter-clockwise vertex loops, the deduplicated
edge list with its adjacent cells, and a string tag for every boundary edge.
Three generators are provided (uniform triangles, distorted quadrilaterals and
clipped hexagons) together with per-element geometry and a simple regularity
report.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np


class MeshError(ValueError):
    """Raised for invalid mesh input or a degenerate element."""


Tagger = Callable[[np.ndarray], str]


def side_tagger(midpoint: np.ndarray, tol: float = 1e-10) -> str:
    """Tag a boundary edge of the unit square by the side it lies on."""
    x, y = midpoint
    if abs(y) < tol:
        return "bottom"
    if abs(x - 1.0) < tol:
        return "right"
    if abs(y - 1.0) < tol:
        return "top"
    if abs(x) < tol:
        return "left"
    raise MeshError(f"boundary edge at {midpoint} is not on the unit square")


def footing_tagger(midpoint: np.ndarray) -> str:
    """Side tags, with the top segment (0.25, 0.75) x {1} tagged ``load``."""
    tag = side_tagger(midpoint)
    if tag == "top" and 0.25 < midpoint[0] < 0.75:
        return "load"
    return tag


@dataclass(frozen=True)
class ElementGeometry:
    vertices: np.ndarray  # (N, 2), counter-clockwise
    area: float
    centroid: np.ndarray
    diameter: float
    lengths: np.ndarray  # edge i runs from vertex i to vertex i+1
    normals: np.ndarray  # outward unit normals
    tangents: np.ndarray
    midpoints: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def perimeter(self) -> float:
        return float(self.lengths.sum())


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_geometry(pts: np.ndarray) -> ElementGeometry:
    """Geometry of a single counter-clockwise polygon given by its vertices."""
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 3:
        raise MeshError("polygon needs at least 3 vertices")
    # shoelace relative to the first vertex to limit cancellation
    rel = pts - pts[0]
    nxt = np.roll(rel, -1, axis=0)
    cross = rel[:, 0] * nxt[:, 1] - nxt[:, 0] * rel[:, 1]
    area = 0.5 * cross.sum()
    if not area > 0.0:
        raise MeshError(f"degenerate or clockwise polygon (signed area {area:g})")
    centroid = pts[0] + ((rel + nxt) * cross[:, None]).sum(axis=0) / (6.0 * area)
    vec = np.roll(pts, -1, axis=0) - pts
    lengths = np.hypot(vec[:, 0], vec[:, 1])
    if np.any(lengths <= 0.0):
        raise MeshError("polygon has a zero-length edge")
    tangents = vec / lengths[:, None]
    normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
    diff = pts[:, None, :] - pts[None, :, :]
    diameter = float(np.sqrt((diff**2).sum(axis=-1)).max())
    midpoints = 0.5 * (pts + np.roll(pts, -1, axis=0))
    return ElementGeometry(pts, float(area), centroid, diameter, lengths, normals, tangents, midpoints)


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def is_simple(pts: np.ndarray) -> bool:
    """True if no two non-adjacent edges of the closed polyline cross."""
    n = len(pts)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]):
                return False
    return True


def is_convex(pts: np.ndarray, tol: float = 1e-12) -> bool:
    d1 = np.roll(pts, -1, axis=0) - pts
    d2 = np.roll(d1, -1, axis=0)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    scale = np.abs(d1).max() * np.abs(d2).max()
    return bool(np.all(cross >= -tol * scale))


@dataclass(frozen=True, eq=False)
class PolyMesh:
    """Conforming polygonal mesh.

    ``cell_edges[c][i]`` is the global edge joining local vertices ``i`` and
    ``i+1`` of cell ``c``. ``edge_cells[e]`` lists the adjacent cells, with
    ``-1`` in the second slot for boundary edges. Edges are stored with
    ``edges[e, 0] < edges[e, 1]``.
    """

    vertices: np.ndarray
    cells: tuple
    edges: np.ndarray
    edge_cells: np.ndarray
    cell_edges: tuple
    boundary_tags: dict = field(default_factory=dict)

    @classmethod
    def from_cells(cls, vertices, cells: Sequence[Sequence[int]], tagger: Tagger = side_tagger) -> "PolyMesh":
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = tuple(np.asarray(c, dtype=np.int64) for c in cells)
        edge_index: dict[tuple[int, int], int] = {}
        edges, adj = [], []
        cell_edges = []
        for ci, loop in enumerate(cells):
            if len(loop) < 3:
                raise MeshError(f"cell {ci} has fewer than 3 vertices")
            local = np.empty(len(loop), dtype=np.int64)
            for i in range(len(loop)):
                a, b = int(loop[i]), int(loop[(i + 1) % len(loop)])
                if a == b:
                    raise MeshError(f"cell {ci} repeats vertex {a}")
                key = (a, b) if a < b else (b, a)
                e = edge_index.get(key)
                if e is None:
                    e = edge_index[key] = len(edges)
                    edges.append(key)
                    adj.append([ci, -1])
                elif adj[e][1] == -1:
                    adj[e][1] = ci
                else:
                    raise MeshError(f"edge {key} shared by more than two cells")
                local[i] = e
            cell_edges.append(local)
        edges_arr = np.array(edges, dtype=np.int64).reshape(-1, 2)
        adj_arr = np.array(adj, dtype=np.int64).reshape(-1, 2)
        tags = {}
        for e in np.flatnonzero(adj_arr[:, 1] < 0):
            a, b = edges_arr[e]
            tags[int(e)] = tagger(0.5 * (vertices[a] + vertices[b]))
        mesh = cls(vertices, cells, edges_arr, adj_arr, tuple(cell_edges), tags)
        mesh.validate()
        return mesh

    def retag(self, tagger: Tagger) -> "PolyMesh":
        return PolyMesh.from_cells(self.vertices, self.cells, tagger)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] < 0)

    @cached_property
    def geometries(self) -> tuple:
        return tuple(polygon_geometry(self.vertices[c]) for c in self.cells)

    @cached_property
    def h(self) -> float:
        return max(g.diameter for g in self.geometries)

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Global edge normals: tangent from ``edges[:,0]`` to ``edges[:,1]`` rotated clockwise."""
        vec = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        t = vec / np.hypot(vec[:, 0], vec[:, 1])[:, None]
        return np.column_stack([t[:, 1], -t[:, 0]])

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        vec = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(vec[:, 0], vec[:, 1])

    def edge_signs(self, cell: int) -> np.ndarray:
        """+1 where the local outward normal equals the global edge normal."""
        loop = self.cells[cell]
        return np.where(loop < np.roll(loop, -1), 1.0, -1.0)

    def cell_neighbors(self, cell: int) -> list[int]:
        out = []
        for e in self.cell_edges[cell]:
            a, b = self.edge_cells[e]
            other = b if a == cell else a
            if other >= 0:
                out.append(int(other))
        return out

    def validate(self) -> None:
        for ci, loop in enumerate(self.cells):
            pts = self.vertices[loop]
            if _signed_area(pts) <= 0.0:
                raise MeshError(f"cell {ci} has non-positive signed area")
        used = np.zeros(self.n_vertices, dtype=bool)
        for loop in self.cells:
            used[loop] = True
        if not used.all():
            raise MeshError("mesh has vertices not referenced by any cell")
        # every boundary vertex must have exactly two boundary edges (closed loops)
        counts = np.bincount(self.edges[self.boundary_edges].ravel(), minlength=self.n_vertices)
        if np.any((counts != 0) & (counts != 2)):
            raise MeshError("boundary edges do not form closed loops (hanging node?)")

    def cell_at(self, point) -> int:
        """Index of a cell containing ``point`` (first match)."""
        p = np.asarray(point, dtype=float)
        for ci, loop in enumerate(self.cells):
            pts = self.vertices[loop]
            d = np.roll(pts, -1, axis=0) - pts
            r = p - pts
            if np.all(d[:, 0] * r[:, 1] - d[:, 1] * r[:, 0] >= -1e-12):
                return ci
        raise MeshError(f"point {point} is outside the mesh")


def element_geometry(mesh: PolyMesh, cell: int) -> ElementGeometry:
    if not 0 <= cell < mesh.n_cells:
        raise IndexError(f"cell index {cell} out of range")
    return mesh.geometries[cell]


@dataclass(frozen=True)
class MeshRegularityReport:
    edge_ratio: np.ndarray  # shortest edge / h_K per cell
    convex: np.ndarray
    h: float
    threshold: float
    violations: np.ndarray

    def summary(self) -> str:
        return (
            f"cells={len(self.edge_ratio)} h={self.h:.6g} "
            f"min edge/h_K={self.edge_ratio.min():.4f} "
            f"non-convex={int((~self.convex).sum())} "
            f"violations(C_T={self.threshold:g})={len(self.violations)}"
        )


def check_regularity(mesh: PolyMesh, threshold: float) -> MeshRegularityReport:
    ratio = np.array([g.lengths.min() / g.diameter for g in mesh.geometries])
    convex = np.array([is_convex(g.vertices) for g in mesh.geometries])
    bad = np.flatnonzero((ratio <= threshold) | ~convex)
    return MeshRegularityReport(ratio, convex, mesh.h, threshold, bad)


# ---------------------------------------------------------------- generators


def _check_n(n: int) -> None:
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")


def _grid_vertices(n: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


def generate_triangles(n: int, tagger: Tagger = side_tagger) -> PolyMesh:
    """Uniform ``n x n`` grid with every square split along its (0,0)-(1,1) diagonal."""
    _check_n(n)
    cells = []
    for j in range(n):
        for i in range(n):
            v0 = j * (n + 1) + i
            v1, v2, v3 = v0 + 1, v0 + n + 2, v0 + n + 1
            cells.append((v0, v1, v2))
            cells.append((v0, v2, v3))
    return PolyMesh.from_cells(_grid_vertices(n), cells, tagger)


def generate_distorted_quads(
    n: int, distortion: float = 0.0, seed: int = 0, tagger: Tagger = side_tagger, max_retries: int = 10
) -> PolyMesh:
    """Uniform quadrilateral grid with interior vertices randomly displaced.

    Offsets are uniform in ``[-distortion/n, distortion/n]`` per coordinate and
    come from a Philox counter-based generator keyed by ``seed``; the draw for
    vertex ``k`` is the ``k``-th pair of the stream, so results do not depend
    on platform. A tangled cell halves the offsets and retries.
    """
    _check_n(n)
    if not 0.0 <= distortion < 0.5:
        raise ValueError("distortion must lie in [0, 0.5)")
    base = _grid_vertices(n)
    cells = []
    for j in range(n):
        for i in range(n):
            v0 = j * (n + 1) + i
            cells.append((v0, v0 + 1, v0 + n + 2, v0 + n + 1))
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    offsets = gen.uniform(-1.0, 1.0, size=(len(base), 2))
    on_boundary = (np.isclose(base, 0.0) | np.isclose(base, 1.0)).any(axis=1)
    offsets[on_boundary] = 0.0
    scale = distortion / n
    for _ in range(max_retries + 1):
        verts = base + scale * offsets
        if all(_signed_area(verts[list(c)]) > 0 and is_simple(verts[list(c)]) for c in cells):
            return PolyMesh.from_cells(verts, cells, tagger)
        scale *= 0.5
    raise MeshError(f"could not untangle distorted mesh after {max_retries} retries")


def _clip_halfplane(poly: list, axis: int, value: float, keep_below: bool) -> list:
    out = []
    if not poly:
        return out

    def inside(p):
        return p[axis] <= value if keep_below else p[axis] >= value

    prev = poly[-1]
    for cur in poly:
        if inside(cur):
            if not inside(prev):
                out.append(_cross_point(prev, cur, axis, value))
            out.append(cur)
        elif inside(prev):
            out.append(_cross_point(prev, cur, axis, value))
        prev = cur
    return out


def _cross_point(p, q, axis, value):
    s = (value - p[axis]) / (q[axis] - p[axis])
    r = [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]
    r[axis] = value
    return tuple(r)


def generate_hexagons(n: int, tagger: Tagger = side_tagger) -> PolyMesh:
    """Flat-top hexagonal tiling of the unit square, clipped at the boundary.

    ``n`` is the number of hexagon columns: centres sit at ``x = 1.5 r i`` with
    ``r = 2/(3n)``, so the vertical sides of the square cut through column
    centres. The row spacing is ``1/m`` with ``m = round(sqrt(3) n / 2)``, which
    keeps the cells within a few percent of regular while making the
    horizontal sides pass through centres or along hexagon edges. Clipped cells
    are therefore half or quarter hexagons and no slivers appear.

    All vertices (including clip points) lie on the lattice
    ``(X r/2, Y dy/2)`` with integer ``X, Y``; clipping is done in lattice units
    so shared vertices are identified exactly.
    """
    _check_n(n)
    m = max(1, round(math.sqrt(3.0) * n / 2.0))
    xmax, ymax = 3 * n, 2 * m
    offsets = [(2, 0), (1, 1), (-1, 1), (-2, 0), (-1, -1), (1, -1)]
    index: dict[tuple[int, int], int] = {}
    cells = []
    for i in range(n + 1):
        for j in range(-1, m + 2):
            cx, cy = 3 * i, 2 * j + (i % 2)
            poly = [(cx + ox, cy + oy) for ox, oy in offsets]
            for axis, lo, hi in ((0, 0, xmax), (1, 0, ymax)):
                poly = _clip_halfplane(poly, axis, lo, keep_below=False)
                poly = _clip_halfplane(poly, axis, hi, keep_below=True)
            loop = []
            for p in poly:
                k = (round(p[0]), round(p[1]))
                v = index.setdefault(k, len(index))
                if not loop or loop[-1] != v:
                    loop.append(v)
            while len(loop) > 1 and loop[0] == loop[-1]:
                loop.pop()
            if len(loop) >= 3:
                cells.append(loop)
    lattice = np.array(sorted(index, key=index.get), dtype=float)
    keep = []
    for loop in cells:
        if _signed_area(lattice[loop]) > 0.5:
            keep.append(loop)
    used = sorted({v for c in keep for v in c})
    remap = {v: k for k, v in enumerate(used)}
    vertices = lattice[used] * np.array([1.0 / xmax, 1.0 / ymax])
    return PolyMesh.from_cells(vertices, [[remap[v] for v in c] for c in keep], tagger)


FAMILIES = {
    "tri": generate_triangles,
    "quad": generate_distorted_quads,
    "hex": generate_hexagons,
}


def generate(family: str, n: int, distortion: float = 0.0, seed: int = 0, tagger: Tagger = side_tagger) -> PolyMesh:
    if family == "quad":
        return generate_distorted_quads(n, distortion, seed, tagger)
    if family not in FAMILIES:
        raise ValueError(f"unknown mesh family {family!r}")
    return FAMILIES[family](n, tagger=tagger)


# ------------------------------------------------------------------------ io


def write_mesh(mesh: PolyMesh, path) -> None:
    lines = ["poly-mesh v1", str(mesh.n_vertices)]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(str(mesh.n_cells))
    lines += [" ".join(str(v) for v in [len(c), *c]) for c in mesh.cells]
    lines.append(str(len(mesh.boundary_tags)))
    for e in sorted(mesh.boundary_tags):
        a, b = mesh.edges[e]
        lines.append(f"{a} {b} {mesh.boundary_tags[e]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> PolyMesh:
    with open(path) as fh:
        tokens = [ln.strip() for ln in fh if ln.strip()]
    if not tokens or tokens[0] != "poly-mesh v1":
        raise MeshError("not a poly-mesh v1 file")
    pos = 1
    nv = int(tokens[pos]); pos += 1
    vertices = np.array([[float(s) for s in tokens[pos + k].split()] for k in range(nv)])
    pos += nv
    nc = int(tokens[pos]); pos += 1
    cells = []
    for k in range(nc):
        vals = [int(s) for s in tokens[pos + k].split()]
        cells.append(vals[1 : 1 + vals[0]])
    pos += nc
    nb = int(tokens[pos]); pos += 1
    tag_of = {}
    for k in range(nb):
        a, b, tag = tokens[pos + k].split(maxsplit=2)
        a, b = int(a), int(b)
        tag_of[(min(a, b), max(a, b))] = tag
    mesh = PolyMesh.from_cells(vertices, cells, tagger=lambda mid: "untagged")
    tags = {}
    for e in mesh.boundary_edges:
        key = tuple(int(v) for v in mesh.edges[e])
        if key not in tag_of:
            raise MeshError(f"boundary edge {key} has no tag")
        tags[int(e)] = tag_of[key]
    return PolyMesh(mesh.vertices, mesh.cells, mesh.edges, mesh.edge_cells, mesh.cell_edges, tags)
