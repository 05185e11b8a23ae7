"""
Global dof numbering, boundary-condition classification and interpolation.

Displacement dofs: ``2*v, 2*v+1`` for the components at vertex ``v``, then
``2*n_vertices + e`` for the normal component at the midpoint of edge ``e``
measured along the global edge normal :attr:`PolyMesh.edge_normals`.
Pressure dofs are vertex values and total-pressure dofs are cell values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .mesh import PolyMesh
from .polykernel import PolygonQuadrature


class ConfigurationError(ValueError):
    """Boundary setup that does not match the mesh tags."""


@dataclass(frozen=True)
class BoundaryCondition:
    """Condition pair on a tagged boundary piece.

    ``u`` is ``"dirichlet"`` (clamped or prescribed) or ``"traction"``;
    ``p`` is ``"dirichlet"`` or ``"flux"``.
    """

    u: str = "dirichlet"
    p: str = "dirichlet"

    def __post_init__(self):
        if self.u not in ("dirichlet", "traction"):
            raise ConfigurationError(f"unknown displacement condition {self.u!r}")
        if self.p not in ("dirichlet", "flux"):
            raise ConfigurationError(f"unknown pressure condition {self.p!r}")


GAMMA = BoundaryCondition("dirichlet", "flux")
SIGMA = BoundaryCondition("traction", "dirichlet")
DIRICHLET = BoundaryCondition("dirichlet", "dirichlet")


@dataclass
class BoundaryData:
    """Time-dependent boundary data; ``None`` means homogeneous.

    ``u(x, t) -> (npts, 2)`` and ``p(x, t) -> (npts,)`` give Dirichlet traces.
    ``traction[tag](x, t, n) -> (npts, 2)`` and ``flux[tag](x, t, n) -> (npts,)``
    give the natural data (total traction and ``(kappa/eta) grad p . n``).
    """

    u: Callable | None = None
    p: Callable | None = None
    traction: Mapping[str, Callable] = field(default_factory=dict)
    flux: Mapping[str, Callable] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class DofMap:
    mesh: PolyMesh
    bc: Mapping[str, BoundaryCondition]
    n_u: int
    n_p: int
    n_z: int
    u_dofs: tuple  # per cell, local -> global displacement dofs
    u_signs: tuple  # per cell, +-1 relating local outward to global normal dofs
    u_fixed: np.ndarray  # bool mask
    p_fixed: np.ndarray

    @property
    def n_total(self) -> int:
        return self.n_u + self.n_p + self.n_z

    @property
    def offsets(self) -> tuple[int, int, int]:
        return 0, self.n_u, self.n_u + self.n_p

    @property
    def fixed(self) -> np.ndarray:
        return np.concatenate([self.u_fixed, self.p_fixed, np.zeros(self.n_z, dtype=bool)])

    @property
    def n_free(self) -> int:
        return int((~self.fixed).sum())

    def p_dofs(self, cell: int) -> np.ndarray:
        return self.mesh.cells[cell]

    def gather_u(self, cell: int, u: np.ndarray) -> np.ndarray:
        return self.u_signs[cell] * u[self.u_dofs[cell]]

    def scatter_u(self, cell: int, local: np.ndarray, out: np.ndarray) -> np.ndarray:
        np.add.at(out, self.u_dofs[cell], self.u_signs[cell] * local)
        return out

    def edges_with(self, field_: str, kind: str) -> np.ndarray:
        return np.array(
            [e for e, tag in self.mesh.boundary_tags.items() if getattr(self.bc[tag], field_) == kind],
            dtype=np.int64,
        )


def build_dofmap(mesh: PolyMesh, bc: Mapping[str, BoundaryCondition]) -> DofMap:
    missing = {tag for tag in mesh.boundary_tags.values() if tag not in bc}
    if missing:
        raise ConfigurationError(f"no boundary condition for tags {sorted(missing)}")
    nv, ne = mesh.n_vertices, mesh.n_edges
    n_u = 2 * nv + ne
    u_dofs, u_signs = [], []
    for c, loop in enumerate(mesh.cells):
        N = len(loop)
        dofs = np.empty(3 * N, dtype=np.int64)
        dofs[0 : 2 * N : 2] = 2 * loop
        dofs[1 : 2 * N : 2] = 2 * loop + 1
        dofs[2 * N :] = 2 * nv + mesh.cell_edges[c]
        signs = np.ones(3 * N)
        signs[2 * N :] = mesh.edge_signs(c)
        u_dofs.append(dofs)
        u_signs.append(signs)
    u_fixed = np.zeros(n_u, dtype=bool)
    p_fixed = np.zeros(nv, dtype=bool)
    # Dirichlet wins at vertices shared with a natural-condition edge
    for e, tag in mesh.boundary_tags.items():
        a, b = mesh.edges[e]
        if bc[tag].u == "dirichlet":
            u_fixed[[2 * a, 2 * a + 1, 2 * b, 2 * b + 1, 2 * nv + e]] = True
        if bc[tag].p == "dirichlet":
            p_fixed[[a, b]] = True
    return DofMap(mesh, dict(bc), n_u, nv, mesh.n_cells, tuple(u_dofs), tuple(u_signs), u_fixed, p_fixed)


def interpolate_into_Vh(f, mesh: PolyMesh) -> np.ndarray:
    """Vertex values and global-normal midpoint values of ``f(pts) -> (npts, 2)``."""
    vv = np.asarray(f(mesh.vertices), dtype=float).reshape(-1, 2)
    mm = np.asarray(f(mesh.edge_midpoints), dtype=float).reshape(-1, 2)
    return np.concatenate([vv.ravel(), (mm * mesh.edge_normals).sum(axis=1)])


def interpolate_into_Qh(f, mesh: PolyMesh) -> np.ndarray:
    return np.asarray(f(mesh.vertices), dtype=float).reshape(-1) * np.ones(mesh.n_vertices)


def project_into_Zh(f, mesh: PolyMesh, quads: list[PolygonQuadrature]) -> np.ndarray:
    """Cell averages of ``f`` computed with the given polygon rules."""
    out = np.empty(mesh.n_cells)
    for c, q in enumerate(quads):
        vals = np.asarray(f(q.points), dtype=float) * np.ones(len(q.weights))
        out[c] = q.weights @ vals / q.weights.sum()
    return out


def dirichlet_values(dofmap: DofMap, data: BoundaryData, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Full-length u and p vectors holding the Dirichlet values at time ``t``."""
    mesh = dofmap.mesh
    u = np.zeros(dofmap.n_u)
    p = np.zeros(dofmap.n_p)
    if data.u is not None and dofmap.u_fixed.any():
        full = interpolate_into_Vh(lambda x: data.u(x, t), mesh)
        u[dofmap.u_fixed] = full[dofmap.u_fixed]
    if data.p is not None and dofmap.p_fixed.any():
        full = interpolate_into_Qh(lambda x: data.p(x, t), mesh)
        p[dofmap.p_fixed] = full[dofmap.p_fixed]
    return u, p
