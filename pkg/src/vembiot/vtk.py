"""Legacy ASCII VTK output for polygonal meshes."""
from __future__ import annotations

import numpy as np

from .mesh import PolyMesh


def write_polydata(path, mesh: PolyMesh, point_data: dict | None = None, cell_data: dict | None = None,
                   displacement: np.ndarray | None = None, warp: float = 0.0, title: str = "vembiot") -> None:
    """Write ``mesh`` as POLYDATA polygons.

    Arrays of shape ``(n,)`` are written as SCALARS and ``(n, 2)`` as
    VECTORS (padded with a zero third component). With ``warp > 0`` the
    points are moved by ``warp * displacement``.
    """
    pts = mesh.vertices.copy()
    if warp and displacement is not None:
        pts = pts + warp * displacement
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA", f"POINTS {len(pts)} double"]
    lines += [f"{x:.12g} {y:.12g} 0" for x, y in pts]
    size = sum(len(c) + 1 for c in mesh.cells)
    lines.append(f"POLYGONS {mesh.n_cells} {size}")
    lines += [" ".join(str(v) for v in [len(c), *c]) for c in mesh.cells]
    for header, n, data in (("POINT_DATA", mesh.n_vertices, point_data), ("CELL_DATA", mesh.n_cells, cell_data)):
        if not data:
            continue
        lines.append(f"{header} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != n:
                raise ValueError(f"array {name!r} has {arr.shape[0]} entries, expected {n}")
            if arr.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.12g}" for v in arr]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{a:.12g} {b:.12g} 0" for a, b in arr[:, :2]]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_state(path, system, state, warp: float = 0.0) -> None:
    """Displacement, |u| and pressure at vertices; total pressure per cell."""
    nv = system.dofmap.mesh.n_vertices
    u = state.u[: 2 * nv].reshape(nv, 2)
    write_polydata(
        path,
        system.dofmap.mesh,
        point_data={"displacement": u, "displacement_magnitude": np.linalg.norm(u, axis=1), "pressure": state.p},
        cell_data={"total_pressure": state.psi},
        displacement=u,
        warp=warp,
        title=f"t={state.t:.6g}",
    )
