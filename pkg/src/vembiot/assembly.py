"""
Global assembly of the discrete forms and load functionals.

All local matrices are built from a :class:`~vembiot.projectors.ProjectorPack`
and scattered with coordinate lists into CSR blocks. Signs relate local
outward-normal edge dofs to the global edge normal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .dofspace import BoundaryData, ConfigurationError, DofMap
from .polykernel import GAUSS_LOBATTO3
from .projectors import ProjectorPack, build_stabilization, vector_strains


@dataclass(frozen=True)
class PhysicalParams:
    mu: float
    lam: float
    alpha: float
    c0: float
    eta: float
    kappa: float | np.ndarray | Callable = 1.0
    rho: float = 1.0
    # multipliers on the default stabilization scales 2mu, kappa/eta, c0+alpha^2/lam
    s1: float = 1.0
    s2: float = 1.0
    s0: float = 1.0

    def __post_init__(self):
        if not (self.mu > 0 and self.lam > 0 and self.eta > 0 and self.rho > 0):
            raise ValueError("mu, lambda, eta and rho must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.c0 < 0:
            raise ValueError("c0 must be non-negative")
        if min(self.s1, self.s2, self.s0) <= 0:
            raise ValueError("stabilization multipliers must be positive")
        if not callable(self.kappa):
            self.kappa_at(np.zeros((1, 2)))

    @classmethod
    def from_young(cls, E: float, nu: float, **kw) -> "PhysicalParams":
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 + 2 * nu)
        return cls(mu=mu, lam=lam, **kw)

    @property
    def storage(self) -> float:
        return self.c0 + self.alpha**2 / self.lam

    def kappa_at(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        k = self.kappa(pts) if callable(self.kappa) else self.kappa
        k = np.asarray(k, dtype=float)
        if k.ndim == 0:
            k = k * np.eye(2)
        k = np.broadcast_to(k, (len(pts), 2, 2))
        if not np.allclose(k, k.transpose(0, 2, 1)) or np.any(np.linalg.eigvalsh(k)[:, 0] <= 0):
            raise ValueError("kappa must be symmetric positive definite")
        return k

    def replace(self, **kw) -> "PhysicalParams":
        d = self.__dict__.copy()
        d.update(kw)
        return PhysicalParams(**d)


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, block):
        r, c = np.meshgrid(rows, cols, indexing="ij")
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(np.asarray(block).ravel())

    def tocsr(self, shape) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(shape)
        m = sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))), shape=shape
        )
        return m.tocsr()


def local_a1(pack: ProjectorPack, params: PhysicalParams) -> np.ndarray:
    P = pack.pi_eps
    return 2 * params.mu * (P.T @ pack.strain_gram @ P) + build_stabilization(pack, "S1", 2 * params.mu * params.s1)


def local_a2(pack: ProjectorPack, params: PhysicalParams) -> np.ndarray:
    q = pack.quad
    K = params.kappa_at(q.points)
    grads = pack.basis.gradients(q.points)  # (nq, 3, 2)
    Gk = np.einsum("q,qai,qij,qbj->ab", q.weights, grads, K, grads)
    P = pack.pi_nabla
    kbar = 0.5 * np.trace(params.kappa_at(pack.geom.centroid)[0])
    return (P.T @ Gk @ P) / params.eta + build_stabilization(pack, "S2", kbar / params.eta * params.s2)


def local_a2_tilde(pack: ProjectorPack, params: PhysicalParams) -> np.ndarray:
    P = pack.pi0_scalar
    w = params.storage
    return w * (P.T @ pack.H @ P) + build_stabilization(pack, "S0", w * params.s0)


def assemble_a1(dofmap: DofMap, packs, params) -> sp.csr_matrix:
    T = _Triplets()
    for c, pack in enumerate(packs):
        s = dofmap.u_signs[c]
        T.add(dofmap.u_dofs[c], dofmap.u_dofs[c], local_a1(pack, params) * np.outer(s, s))
    return T.tocsr((dofmap.n_u, dofmap.n_u))


def assemble_a2(dofmap: DofMap, packs, params) -> sp.csr_matrix:
    T = _Triplets()
    for c, pack in enumerate(packs):
        d = dofmap.p_dofs(c)
        T.add(d, d, local_a2(pack, params))
    return T.tocsr((dofmap.n_p, dofmap.n_p))


def assemble_a2_tilde(dofmap: DofMap, packs, params) -> sp.csr_matrix:
    T = _Triplets()
    for c, pack in enumerate(packs):
        d = dofmap.p_dofs(c)
        T.add(d, d, local_a2_tilde(pack, params))
    return T.tocsr((dofmap.n_p, dofmap.n_p))


def assemble_b1(dofmap: DofMap, packs) -> sp.csr_matrix:
    """``B1[K, v] = -int_K div v``, exact since div v is constant on K."""
    T = _Triplets()
    for c, pack in enumerate(packs):
        T.add([c], dofmap.u_dofs[c], -pack.geom.area * pack.div_row * dofmap.u_signs[c])
    return T.tocsr((dofmap.n_z, dofmap.n_u))


def assemble_b2(dofmap: DofMap, packs, params) -> sp.csr_matrix:
    """``B2[K, q] = (alpha/lam) int_K Pi0 q``."""
    T = _Triplets()
    for c, pack in enumerate(packs):
        T.add([c], dofmap.p_dofs(c), params.alpha / params.lam * (pack.H[0] @ pack.pi0_scalar))
    return T.tocsr((dofmap.n_z, dofmap.n_p))


def assemble_a3(dofmap: DofMap, packs, params) -> sp.csr_matrix:
    return sp.diags(np.array([p.geom.area for p in packs]) / params.lam).tocsr()


@dataclass(frozen=True, eq=False)
class BlockSystem:
    dofmap: DofMap
    packs: list
    params: PhysicalParams
    a1: sp.csr_matrix
    b1: sp.csr_matrix
    a2: sp.csr_matrix
    a2t: sp.csr_matrix
    b2: sp.csr_matrix
    a3: sp.csr_matrix

    def matrix(self, dt: float) -> sp.csr_matrix:
        """Symmetric indefinite form of the backward Euler operator.

        The pressure row is negated so that the coupling blocks appear as
        ``B1`` and ``B2`` on both sides of the diagonal.
        """
        return sp.bmat(
            [
                [self.a1, None, self.b1.T],
                [None, -(self.a2t + dt * self.a2), self.b2.T],
                [self.b1, self.b2, -self.a3],
            ],
            format="csr",
        )

    def loads(self, t: float, body=None, source=None, boundary: BoundaryData | None = None):
        return assemble_loads(self.dofmap, self.packs, self.params, t, body, source, boundary)


def assemble_system(dofmap: DofMap, packs, params: PhysicalParams) -> BlockSystem:
    return BlockSystem(
        dofmap,
        packs,
        params,
        assemble_a1(dofmap, packs, params),
        assemble_b1(dofmap, packs),
        assemble_a2(dofmap, packs, params),
        assemble_a2_tilde(dofmap, packs, params),
        assemble_b2(dofmap, packs, params),
        assemble_a3(dofmap, packs, params),
    )


def _boundary_edge_frame(mesh, e):
    c = mesh.edge_cells[e, 0]
    i = int(np.flatnonzero(mesh.cell_edges[c] == e)[0])
    g = mesh.geometries[c]
    a = g.vertices[i]
    b = g.vertices[(i + 1) % g.n_vertices]
    loop = mesh.cells[c]
    return c, i, int(loop[i]), int(loop[(i + 1) % len(loop)]), a, b, g.normals[i], g.tangents[i], g.lengths[i]


def assemble_loads(dofmap: DofMap, packs, params: PhysicalParams, t: float, body=None, source=None,
                   boundary: BoundaryData | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand sides ``(F + traction, G + flux)`` at time ``t``.

    ``body(x, t) -> (npts, 2)`` enters through its cell average; ``source(x, t)``
    through its L2 projection onto P1.
    """
    mesh = dofmap.mesh
    f_u = np.zeros(dofmap.n_u)
    f_p = np.zeros(dofmap.n_p)
    for c, pack in enumerate(packs):
        q = pack.quad
        area = q.weights.sum()
        if body is not None:
            bbar = q.weights @ np.asarray(body(q.points, t), dtype=float) / area
            local = params.rho * area * (bbar @ pack.pi00_vec)
            dofmap.scatter_u(c, local, f_u)
        if source is not None:
            vals = np.asarray(source(q.points, t), dtype=float) * np.ones(len(q.weights))
            moments = pack.basis.values(q.points).T @ (q.weights * vals)
            np.add.at(f_p, dofmap.p_dofs(c), moments @ pack.pi0_scalar)
    if boundary is None:
        return f_u, f_p
    nv = mesh.n_vertices
    w = GAUSS_LOBATTO3.weights
    nodes = GAUSS_LOBATTO3.nodes
    for tag, fn in boundary.traction.items():
        if tag not in dofmap.bc or dofmap.bc[tag].u != "traction":
            raise ConfigurationError(f"traction given on tag {tag!r} which is not a traction boundary")
    for tag, fn in boundary.flux.items():
        if tag not in dofmap.bc or dofmap.bc[tag].p != "flux":
            raise ConfigurationError(f"flux given on tag {tag!r} which is not a flux boundary")
    for e, tag in mesh.boundary_tags.items():
        trac = boundary.traction.get(tag)
        flux = boundary.flux.get(tag)
        if trac is None and flux is None:
            continue
        c, i, va, vb, a, b, n, tg, L = _boundary_edge_frame(mesh, e)
        pts = a + nodes[:, None] * (b - a)
        if trac is not None and dofmap.bc[tag].u == "traction":
            h = np.asarray(trac(pts, t, n), dtype=float).reshape(3, 2)
            hn, ht = h @ n, h @ tg
            coef_a = L * (w[0] * hn[0] * n + (w[0] * ht[0] + 0.5 * w[1] * ht[1]) * tg)
            coef_b = L * (w[2] * hn[2] * n + (w[2] * ht[2] + 0.5 * w[1] * ht[1]) * tg)
            f_u[[2 * va, 2 * va + 1]] += coef_a
            f_u[[2 * vb, 2 * vb + 1]] += coef_b
            f_u[2 * nv + e] += mesh.edge_signs(c)[i] * L * w[1] * hn[1]
        if flux is not None and dofmap.bc[tag].p == "flux":
            g = np.asarray(flux(pts, t, n), dtype=float) * np.ones(3)
            f_p[va] += L * (w[0] * g[0] + 0.5 * w[1] * g[1])
            f_p[vb] += L * (w[2] * g[2] + 0.5 * w[1] * g[1])
    return f_u, f_p


def export_matrix_market(system: BlockSystem, directory) -> None:
    import os

    import scipy.io

    os.makedirs(directory, exist_ok=True)
    for name in ("a1", "b1", "a2", "a2t", "b2", "a3"):
        scipy.io.mmwrite(os.path.join(directory, f"{name}.mtx"), getattr(system, name))


def strain_energy(system: BlockSystem, u: np.ndarray) -> float:
    """``||eps(Pi_eps u_h)||^2`` summed over cells (projected strains only)."""
    total = 0.0
    dm = system.dofmap
    for c, pack in enumerate(system.packs):
        coeffs = pack.pi_eps @ dm.gather_u(c, u)
        eps = np.tensordot(coeffs, vector_strains(pack.basis.diameter), axes=(0, 0))
        total += pack.geom.area * float((eps * eps).sum())
    return total
