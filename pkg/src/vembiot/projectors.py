"""
Element projectors for the lowest-order virtual spaces.

Local dof ordering for the displacement space ``V_h(K)`` (size ``3N``):
``[v_x(V_0), v_y(V_0), ..., v_x(V_{N-1}), v_y(V_{N-1}), d_0, ..., d_{N-1}]``
where ``d_i`` is the outward normal component at the midpoint of edge
``V_i -> V_{i+1}``. The pressure space ``Q_h(K)`` uses the ``N`` vertex values.

Vector polynomial coefficients are ordered ``[(m_0,0), (m_1,0), (m_2,0),
(0,m_0), (0,m_1), (0,m_2)]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .mesh import ElementGeometry, MeshError, PolyMesh
from .polykernel import (
    GAUSS_LOBATTO3,
    PolygonQuadrature,
    ScaledMonomialBasis,
    monomial_moments,
    polygon_quadrature,
)

# rigid motions in vector-monomial coefficients: x-shift, y-shift, rotation (-eta, xi)
RIGID_MODES = np.array(
    [
        [1.0, 0, 0, 0, 0, 0],
        [0, 0, 0, 1.0, 0, 0],
        [0, 0, -1.0, 0, 1.0, 0],
    ]
)
# complementary modes with independent constant strains: (xi,0), (0,eta), (eta,xi)
_STRAIN_MODES = np.array(
    [
        [0, 1.0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 1.0],
        [0, 0, 1.0, 0, 1.0, 0],
    ]
)

_PIVOT_TOL = 1e-12


def _solve_local(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    lu, piv = scipy.linalg.lu_factor(A)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= _PIVOT_TOL * pivots.max():
        raise MeshError("singular local projector system; degenerate element")
    return scipy.linalg.lu_solve((lu, piv), B)


def vector_strains(h: float) -> np.ndarray:
    """(6, 2, 2) constant symmetric gradients of the vector monomials."""
    eps = np.zeros((6, 2, 2))
    eps[1, 0, 0] = 1.0
    eps[2, 0, 1] = eps[2, 1, 0] = 0.5
    eps[4, 0, 1] = eps[4, 1, 0] = 0.5
    eps[5, 1, 1] = 1.0
    return eps / h


def vector_gradients(h: float) -> np.ndarray:
    """(6, 2, 2) constant full gradients ``G[k, component, direction]``."""
    g = np.zeros((6, 2, 2))
    g[1, 0, 0] = g[2, 0, 1] = g[4, 1, 0] = g[5, 1, 1] = 1.0
    return g / h


def eval_vector_poly(basis: ScaledMonomialBasis, coeffs: np.ndarray, pts) -> np.ndarray:
    vals = basis.values(pts)
    return np.column_stack([vals @ coeffs[:3], vals @ coeffs[3:]])


def local_vector_dofs(geom: ElementGeometry, f) -> np.ndarray:
    """Local ``V_h(K)`` dofs of a vector field ``f(pts) -> (npts, 2)``."""
    vv = np.asarray(f(geom.vertices), dtype=float)
    mm = np.asarray(f(geom.midpoints), dtype=float)
    return np.concatenate([vv.ravel(), (mm * geom.normals).sum(axis=1)])


def local_scalar_dofs(geom: ElementGeometry, f) -> np.ndarray:
    return np.asarray(f(geom.vertices), dtype=float).reshape(-1)


@dataclass(frozen=True, eq=False)
class ProjectorPack:
    geom: ElementGeometry
    basis: ScaledMonomialBasis
    quad: PolygonQuadrature
    H: np.ndarray  # (3, 3) monomial mass matrix
    pi_nabla: np.ndarray  # (3, N)
    pi0_scalar: np.ndarray  # (3, N)
    dof_matrix_q: np.ndarray  # (N, 3)
    pi_eps: np.ndarray  # (6, 3N)
    dof_matrix_v: np.ndarray  # (3N, 6)
    div_row: np.ndarray  # (3N,)
    pi00_vec: np.ndarray  # (2, 3N)
    strain_gram: np.ndarray  # (6, 6) int_K eps(p_i):eps(p_j)

    @property
    def n(self) -> int:
        return self.geom.n_vertices


def build_pi_nabla(geom: ElementGeometry, basis: ScaledMonomialBasis) -> np.ndarray:
    """Energy projection of ``Q_h(K)`` onto P1, as coefficients per vertex dof.

    Gradient rows use ``int_K grad(Pq).grad(m) = int_dK q grad(m).n`` with the
    trapezoid rule on each edge; the constant is fixed by matching the
    boundary mean.
    """
    N = geom.n_vertices
    h = basis.diameter
    L = geom.lengths
    nxt = np.roll(np.arange(N), -1)
    grads = np.eye(2) / h  # grad m_1, grad m_2
    G = np.zeros((3, 3))
    B = np.zeros((3, N))
    mv = basis.values(geom.vertices)
    G[0] = (0.5 * L[:, None] * (mv + mv[nxt])).sum(axis=0) / geom.perimeter
    B[0] = 0.5 * (L + np.roll(L, 1)) / geom.perimeter
    G[1:, 1:] = geom.area * grads @ grads.T
    for a in range(2):
        flux = 0.5 * L * (geom.normals @ grads[a])
        B[1 + a] = flux + np.roll(flux, 1)
    return _solve_local(G, B)


def build_pi0_scalar(H: np.ndarray, pi_nabla: np.ndarray) -> np.ndarray:
    """L2 projection onto P1 using the enhanced moments ``int q m_a = int (P^grad q) m_a``."""
    return _solve_local(H, H @ pi_nabla)


def build_pi_eps(geom: ElementGeometry, basis: ScaledMonomialBasis, strain_gram: np.ndarray) -> np.ndarray:
    N = geom.n_vertices
    h = basis.diameter
    mv = basis.values(geom.vertices)  # (N, 3)
    # vector basis evaluated at vertices: (N, 6, 2)
    pv = np.zeros((N, 6, 2))
    pv[:, :3, 0] = mv
    pv[:, 3:, 1] = mv
    rigid_at_v = np.einsum("jk,nkc->njc", RIGID_MODES, pv)  # (N, 3, 2)
    A = np.zeros((6, 6))
    B = np.zeros((6, 3 * N))
    A[:3] = np.einsum("nkc,njc->jk", pv, rigid_at_v) / N
    B[:3, : 2 * N] = rigid_at_v.transpose(1, 0, 2).reshape(3, 2 * N) / N
    A[3:] = _STRAIN_MODES @ strain_gram
    eps = vector_strains(h)
    nxt = np.roll(np.arange(N), -1)
    for j in range(3):
        e_s = np.tensordot(_STRAIN_MODES[j], eps, axes=(0, 0))
        traction = geom.normals @ e_s  # eps n per edge (symmetric)
        tn = (traction * geom.normals).sum(axis=1)
        tt = (traction * geom.tangents).sum(axis=1)
        L = geom.lengths
        # per-edge endpoint weight on the vertex vector: trapezoid on v.t, Lobatto on v.n
        w_end = 0.5 * L[:, None] * tt[:, None] * geom.tangents + (L / 6.0)[:, None] * tn[:, None] * geom.normals
        row = np.zeros((N, 2))
        np.add.at(row, np.arange(N), w_end)
        np.add.at(row, nxt, w_end)
        B[3 + j, : 2 * N] = row.ravel()
        B[3 + j, 2 * N :] = 4.0 / 6.0 * L * tn
    return _solve_local(A, B)


def build_div_row(geom: ElementGeometry) -> np.ndarray:
    """Constant divergence of a ``V_h(K)`` function from its boundary flux."""
    N = geom.n_vertices
    L = geom.lengths
    row = np.zeros(3 * N)
    w = (GAUSS_LOBATTO3.weights[0] * L)[:, None] * geom.normals
    vert = np.zeros((N, 2))
    np.add.at(vert, np.arange(N), w)
    np.add.at(vert, np.roll(np.arange(N), -1), w)
    row[: 2 * N] = vert.ravel()
    row[2 * N :] = GAUSS_LOBATTO3.weights[1] * L
    return row / geom.area


def build_pi00_vec(geom: ElementGeometry, div_row: np.ndarray, first_moments=None) -> np.ndarray:
    """Cell average of each displacement component.

    Uses ``int_K v_i = int_dK (v.n)(x_i - c_i) - int_K div(v) (x_i - c_i)``
    with ``c`` the centroid; ``v.n`` is quadratic on each edge so the
    three-point Lobatto rule is exact.
    """
    N = geom.n_vertices
    L = geom.lengths
    c = geom.centroid
    nxt = np.roll(np.arange(N), -1)
    wl, wm = GAUSS_LOBATTO3.weights[0], GAUSS_LOBATTO3.weights[1]
    out = np.zeros((2, 3 * N))
    for i in range(2):
        da = geom.vertices[:, i] - c[i]
        db = geom.vertices[nxt, i] - c[i]
        dm = geom.midpoints[:, i] - c[i]
        vert = np.zeros((N, 2))
        np.add.at(vert, np.arange(N), (wl * L * da)[:, None] * geom.normals)
        np.add.at(vert, nxt, (wl * L * db)[:, None] * geom.normals)
        out[i, : 2 * N] = vert.ravel()
        out[i, 2 * N :] = wm * L * dm
        if first_moments is not None:
            out[i] -= first_moments[i] * div_row
    return out / geom.area


def build_pack(geom: ElementGeometry, exactness: int = 4) -> ProjectorPack:
    basis = ScaledMonomialBasis.of(geom, 1)
    quad = polygon_quadrature(geom, exactness)
    H = monomial_moments(basis, quad)
    h = basis.diameter
    eps = vector_strains(h)
    strain_gram = geom.area * np.einsum("iab,jab->ij", eps, eps)
    pi_nabla = build_pi_nabla(geom, basis)
    pi0 = build_pi0_scalar(H, pi_nabla)
    Dq = basis.values(geom.vertices)
    pi_eps = build_pi_eps(geom, basis, strain_gram)
    N = geom.n_vertices
    Dv = np.zeros((3 * N, 6))
    Dv[0 : 2 * N : 2, :3] = Dq
    Dv[1 : 2 * N : 2, 3:] = Dq
    mm = basis.values(geom.midpoints)
    Dv[2 * N :, :3] = mm * geom.normals[:, :1]
    Dv[2 * N :, 3:] = mm * geom.normals[:, 1:]
    div_row = build_div_row(geom)
    first = h * H[0, 1:3]  # int_K (x - c)
    pi00 = build_pi00_vec(geom, div_row, first)
    return ProjectorPack(geom, basis, quad, H, pi_nabla, pi0, Dq, pi_eps, Dv, div_row, pi00, strain_gram)


def build_packs(mesh: PolyMesh, exactness: int = 4) -> list[ProjectorPack]:
    return [build_pack(g, exactness) for g in mesh.geometries]


def build_stabilization(pack: ProjectorPack, kind: str, sigma: float) -> np.ndarray:
    """``sigma (I - D P)^T (I - D P)``; ``S0`` carries the extra area factor."""
    if not sigma > 0.0:
        raise ValueError("stabilization scale must be positive")
    if kind == "S1":
        P, D = pack.pi_eps, pack.dof_matrix_v
    elif kind == "S2":
        P, D = pack.pi_nabla, pack.dof_matrix_q
    elif kind == "S0":
        P, D = pack.pi0_scalar, pack.dof_matrix_q
        sigma = sigma * pack.geom.area
    else:
        raise ValueError(f"unknown stabilization {kind!r}")
    R = np.eye(D.shape[0]) - D @ P
    return sigma * (R.T @ R)


def dump_pack_csv(path, pack: ProjectorPack) -> None:
    with open(path, "w") as fh:
        for name in ("H", "pi_nabla", "pi0_scalar", "pi_eps", "pi00_vec"):
            fh.write(f"# {name}\n")
            for row in np.atleast_2d(getattr(pack, name)):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        fh.write("# div_row\n" + ",".join(f"{v:.17g}" for v in pack.div_row) + "\n")
