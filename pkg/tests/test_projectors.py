import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from vembiot.assembly import PhysicalParams, local_a1
from vembiot.mesh import MeshError, polygon_geometry
from vembiot.projectors import (
    RIGID_MODES,
    build_pack,
    build_packs,
    build_stabilization,
    dump_pack_csv,
    eval_vector_poly,
    local_scalar_dofs,
    local_vector_dofs,
)

TOL = 1e-12


def _p1(rng):
    A, b = rng.normal(size=(2, 2)), rng.normal(size=2)
    return (lambda x: np.atleast_2d(x) @ A.T + b), A


def test_vector_p1_reproduction_every_cell(family_mesh):
    rng = np.random.default_rng(0)
    for pack in build_packs(family_mesh):
        f, A = _p1(rng)
        v = local_vector_dofs(pack.geom, f)
        coeffs = pack.pi_eps @ v
        q = pack.quad.points
        assert np.abs(eval_vector_poly(pack.basis, coeffs, q) - f(q)).max() < TOL
        assert pack.div_row @ v == pytest.approx(np.trace(A), abs=TOL)
        avg = pack.quad.weights @ f(q) / pack.geom.area
        assert np.abs(pack.pi00_vec @ v - avg).max() < TOL


def test_scalar_p1_reproduction_and_enhancement(family_mesh):
    rng = np.random.default_rng(1)
    for pack in build_packs(family_mesh):
        a = rng.normal(size=3)
        f = lambda x: a[0] + a[1] * x[:, 0] + a[2] * x[:, 1]
        q = local_scalar_dofs(pack.geom, f)
        for P in (pack.pi_nabla, pack.pi0_scalar):
            vals = pack.basis.values(pack.quad.points) @ (P @ q)
            assert np.abs(vals - f(pack.quad.points)).max() < TOL
        # enhanced space: L2 and energy projections coincide on all of Q_h
        assert np.abs(pack.pi0_scalar - pack.pi_nabla).max() < TOL


def test_rigid_motions_are_reproduced_with_zero_strain(family_mesh):
    for pack in build_packs(family_mesh):
        for mode in RIGID_MODES:
            v = pack.dof_matrix_v @ mode
            assert np.abs(pack.pi_eps @ v - mode).max() < TOL
            assert abs(pack.div_row @ v) < TOL
            assert np.abs(local_a1(pack, PhysicalParams(1, 1, 1, 1, 1)) @ v).max() < 1e-10


@pytest.mark.parametrize("kind,kernel", [("S1", 6), ("S2", 3), ("S0", 3)])
def test_stabilization_kernels(pentagon, kind, kernel):
    pack = build_pack(pentagon)
    S = build_stabilization(pack, kind, 1.0)
    assert np.allclose(S, S.T)
    ev = np.linalg.eigvalsh(S)
    assert ev.min() > -1e-12
    assert (ev < 1e-10 * ev.max()).sum() == kernel
    D = pack.dof_matrix_v if kind == "S1" else pack.dof_matrix_q
    assert np.abs(S @ D).max() < 1e-12


def test_stabilization_rejects_bad_input(pentagon):
    pack = build_pack(pentagon)
    with pytest.raises(ValueError):
        build_stabilization(pack, "S1", 0.0)
    with pytest.raises(ValueError):
        build_stabilization(pack, "S9", 1.0)


def test_degenerate_element_raises():
    g = polygon_geometry(np.array([[0, 0], [1, 0], [1, 1e-13], [0, 1e-13]]))
    with pytest.raises(MeshError):
        build_pack(g)


convex = st.lists(st.floats(0, 2 * np.pi - 1e-3), min_size=3, max_size=8, unique=True).filter(
    lambda a: np.min(np.diff(np.sort(a + [min(a) + 2 * np.pi]))) > 0.25
)


@settings(max_examples=30, deadline=None)
@given(convex, st.integers(0, 2**31))
def test_reproduction_on_random_convex_polygons(angles, seed):
    ang = np.sort(angles)
    g = polygon_geometry(np.column_stack([2 + 0.5 * np.cos(ang), 1 + 0.5 * np.sin(ang)]))
    pack = build_pack(g)
    f, _ = _p1(np.random.default_rng(seed))
    v = local_vector_dofs(g, f)
    assert np.abs(pack.dof_matrix_v @ (pack.pi_eps @ v) - v).max() < 1e-10


# ------------------------------------------------------- brute-force oracle


def _edge_traces(g, v):
    """Callables s -> (v.n, v.t) on every edge for local dofs v."""
    N = g.n_vertices
    V = v[: 2 * N].reshape(N, 2)
    out = []
    for i in range(N):
        j = (i + 1) % N
        n, t = g.normals[i], g.tangents[i]
        a, m, b = V[i] @ n, v[2 * N + i], V[j] @ n
        # quadratic through (0, a), (1/2, m), (1, b)
        vn = lambda s, a=a, m=m, b=b: a * (1 - s) * (1 - 2 * s) + 4 * m * s * (1 - s) + b * s * (2 * s - 1)
        ta, tb = V[i] @ t, V[j] @ t
        vt = lambda s, ta=ta, tb=tb: ta * (1 - s) + tb * s
        out.append((vn, vt))
    return out


def _bquad(f):
    return quad(f, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def _oracle(g, v, mu):
    N = g.n_vertices
    c, h = g.centroid, g.diameter
    traces = _edge_traces(g, v)
    pos = lambda i, s: g.vertices[i] + s * (g.vertices[(i + 1) % N] - g.vertices[i])
    div = sum(g.lengths[i] * _bquad(traces[i][0]) for i in range(N)) / g.area
    mean = np.array([
        sum(g.lengths[i] * _bquad(lambda s, i=i: traces[i][0](s) * (pos(i, s)[k] - c[k])) for i in range(N))
        for k in range(2)
    ]) / g.area
    # vector monomials as explicit fields and their constant strains
    fields = [
        lambda x: np.array([1.0, 0.0]), lambda x: np.array([(x[0] - c[0]) / h, 0.0]),
        lambda x: np.array([(x[1] - c[1]) / h, 0.0]), lambda x: np.array([0.0, 1.0]),
        lambda x: np.array([0.0, (x[0] - c[0]) / h]), lambda x: np.array([0.0, (x[1] - c[1]) / h]),
    ]
    grads = [np.zeros((2, 2)) for _ in range(6)]
    grads[1][0, 0] = grads[2][0, 1] = grads[4][1, 0] = grads[5][1, 1] = 1 / h
    strains = [0.5 * (G + G.T) for G in grads]
    gram = g.area * np.array([[np.sum(a * b) for b in strains] for a in strains])
    rigid = [fields[0], fields[3], lambda x: np.array([-(x[1] - c[1]) / h, (x[0] - c[0]) / h])]
    smodes = [strains[1], strains[5], strains[2] + strains[4]]
    A = np.zeros((6, 6))
    rhs = np.zeros(6)
    V = v[: 2 * N].reshape(N, 2)
    for j, r in enumerate(rigid):
        for k in range(6):
            A[j, k] = np.mean([fields[k](x) @ r(x) for x in g.vertices])
        rhs[j] = np.mean([V[a] @ r(x) for a, x in enumerate(g.vertices)])
    for j, E in enumerate(smodes):
        A[3 + j] = [np.sum(E * s) * g.area for s in strains]
        tot = 0.0
        for i in range(N):
            n, t = g.normals[i], g.tangents[i]
            En = E @ n
            tot += g.lengths[i] * _bquad(lambda s, i=i: traces[i][0](s) * (En @ n) + traces[i][1](s) * (En @ t))
        rhs[3 + j] = tot
    coef = np.linalg.solve(A, rhs)
    # dof values of the projection, for the stabilization
    mids = g.midpoints
    Pv = np.concatenate([
        np.ravel([sum(coef[k] * fields[k](x) for k in range(6)) for x in g.vertices]),
        [sum(coef[k] * fields[k](x) for k in range(6)) @ g.normals[i] for i, x in enumerate(mids)],
    ])
    return div, mean, coef, gram, Pv


def test_single_element_oracle(pentagon):
    g = pentagon
    pack = build_pack(g)
    mu = 0.7
    params = PhysicalParams(mu=mu, lam=1, alpha=1, c0=1, eta=1)
    A_local = local_a1(pack, params)
    rng = np.random.default_rng(42)
    vs = rng.normal(size=(3, 3 * g.n_vertices))
    data = [_oracle(g, v, mu) for v in vs]
    for v, (div, mean, coef, gram, Pv) in zip(vs, data):
        # b1 row: -int_K div v
        assert -g.area * pack.div_row @ v == pytest.approx(-g.area * div, abs=1e-12)
        assert np.abs(pack.pi00_vec @ v - mean).max() < 1e-12
        assert np.abs(pack.pi_eps @ v - coef).max() < 1e-12
    # bilinear form with the same stabilization recipe
    for (v, (_, _, cv, gram, Pv)) in zip(vs, data):
        for (w, (_, _, cw, _, Pw)) in zip(vs, data):
            ref = 2 * mu * cv @ gram @ cw + 2 * mu * (v - Pv) @ (w - Pw)
            assert v @ A_local @ w == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_dump_pack_csv(tmp_path, pentagon):
    p = tmp_path / "pack.csv"
    dump_pack_csv(p, build_pack(pentagon))
    text = p.read_text()
    for name in ("H", "pi_nabla", "pi_eps", "pi00_vec", "div_row"):
        assert f"# {name}" in text
