import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vembiot.mesh import MeshError, polygon_geometry
from vembiot.polykernel import (
    GAUSS_LOBATTO3,
    TRAPEZOID,
    ScaledMonomialBasis,
    dump_csv,
    edge_integral,
    monomial_moments,
    polygon_quadrature,
    polygon_triangles,
)


def green_moment(verts, a, b):
    """int_K x^a y^b through the boundary integral of x^(a+1) y^b / (a+1) dy."""
    g, w = np.polynomial.legendre.leggauss(8)
    s, w = 0.5 * (g + 1), 0.5 * w
    total = 0.0
    for p, q in zip(verts, np.roll(verts, -1, axis=0)):
        pts = p + s[:, None] * (q - p)
        total += (w * pts[:, 0] ** (a + 1) * pts[:, 1] ** b).sum() * (q[1] - p[1])
    return total / (a + 1)


def convex_polygon(draw_angles, radius=1.0, center=(0.3, -0.2)):
    ang = np.sort(np.asarray(draw_angles))
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


angles = st.lists(st.floats(0, 2 * np.pi - 1e-3), min_size=3, max_size=9, unique=True).filter(
    lambda a: np.min(np.diff(np.sort(a + [min(a) + 2 * np.pi]))) > 0.2
)


@settings(max_examples=40, deadline=None)
@given(angles)
def test_quadrature_matches_green_theorem(a):
    verts = convex_polygon(a)
    g = polygon_geometry(verts)
    q = polygon_quadrature(g, 4)
    for i in range(5):
        for j in range(5 - i):
            ref = green_moment(verts, i, j)
            assert q.integrate(q.points[:, 0] ** i * q.points[:, 1] ** j) == pytest.approx(ref, rel=1e-12, abs=1e-13)


def test_quadrature_on_nonconvex_polygon_uses_ear_clipping():
    verts = np.array([[0, 0], [3, 0], [3, 3], [2.9, 0.2], [0, 3.0]])
    g = polygon_geometry(verts)
    tris = polygon_triangles(g)
    assert len(tris) == 3
    q = polygon_quadrature(g, 4)
    assert np.all(q.weights > 0)
    for i, j in [(0, 0), (1, 0), (2, 1), (0, 4), (2, 2)]:
        assert q.integrate(q.points[:, 0] ** i * q.points[:, 1] ** j) == pytest.approx(green_moment(verts, i, j), rel=1e-12)


def test_quadrature_exactness_limit(pentagon):
    with pytest.raises(ValueError):
        polygon_quadrature(pentagon, 9)


def test_monomial_basis_values_and_gradients(pentagon):
    b = ScaledMonomialBasis.of(pentagon, 2)
    assert b.dim == 6
    x = np.array([[0.4, 0.5], [0.9, 0.3]])
    s = (x - pentagon.centroid) / pentagon.diameter
    expect = np.column_stack([np.ones(2), s[:, 0], s[:, 1], s[:, 0] ** 2, s[:, 0] * s[:, 1], s[:, 1] ** 2])
    assert np.allclose(b.values(x), expect)
    eps = 1e-6
    fd = (b.values(x + [eps, 0]) - b.values(x - [eps, 0])) / (2 * eps)
    assert np.allclose(b.gradients(x)[:, :, 0], fd, atol=1e-8)
    with pytest.raises(ValueError):
        ScaledMonomialBasis.of(pentagon, 3)


def test_mass_matrix_is_spd_and_exact(pentagon):
    b = ScaledMonomialBasis.of(pentagon, 1)
    H = monomial_moments(b, polygon_quadrature(pentagon))
    assert np.allclose(H, H.T)
    assert np.linalg.eigvalsh(H)[0] > 0
    assert H[0, 0] == pytest.approx(pentagon.area)
    # first moments about the centroid vanish
    assert abs(H[0, 1]) < 1e-14 and abs(H[0, 2]) < 1e-14


def test_degenerate_element_is_rejected():
    b = ScaledMonomialBasis(np.zeros(2), 1.0, 1)

    class Q:
        points = np.array([[0.0, 0.0], [1.0, 0.0]])
        weights = np.array([0.5, 0.5])

    with pytest.raises(MeshError):
        monomial_moments(b, Q())


def test_edge_rules():
    a, b = np.array([0.0, 1.0]), np.array([2.0, 3.0])
    L = np.hypot(2, 2)
    lin = lambda p: 1 + p[:, 0] + p[:, 1]
    cub = lambda p: p[:, 0] ** 3
    assert edge_integral(a, b, TRAPEZOID, lin) == pytest.approx(L * 4.0)
    assert edge_integral(a, b, GAUSS_LOBATTO3, lin) == pytest.approx(L * 4.0)
    # Simpson is exact for cubics along the edge: int_0^1 (2s)^3 ds = 2
    assert edge_integral(a, b, GAUSS_LOBATTO3, cub) == pytest.approx(L * 2.0)
    assert GAUSS_LOBATTO3.weights.sum() == pytest.approx(1.0)


def test_dump_csv(tmp_path, pentagon):
    q = polygon_quadrature(pentagon)
    H = monomial_moments(ScaledMonomialBasis.of(pentagon), q)
    path = tmp_path / "h.csv"
    dump_csv(path, H, q)
    text = path.read_text().splitlines()
    assert text[0] == "# H"
    assert np.allclose(np.array([[float(v) for v in r.split(",")] for r in text[1:4]]), H, rtol=0, atol=0)
