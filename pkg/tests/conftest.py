import numpy as np
import pytest

from vembiot.mesh import generate, polygon_geometry

FAMILY_MESHES = {
    "tri": lambda: generate("tri", 4),
    "quad": lambda: generate("quad", 5, distortion=0.3, seed=3),
    "hex": lambda: generate("hex", 6),
}


@pytest.fixture(params=sorted(FAMILY_MESHES))
def family_mesh(request):
    return FAMILY_MESHES[request.param]()


@pytest.fixture
def pentagon():
    pts = np.array([[0.1, 0.0], [1.0, 0.2], [1.2, 0.9], [0.5, 1.3], [-0.1, 0.7]])
    return polygon_geometry(pts)


def random_p1_vector(rng):
    A = rng.normal(size=(2, 2))
    b = rng.normal(size=2)
    return lambda x: x @ A.T + b, A, b
