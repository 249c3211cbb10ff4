import numpy as np
import pytest

from affectsynth.mesh import Mesh
from affectsynth.synthetic import make_identity_model, make_template


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tetra():
    """Smallest closed mesh: a tetrahedron."""
    vertices = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    )
    faces = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
    return Mesh(vertices, faces)


@pytest.fixture(scope="session")
def template10():
    return make_template(10)


@pytest.fixture(scope="session")
def identity6(template10):
    return make_identity_model(template10, modes=6, seed=0)


def random_mesh(rng, n=12, faces=8):
    """Random valid mesh: n vertices, `faces` random non-degenerate triples."""
    vertices = rng.normal(size=(n, 3))
    tri = []
    while len(tri) < faces:
        cand = rng.choice(n, size=3, replace=False)
        tri.append(tuple(int(v) for v in cand))
    return Mesh(vertices, np.array(tri, dtype=np.int64))
