import numpy as np
import pytest

from meshvae import shapes, simplify


@pytest.fixture(scope="session")
def sphere642():
    return shapes.icosphere(3)


@pytest.fixture(scope="session")
def ico_hierarchy():
    return simplify.build_hierarchy(shapes.icosahedron(), 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tetrahedron():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    faces = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return shapes.Mesh(pos, faces)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
