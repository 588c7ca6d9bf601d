import os

import numpy as np
import pytest
from hypothesis import settings

from softsim.mesh import TetMesh, asset_path, load_surface_mesh, load_tet_mesh

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

UNIT_TET = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


@pytest.fixture
def unit_tet():
    return TetMesh(UNIT_TET.copy(), [[0, 1, 2, 3]])


@pytest.fixture
def two_tets():
    """Two tets sharing face (1, 2, 3)."""
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
    return TetMesh(v, [[0, 1, 2, 3], [4, 1, 3, 2]])


@pytest.fixture(scope="session")
def bunny756():
    return load_tet_mesh(asset_path("bunny_756.tet"))


@pytest.fixture(scope="session")
def bunny_surface():
    return load_surface_mesh(asset_path("bunny_surface.off"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write(tmp_path, name, text):
    p = os.path.join(tmp_path, name)
    with open(p, "w") as fh:
        fh.write(text)
    return p


# one PASS/FAIL line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
