import sys
import numpy as np
import pytest
from hypothesis import settings

import elastohm
from elastohm.mesh import load_mesh

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")

CUBE_LABELS = "x1 == 1 or x2 == -1 or x3 == 1"


@pytest.fixture(scope="session")
def cube():
    return load_mesh(elastohm.mesh_path("cube_488"), CUBE_LABELS)


@pytest.fixture(scope="session")
def tet():
    return load_mesh(elastohm.mesh_path("tetrahedron"), "x3 <= 0")


@pytest.fixture(scope="session")
def beam():
    return load_mesh(elastohm.mesh_path("double_t_beam"), "x1 == 0")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
