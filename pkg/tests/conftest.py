import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from meshes import cube6, grid_mesh, regular_tet, unit_tet  # noqa: E402


@pytest.fixture
def cube():
    return cube6()


@pytest.fixture
def one_tet():
    return regular_tet()


@pytest.fixture
def box_unit_tet():
    return unit_tet()


@pytest.fixture
def grid333():
    return grid_mesh(3, 3, 3)
