import numpy as np
import pytest

from models.materials import MaterialModel
from optimization.objective import project_control
from solvers.problem import ReferenceScales, build_problem
from tools.mesh import BoundaryTag, Mesh, build_box_mesh

DESK_CELLS = (5, 3, 3)
DESK_DIMS = (0.1, 0.02, 0.02)
DESK_SCALES = ReferenceScales(L_ref=0.1, t_ref=2.0, theta_ref=1500.0, u_ref=1e8, theta_cond=290.0)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance scenarios")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def desk_mesh():
    return build_box_mesh(*DESK_CELLS, DESK_DIMS, contact_fraction=0.3, design_depth=0.4)


def make_desk_problem(mesh, n_steps=10, t1=0.2):
    return build_problem(mesh, MaterialModel(), DESK_SCALES, 0.0, t1, n_steps, 290.0, 290.0)


@pytest.fixture(scope="session")
def desk_problem(desk_mesh):
    """5×3×3 box, 10 steps over 0.2 s, ambient and initial temperature 290 K."""
    return make_desk_problem(desk_mesh)


@pytest.fixture(scope="session")
def two_tet_problem():
    """Two tetrahedra sharing a face, grounded on (0, 1, 2), current through (2, 3, 4)."""
    vertices = 0.02 * np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], dtype=float)
    faces = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 4], [1, 3, 4], [2, 3, 4]]
    tags = [BoundaryTag.DIRICHLET] + [BoundaryTag.INSULATED] * 4 + [BoundaryTag.CONTROL]
    mesh = Mesh(vertices, [[0, 1, 2, 3], [1, 2, 3, 4]], faces, tags, [1])
    return build_problem(mesh, MaterialModel(), DESK_SCALES, 0.0, 0.2, 1, 290.0, 290.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def admissible_control(problem, rng, low=0.05, high=0.2):
    """Random control between ``low`` and ``high`` times the scaled bound (1), pinned ends."""
    values = rng.uniform(low, high, size=(problem.n_steps + 1, problem.n_control))
    return project_control(values, 1.0)


@pytest.fixture
def random_control(desk_problem, rng):
    return admissible_control(desk_problem, rng)
