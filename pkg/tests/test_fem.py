import numpy as np
import pytest

from tools.fem import (
    AssemblyError,
    assemble_boundary_mass,
    assemble_control_load,
    assemble_heat_stiffness,
    assemble_joule_load,
    assemble_mass,
    assemble_potential_system,
    assemble_qlaplacian,
    assemble_robin,
    assemble_stiffness,
    build_dofmap,
    control_mass,
    gradient_lq_power,
    lump,
    projected_gradient_magnitude,
)
from tools.mesh import BoundaryTag, mesh_measures
from tools.sparse import symmetry_defect
from tools.verify import DenseSystem, dense_mirror_solve

VOLUME = 0.1 * 0.02 * 0.02


def test_mass_integrates_one(desk_mesh):
    M = assemble_mass(desk_mesh)
    ones = np.ones(desk_mesh.n_vertices)
    assert ones @ (M @ ones) == pytest.approx(VOLUME)
    assert lump(M).sum() == pytest.approx(VOLUME)
    assert np.all(lump(M) > 0.0)
    assert symmetry_defect(M) == 0.0


def test_design_mass_integrates_design_volume(desk_mesh):
    M_E = assemble_mass(desk_mesh, cells=desk_mesh.design_cells)
    ones = np.ones(desk_mesh.n_vertices)
    assert ones @ (M_E @ ones) == pytest.approx(mesh_measures(desk_mesh)["design_volume"])


def test_stiffness_kernel_and_energy(desk_mesh):
    K = assemble_stiffness(desk_mesh, 1.0)
    x = desk_mesh.vertices[:, 0]
    assert np.abs(K @ np.ones(desk_mesh.n_vertices)).max() < 1e-12
    assert x @ (K @ x) == pytest.approx(VOLUME)
    assert symmetry_defect(K) < 1e-14


def test_kuhn_stiffness_is_m_matrix(desk_mesh):
    K = assemble_stiffness(desk_mesh, 1.0).tocoo()
    off = K.data[K.row != K.col]
    assert off.max() <= 1e-12 * np.abs(K.data).max()


def test_boundary_masses(desk_mesh):
    measures = mesh_measures(desk_mesh)
    ones = np.ones(desk_mesh.n_vertices)
    assert ones @ (assemble_boundary_mass(desk_mesh) @ ones) == pytest.approx(measures["boundary_area"])
    control_area = measures["area_per_tag"]["control"]
    B_c = assemble_boundary_mass(desk_mesh, 1.0, BoundaryTag.CONTROL)
    assert ones @ (B_c @ ones) == pytest.approx(control_area)
    dofmap = build_dofmap(desk_mesh)
    weights = control_mass(desk_mesh, dofmap)
    assert weights.shape == (dofmap.n_control,)
    assert weights.sum() == pytest.approx(control_area)


def test_robin_load_for_constant_ambient(desk_mesh):
    matrix, load = assemble_robin(desk_mesh, 20.0, 290.0)
    area = mesh_measures(desk_mesh)["boundary_area"]
    assert load.sum() == pytest.approx(20.0 * 290.0 * area)
    assert lump(matrix).sum() == pytest.approx(20.0 * area)
    with pytest.raises(AssemblyError):
        assemble_robin(desk_mesh, -1.0, 290.0)


def test_dofmap_partitions_vertices(desk_mesh):
    dofmap = build_dofmap(desk_mesh)
    assert dofmap.n_free + len(dofmap.dirichlet) == desk_mesh.n_vertices
    values = np.arange(desk_mesh.n_vertices, dtype=float)
    extended = dofmap.extend(dofmap.restrict(values))
    assert np.array_equal(extended[dofmap.free], values[dofmap.free])
    assert np.all(extended[dofmap.dirichlet] == 0.0)
    assert np.all(dofmap.free_index[dofmap.dirichlet] == -1)


def test_potential_system_is_spd_and_matches_dense(desk_problem):
    theta = np.full(desk_problem.n_vertices, 290.0 / 1500.0)
    A = assemble_potential_system(desk_problem.mesh, desk_problem.dofmap, desk_problem.material, theta)
    assert A.shape == (desk_problem.dofmap.n_free,) * 2
    assert symmetry_defect(A) < 1e-14
    dense = A.toarray()
    assert np.linalg.eigvalsh(dense).min() > 0.0
    load = assemble_control_load(desk_problem.mesh, desk_problem.dofmap, np.ones(desk_problem.n_control),
                                 desk_problem.control_weights)
    rhs = desk_problem.dofmap.restrict(load)
    x = dense_mirror_solve(DenseSystem.from_sparse(A, rhs))
    assert np.allclose(dense @ x, rhs, atol=1e-12 * np.abs(rhs).max())


def test_heat_stiffness_at_reference_temperature(desk_problem):
    theta = np.full(desk_problem.n_vertices, 290.0 / 1500.0)
    K_eta = assemble_heat_stiffness(desk_problem.mesh, desk_problem.material, theta)
    K = assemble_stiffness(desk_problem.mesh, 1.0)
    assert np.allclose(K_eta.toarray(), K.toarray(), rtol=0.0, atol=1e-12 * np.abs(K.data).max())


def test_control_load_shape_checked(desk_problem):
    with pytest.raises(AssemblyError):
        assemble_control_load(desk_problem.mesh, desk_problem.dofmap, np.ones(desk_problem.n_control + 1))


def test_joule_load_of_uniform_field(desk_problem):
    mesh = desk_problem.mesh
    theta = np.full(mesh.n_vertices, 290.0 / 1500.0)
    phi = 3.0 * mesh.vertices[:, 0]
    load = assemble_joule_load(mesh, desk_problem.material, theta, phi)
    assert load.sum() == pytest.approx(9.0 * 1.0 * 0.2 * 0.2)
    assert np.all(load >= 0.0)


def test_gradient_terms_of_linear_field(desk_mesh):
    x = desk_mesh.vertices[:, 0]
    assert gradient_lq_power(desk_mesh, 2.0 * x, 2.0) == pytest.approx(4.0 * VOLUME)
    assert gradient_lq_power(desk_mesh, 2.0 * x, 3.0) == pytest.approx(8.0 * VOLUME)
    K = assemble_stiffness(desk_mesh, 1.0)
    theta = np.sin(40.0 * x) + desk_mesh.vertices[:, 2] * 50.0
    assert np.allclose(assemble_qlaplacian(desk_mesh, theta, 2.0), K @ theta, atol=1e-12 * np.abs(K @ theta).max())
    with pytest.raises(AssemblyError):
        assemble_qlaplacian(desk_mesh, theta, 1.5)


def test_qlaplacian_is_derivative_of_power(desk_mesh, rng):
    theta = rng.standard_normal(desk_mesh.n_vertices)
    h = rng.standard_normal(desk_mesh.n_vertices)
    q, eps = 3.0, 1e-6
    fd = (gradient_lq_power(desk_mesh, theta + eps * h, q) - gradient_lq_power(desk_mesh, theta - eps * h, q)) / (2 * eps)
    assert q * assemble_qlaplacian(desk_mesh, theta, q) @ h == pytest.approx(fd, rel=1e-6)


def test_projected_gradient_magnitude_of_linear_field(desk_mesh):
    values = projected_gradient_magnitude(desk_mesh, 2.0 * desk_mesh.vertices[:, 1])
    assert np.allclose(values, 2.0)
