from types import SimpleNamespace

import numpy as np
import pytest

from optimization.objective import (
    ControlField,
    GridMismatchError,
    ObjectiveParams,
    PenaltyState,
    control_inner,
    eval_objective,
    eval_penalty,
    initial_control,
    penalized_objective,
    project_control,
    tikhonov_gradient,
)
from tools.mesh import mesh_measures


def constant_trajectory(problem, value):
    return SimpleNamespace(theta=np.full((problem.n_steps + 1, problem.n_vertices), value))


def test_params_validation():
    with pytest.raises(ValueError):
        ObjectiveParams(p_exp=2.0)
    with pytest.raises(ValueError):
        ObjectiveParams(beta=0.0)
    with pytest.raises(ValueError):
        ObjectiveParams(q_exp=1.5)
    with pytest.raises(ValueError):
        PenaltyState(-1.0)


def test_scaled_targets(desk_problem):
    theta_d, theta_max, u_max = ObjectiveParams().scaled_targets(desk_problem)
    assert theta_d == pytest.approx(1.0)
    assert theta_max == pytest.approx(1700.0 / 1500.0)
    assert u_max == pytest.approx(1.0)


def test_admissible_start(desk_problem):
    ObjectiveParams().check_admissible_start(desk_problem)
    with pytest.raises(ValueError):
        ObjectiveParams(theta_max=280.0).check_admissible_start(desk_problem)


def test_tracking_of_uniform_state(desk_problem):
    traj = constant_trajectory(desk_problem, 290.0 / 1500.0)
    parts = eval_objective(desk_problem, traj, desk_problem.zero_control(), ObjectiveParams())
    design_volume = mesh_measures(desk_problem.mesh)["design_volume"]
    error = (290.0 - 1500.0) / 1500.0
    assert parts["tracking"] == pytest.approx(0.5 * error**2 * design_volume)
    assert parts["gradient_term"] == 0.0
    assert parts["tikhonov"] == 0.0
    assert parts["total"] == pytest.approx(parts["tracking"])


def test_gradient_term_of_linear_state(desk_problem):
    traj = SimpleNamespace(theta=np.tile(desk_problem.mesh.vertices[:, 0], (desk_problem.n_steps + 1, 1)))
    params = ObjectiveParams(gamma=2.0, s_exp=4.0, q_exp=2.0)
    parts = eval_objective(desk_problem, traj, desk_problem.zero_control(), params)
    volume = mesh_measures(desk_problem.mesh)["volume"]
    assert parts["gradient_term"] == pytest.approx(2.0 / 4.0 * desk_problem.dt * desk_problem.n_steps * volume**2)


def test_tikhonov_of_constant_control(desk_problem):
    c = 0.3
    control = np.full((desk_problem.n_steps + 1, desk_problem.n_control), c)
    traj = constant_trajectory(desk_problem, 290.0 / 1500.0)
    params = ObjectiveParams()
    parts = eval_objective(desk_problem, traj, control, params)
    expected = 0.5 * params.beta * desk_problem.dt * (desk_problem.n_steps + 1) * c**4 * desk_problem.control_weights.sum()
    assert parts["tikhonov"] == pytest.approx(expected)


def test_penalty_counts_levels_after_the_first(desk_problem):
    params = ObjectiveParams()
    theta_max = 1700.0 / 1500.0
    traj = constant_trajectory(desk_problem, theta_max + 0.1)
    penalty = eval_penalty(desk_problem, traj, PenaltyState(10.0), params)
    volume = mesh_measures(desk_problem.mesh)["volume"]
    assert penalty["value"] == pytest.approx(0.5 * 10.0 * desk_problem.dt * desk_problem.n_steps * 0.01 * volume)
    assert penalty["max_violation_K"] == pytest.approx(150.0)

    value, breakdown = penalized_objective(desk_problem, traj, desk_problem.zero_control(), params, PenaltyState(10.0))
    assert value == pytest.approx(breakdown["total"] + penalty["value"])
    assert breakdown["penalized"] == value


def test_zero_penalty_still_reports_violation(desk_problem):
    traj = constant_trajectory(desk_problem, 1800.0 / 1500.0)
    penalty = eval_penalty(desk_problem, traj, PenaltyState(0.0), ObjectiveParams())
    assert penalty["value"] == 0.0
    assert penalty["max_violation_K"] == pytest.approx(100.0)


def test_grid_mismatch(desk_problem):
    traj = constant_trajectory(desk_problem, 0.2)
    with pytest.raises(GridMismatchError):
        eval_objective(desk_problem, traj, np.zeros((3, desk_problem.n_control)), ObjectiveParams())


def test_tikhonov_gradient_of_linear_sequence(desk_problem):
    k = np.arange(desk_problem.n_steps + 1, dtype=float)[:, None]
    values = (0.1 + 0.02 * k) * np.ones((1, desk_problem.n_control))
    params = ObjectiveParams()
    grad = tikhonov_gradient(desk_problem, values, params)
    assert np.all(grad[0] == 0.0) and np.all(grad[-1] == 0.0)
    assert np.allclose(grad[1:-1], 2.0 * params.beta * values[1:-1] ** 3, rtol=1e-6, atol=1e-12 * params.beta)


def test_projection_clamps_and_pins():
    values = np.array([[0.5, -1.0], [2.0, 0.3], [-0.2, 1.5], [0.7, 0.7]])
    projected = project_control(values, 1.0)
    assert np.array_equal(projected, [[0.0, 0.0], [1.0, 0.3], [0.0, 1.0], [0.0, 0.0]])
    assert np.array_equal(project_control(projected, 1.0), projected)


def test_control_inner_and_initial_control(desk_problem):
    ones = np.ones((desk_problem.n_steps + 1, desk_problem.n_control))
    expected = desk_problem.dt * (desk_problem.n_steps + 1) * desk_problem.control_weights.sum()
    assert control_inner(desk_problem, ones, ones) == pytest.approx(expected)

    start = initial_control(desk_problem, ObjectiveParams(), 0.05)
    assert np.all(start[0] == 0.0) and np.all(start[-1] == 0.0)
    assert np.allclose(start[1:-1], 0.05)


def test_control_field(desk_problem):
    field = ControlField.zeros(desk_problem)
    assert field.values.shape == (desk_problem.n_steps + 1, desk_problem.n_control)
    assert np.allclose(field.times, np.linspace(0.0, 0.2, desk_problem.n_steps + 1))
    assert np.all(field.to_physical(desk_problem) == 0.0)
