import csv

import numpy as np
import pytest

import workflow_builders.continuation as continuation_module
from optimization.ncg import LineSearchResult, OptimizerConfig, line_search
from optimization.objective import ObjectiveParams, PenaltyState, initial_control, penalized_objective
from solvers.state_solver import NewtonConfig, solve_forward
from tests.conftest import make_desk_problem
from utils.reporting import HistoryWriter
from workflow_builders.continuation import build_workflow, solve_ocp

SHORT = OptimizerConfig(max_ncg_iters=3, rel_obj_tol=1e-12)


def start_value(problem, params, cfg, lam=0.0):
    control = initial_control(problem, params, cfg.initial_control_fraction)
    return penalized_objective(problem, solve_forward(problem, control), control, params, PenaltyState(lam))[0]


def test_stationary_start_stops_immediately(desk_problem):
    cfg = OptimizerConfig(grad_tol=1e-6, initial_control_fraction=0.0)
    result = solve_ocp(desk_problem, ObjectiveParams(), cfg, constrained=False)
    assert result.termination == "unconstrained: stationary"
    assert result.history == []
    assert np.all(result.control == 0.0)
    assert result.n_forward == 1
    assert result.n_adjoint == 1


def test_free_run_lowers_the_objective(desk_problem, tmp_path):
    params = ObjectiveParams()
    writer = HistoryWriter(tmp_path / "history.csv")
    result = solve_ocp(desk_problem, params, SHORT, constrained=False, history_writer=writer)

    assert result.termination.startswith("unconstrained")
    assert result.lam == 0.0
    assert result.stage_violations and len(result.stage_violations) == 1
    objectives = [record["objective"] for record in result.history]
    assert objectives, "no step was accepted"
    assert objectives[0] < start_value(desk_problem, params, SHORT)
    assert all(b <= a for a, b in zip(objectives, objectives[1:]))

    assert np.all(result.control[0] == 0.0) and np.all(result.control[-1] == 0.0)
    assert result.control.min() >= 0.0 and result.control.max() <= 1.0
    assert result.n_adjoint == result.calls["adjoint_solver"]
    assert result.calls["adjoint_solver"] <= result.calls["ncg_step"]
    assert result.calls["forward_solver"] == 1
    assert result.calls["penalty_update"] == 1
    assert result.n_forward > len(result.history)

    with open(tmp_path / "history.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == len(result.history)
    assert not (tmp_path / "history.csv.partial").exists()


def test_penalty_continuation_walks_the_schedule(desk_problem):
    params = ObjectiveParams(theta_max=290.5)
    cfg = OptimizerConfig(max_ncg_iters=2, lambda_schedule=(1.0, 1e3), violation_stop_K=1e-6)
    result = solve_ocp(desk_problem, params, cfg)

    assert result.termination in ("violation_below_tolerance", "penalty_schedule_exhausted")
    assert 1 <= len(result.stage_violations) <= 2
    assert result.lam in cfg.lambda_schedule
    lambdas = [record["lambda"] for record in result.history]
    assert lambdas == sorted(lambdas)
    assert result.calls["penalty_update"] == len(result.stage_violations)
    for stage in set(record["stage"] for record in result.history):
        values = [r["objective"] for r in result.history if r["stage"] == stage]
        assert all(b <= a for a, b in zip(values, values[1:]))


def test_leading_zero_stage_still_enforces_the_bound(desk_problem):
    cfg = OptimizerConfig(max_ncg_iters=2, lambda_schedule=(0.0, 1e3), violation_stop_K=1e-9)
    result = solve_ocp(desk_problem, ObjectiveParams(theta_max=290.0), cfg)

    assert not result.termination.startswith("unconstrained")
    assert result.calls["penalty_update"] == 2
    assert len(result.stage_violations) == 2
    assert result.stage_violations[0] > cfg.violation_stop_K
    assert result.lam == 1e3


def test_memory_reset_retries_without_a_new_adjoint(desk_problem, monkeypatch):
    searches = []

    def stalling_search(evaluate, u, d, g, value0, cfg, **kwargs):
        searches.append(u)
        if len(searches) == 2:
            return LineSearchResult("stagnation", 1.0, u, value0, cfg.max_trials)
        return line_search(evaluate, u, d, g, value0, cfg, **kwargs)

    monkeypatch.setattr(continuation_module, "line_search", stalling_search)
    result = solve_ocp(desk_problem, ObjectiveParams(), SHORT, constrained=False)

    assert len(searches) >= 3
    assert np.array_equal(searches[1], searches[2])
    assert result.calls["ncg_step"] == result.calls["adjoint_solver"] + 1
    assert result.n_adjoint == result.calls["adjoint_solver"]


def test_inadmissible_bound_is_rejected(desk_problem):
    with pytest.raises(ValueError):
        solve_ocp(desk_problem, ObjectiveParams(theta_max=250.0), SHORT)


def test_workflow_registers_its_nodes(desk_problem):
    workflow, state = build_workflow(desk_problem, ObjectiveParams(), SHORT, NewtonConfig(), (0.0,))
    assert set(state["calls"]) == {"forward_solver", "adjoint_solver", "ncg_step", "penalty_update"}
    assert all(count == 0 for count in state["calls"].values())


@pytest.mark.slow
def test_two_scenario_experiment(desk_mesh):
    problem = make_desk_problem(desk_mesh, n_steps=100, t1=2.0)
    # a bound below the target so that the free optimum overshoots it
    params = ObjectiveParams(theta_d=1500.0, theta_max=1400.0)
    cfg = OptimizerConfig()

    free = solve_ocp(problem, params, cfg, constrained=False)
    assert free.breakdown["max_violation_K"] > 0.0

    constrained = solve_ocp(problem, params, cfg)
    violations = constrained.stage_violations
    assert all(b <= a + 1e-9 for a, b in zip(violations, violations[1:]))
    assert violations[-1] < free.breakdown["max_violation_K"]
    assert constrained.termination == "violation_below_tolerance"
    assert constrained.breakdown["max_violation_K"] <= cfg.violation_stop_K
    for stage in set(record["stage"] for record in constrained.history):
        values = [r["objective"] for r in constrained.history if r["stage"] == stage]
        assert all(b < a for a, b in zip(values, values[1:]))
