import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, TypedDict

import numpy as np
from langgraph.graph import END, START, StateGraph

from optimization.ncg import OptimizerConfig, dai_yuan_direction, line_search
from optimization.objective import (
    ObjectiveParams,
    PenaltyState,
    initial_control,
    penalized_objective,
    project_control,
    control_inner,
)
from solvers.adjoint_solver import AdjointSolver
from solvers.problem import ThermistorProblem
from solvers.solver_base import BaseSolver, SolverRegistry
from solvers.state_solver import ForwardSolveError, ForwardSolver, NewtonConfig, StateTrajectory, solve_forward
from utils.logging import log_function

logger = logging.getLogger(__name__)


class OCPState(TypedDict, total=False):
    control: np.ndarray
    lam: float
    stage: int
    stage_iteration: int
    iteration: int
    traj: StateTrajectory
    adj: Any
    value: float
    breakdown: Dict[str, float]
    grad: np.ndarray
    g_prev: Optional[np.ndarray]
    d_prev: Optional[np.ndarray]
    alpha_prev: Optional[float]
    stage_done: bool
    memory_reset: bool
    stage_reason: str
    stage_violations: List[float]
    history: List[Dict[str, Any]]
    n_forward: int
    n_adjoint: int
    termination: str
    calls: Dict[str, int]


@dataclass
class OptResult:
    """Final control (scaled), iterate history and solve counts of a run."""

    control: np.ndarray
    trajectory: StateTrajectory
    breakdown: Dict[str, float]
    history: List[Dict[str, Any]]
    stage_violations: List[float]
    n_forward: int
    n_adjoint: int
    termination: str
    lam: float
    calls: Dict[str, int] = field(default_factory=dict)


class NCGStep(BaseSolver[Dict[str, Any]]):
    """
    Takes one projected Dai-Yuan step with Armijo backtracking and decides
    whether the current penalty stage has converged.
    """
    def invoke(self, state: Dict[str, Any]) -> Dict[str, Any]:
        problem: ThermistorProblem = self.problem
        cfg: OptimizerConfig = self.settings["optimizer"]
        params: ObjectiveParams = self.settings["params"]
        newton: NewtonConfig = self.settings["newton"]
        history_writer = self.settings.get("history_writer")
        _, _, u_max = params.scaled_targets(problem)
        penalty = PenaltyState(state["lam"])

        def inner(a, b):
            return control_inner(problem, a, b)

        u, g, value0 = state["control"], state["grad"], state["value"]
        stage_iteration = state["stage_iteration"]
        grad_norm = float(np.sqrt(max(inner(g, g), 0.0)))
        update: Dict[str, Any] = {"calls": self.count_call(state), "memory_reset": False}

        if grad_norm <= cfg.grad_tol:
            logger.info(f"Stage {state['stage']}: gradient norm {grad_norm:.3e} below tolerance")
            update.update(stage_done=True, stage_reason="stationary")
            return update

        restart = stage_iteration % cfg.restart_every == 0 or state.get("d_prev") is None
        d = dai_yuan_direction(g, None if restart else state.get("g_prev"), None if restart else state.get("d_prev"),
                               inner=inner, eps=cfg.dy_eps)

        def evaluate(candidate):
            traj = solve_forward(problem, candidate, newton)
            value, breakdown = penalized_objective(problem, traj, candidate, params, penalty)
            return value, (traj, breakdown)

        alpha0 = None if state.get("alpha_prev") is None else state["alpha_prev"] * cfg.step_growth
        result = line_search(evaluate, u, d, g, value0, cfg, alpha0=alpha0,
                             project=lambda x: project_control(x, u_max), inner=inner,
                             recoverable=(ForwardSolveError,))
        n_forward = state.get("n_forward", 0) + result.trials
        update["n_forward"] = n_forward

        if not result.accepted:
            if not restart and result.status == "stagnation":
                logger.warning(f"Stage {state['stage']}: restarting NCG memory after failed search")
                update.update(g_prev=None, d_prev=None, alpha_prev=None, memory_reset=True,
                              stage_done=False, stage_reason="")
                return update
            update.update(stage_done=True, stage_reason=result.status)
            return update

        traj, breakdown = result.payload
        rel_change = abs(value0 - result.value) / max(abs(value0), np.finfo(float).tiny)
        record = {
            "stage": state["stage"],
            "iteration": state["iteration"] + 1,
            "lambda": state["lam"],
            "objective": result.value,
            "tracking": breakdown["tracking"],
            "gradient_term": breakdown["gradient_term"],
            "tikhonov": breakdown["tikhonov"],
            "penalty": breakdown["penalty"],
            "grad_norm": grad_norm,
            "max_violation_K": breakdown["max_violation_K"],
            "step": result.alpha,
        }
        if history_writer is not None:
            history_writer.append(record)
        logger.info(
            f"Stage {state['stage']} iteration {stage_iteration + 1}: objective {result.value:.10e} "
            f"(rel change {rel_change:.2e}) |g|={grad_norm:.3e} alpha={result.alpha:.3e} "
            f"violation {breakdown['max_violation_K']:.4f} K"
        )

        stage_done, reason = False, ""
        if rel_change < cfg.rel_obj_tol:
            stage_done, reason = True, "rel_obj_tol"
        elif stage_iteration + 1 >= cfg.max_ncg_iters:
            stage_done, reason = True, "max_ncg_iters"

        update.update(
            control=result.u,
            traj=traj,
            value=result.value,
            breakdown=breakdown,
            g_prev=g,
            d_prev=d,
            alpha_prev=result.alpha,
            stage_iteration=stage_iteration + 1,
            iteration=state["iteration"] + 1,
            history=state["history"] + [record],
            stage_done=stage_done,
            stage_reason=reason,
        )
        return update


class PenaltyUpdate(BaseSolver[Dict[str, Any]]):
    """
    Closes a penalty stage: records its constraint violation and either stops
    or raises the penalty parameter to the next value of the schedule.
    """
    def invoke(self, state: Dict[str, Any]) -> Dict[str, Any]:
        cfg: OptimizerConfig = self.settings["optimizer"]
        params: ObjectiveParams = self.settings["params"]
        schedule = self.settings["schedule"]
        violation = state["breakdown"]["max_violation_K"]
        violations = state["stage_violations"] + [violation]
        stage = state["stage"]
        logger.info(
            f"Penalty stage {stage} (lambda={state['lam']:.1e}) finished ({state.get('stage_reason', '')}): "
            f"max violation {violation:.4e} K"
        )
        update: Dict[str, Any] = {"stage_violations": violations, "calls": self.count_call(state)}

        if not self.settings["constrained"]:
            update["termination"] = f"unconstrained: {state.get('stage_reason', '')}"
        elif violation <= cfg.violation_stop_K:
            update["termination"] = "violation_below_tolerance"
        elif stage + 1 >= len(schedule):
            update["termination"] = "penalty_schedule_exhausted"
        if "termination" in update:
            return update

        lam = float(schedule[stage + 1])
        value, breakdown = penalized_objective(self.problem, state["traj"], state["control"], params, PenaltyState(lam))
        update.update(
            lam=lam,
            stage=stage + 1,
            stage_iteration=0,
            value=value,
            breakdown=breakdown,
            g_prev=None,
            d_prev=None,
            alpha_prev=None,
            stage_done=False,
            stage_reason="",
        )
        return update


def build_workflow(problem: ThermistorProblem, params: ObjectiveParams, cfg: OptimizerConfig,
                   newton: NewtonConfig, schedule, history_writer=None, constrained: bool = True):
    """Penalty continuation as a graph.

    forward_solver -> adjoint_solver -> ncg_step -+-> adjoint_solver (stage continues)
                                                  +-> ncg_step (retry after a memory reset)
                                                  +-> penalty_update -+-> adjoint_solver (next lambda)
                                                                      +-> END
    """
    stages = [
        ForwardSolver("forward_solver", problem, params=params, newton=newton),
        AdjointSolver("adjoint_solver", problem, params=params, linear_tol=newton.linear_tol),
        NCGStep("ncg_step", problem, params=params, optimizer=cfg, newton=newton, history_writer=history_writer),
        PenaltyUpdate("penalty_update", problem, params=params, optimizer=cfg, schedule=schedule,
                      constrained=constrained),
    ]

    state: Dict[str, Any] = {}
    for solver in stages:
        solver.register(state)

    graph = StateGraph(OCPState)
    for solver in stages:
        graph.add_node(solver.name, lambda state, solver=solver: solver.invoke(state))

    def after_ncg(state):
        if state.get("stage_done"):
            return "penalty_update"
        # the trajectory and gradient are unchanged after a memory reset
        return "ncg_step" if state.get("memory_reset") else "adjoint_solver"

    def after_penalty(state):
        return END if state.get("termination") else "adjoint_solver"

    graph.add_edge(START, "forward_solver")
    graph.add_edge("forward_solver", "adjoint_solver")
    graph.add_edge("adjoint_solver", "ncg_step")
    graph.add_conditional_edges(
        "ncg_step", after_ncg,
        {"penalty_update": "penalty_update", "adjoint_solver": "adjoint_solver", "ncg_step": "ncg_step"},
    )
    graph.add_conditional_edges("penalty_update", after_penalty, {END: END, "adjoint_solver": "adjoint_solver"})

    # trajectories hold numpy arrays, so the graph runs without a checkpointer
    workflow = graph.compile()
    for name in (solver.name for solver in stages):
        logger.debug(f"Workflow node {name}: {SolverRegistry.get(name, '')}")
    return workflow, state


@log_function(logger)
def solve_ocp(problem: ThermistorProblem, params: ObjectiveParams, cfg: Optional[OptimizerConfig] = None,
              newton: Optional[NewtonConfig] = None, constrained: bool = True,
              control0: Optional[np.ndarray] = None, history_writer=None) -> OptResult:
    """Projected NCG with Moreau–Yosida continuation over the lambda schedule.

    ``constrained=False`` runs a single stage with lambda = 0. The start
    control defaults to ``cfg.initial_control_fraction`` of the bound.
    """
    cfg = cfg or OptimizerConfig()
    newton = newton or NewtonConfig()
    params.check_admissible_start(problem)
    _, _, u_max = params.scaled_targets(problem)
    schedule = tuple(cfg.lambda_schedule) if constrained else (0.0,)

    if control0 is None:
        control0 = initial_control(problem, params, cfg.initial_control_fraction)
    control0 = project_control(control0, u_max)

    workflow, registered = build_workflow(problem, params, cfg, newton, schedule, history_writer, constrained)
    initial: Dict[str, Any] = {
        "control": control0,
        "lam": float(schedule[0]),
        "stage": 0,
        "stage_iteration": 0,
        "iteration": 0,
        "g_prev": None,
        "d_prev": None,
        "alpha_prev": None,
        "stage_done": False,
        "memory_reset": False,
        "stage_reason": "",
        "stage_violations": [],
        "history": [],
        "n_forward": 0,
        "n_adjoint": 0,
        "calls": registered["calls"],
    }
    # adjoint + ncg per iteration, at most one memory restart per accepted step, and the penalty update
    recursion_limit = 10 + len(schedule) * (4 * cfg.max_ncg_iters + 6)
    final = workflow.invoke(initial, {"recursion_limit": recursion_limit})

    if history_writer is not None:
        history_writer.close()
    logger.info(
        f"Optimization finished ({final['termination']}): objective {final['value']:.10e}, "
        f"{final['n_forward']} forward and {final['n_adjoint']} adjoint solves"
    )
    return OptResult(
        control=final["control"],
        trajectory=final["traj"],
        breakdown=final["breakdown"],
        history=final["history"],
        stage_violations=final["stage_violations"],
        n_forward=final["n_forward"],
        n_adjoint=final["n_adjoint"],
        termination=final["termination"],
        lam=final["lam"],
        calls=final.get("calls", {}),
    )
