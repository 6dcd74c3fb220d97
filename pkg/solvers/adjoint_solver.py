"""Backward sweep with the transposed step Jacobians of the forward scheme.

Every backward step solves

    Jᵀ (ϑ_k, ψ_k) = (M_L ϑ_{k+1}/dt + f_k, 0)

with J the Jacobian of the converged forward step k. The result is the exact
adjoint of the discrete forward map, so reduced gradients agree with finite
differences up to the solver tolerances.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from optimization.objective import ObjectiveParams, PenaltyState, excess, reduced_gradient
from solvers.problem import ThermistorProblem
from solvers.solver_base import BaseSolver
from solvers.state_solver import StateTrajectory, step_jacobian
from tools.fem import assemble_qlaplacian, gradient_lq_power
from tools.sparse import LinearSolverError, bicgstab_solve
from utils.logging import log_function

logger = logging.getLogger(__name__)


class AdjointSolveError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"adjoint solve failed at step {step}: {cause}")
        self.step = step


@dataclass(frozen=True, eq=False)
class AdjointTrajectory:
    """Adjoint temperature and potential per time level, scaled by 1/dt.

    ``vartheta[0]`` holds the initial-time dual M_L ϑ_1/dt and ``psi[0]`` is
    zero because the initial potential does not enter the objective.
    """

    vartheta: np.ndarray
    psi: np.ndarray
    boundary_trace_psi: np.ndarray


def terminal_condition(problem: ThermistorProblem, traj: StateTrajectory, params: ObjectiveParams,
                       penalty_state: Optional[PenaltyState] = None) -> np.ndarray:
    """Derivative of the terminal terms: M_E(θ_K − θ_d) plus the last penalty slice."""
    theta_d, _, _ = params.scaled_targets(problem)
    load = problem.design_mass @ (traj.theta[-1] - theta_d)
    if penalty_state is not None and penalty_state.lam > 0.0:
        load = load + problem.dt * penalty_state.lam * problem.mass_lumped * excess(problem, traj, params)[-1]
    return load


def adjoint_step(problem: ThermistorProblem, theta_next: np.ndarray, phi_next: np.ndarray,
                 vartheta_incoming: np.ndarray, rhs_slice: np.ndarray,
                 linear_tol: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
    """Solve the transposed coupled step system; ψ vanishes on the grounded contact."""
    n = problem.n_vertices
    rhs = np.concatenate([problem.mass_lumped * vartheta_incoming / problem.dt + rhs_slice,
                          np.zeros(problem.dofmap.n_free)])
    solution = bicgstab_solve(step_jacobian(problem, theta_next, phi_next).T.tocsr(), rhs, tol=linear_tol)
    return solution[:n], problem.dofmap.extend(solution[n:])


def state_loads(problem: ThermistorProblem, traj: StateTrajectory, params: ObjectiveParams,
                penalty_state: PenaltyState) -> np.ndarray:
    """Per-level derivative densities of the time-integrated terms.

    The penalty density is added on levels 1..K-1 only; its last slice is part
    of the terminal condition.
    """
    loads = np.zeros_like(traj.theta)
    if params.gamma > 0.0:
        for k in range(1, problem.n_steps + 1):
            power = gradient_lq_power(problem.mesh, traj.theta[k], params.q_exp)
            if power > 0.0:
                factor = params.gamma * power ** (params.s_exp / params.q_exp - 1.0)
                loads[k] += factor * assemble_qlaplacian(problem.mesh, traj.theta[k], params.q_exp)
    if penalty_state.lam > 0.0:
        loads[1:-1] += penalty_state.lam * problem.mass_lumped * excess(problem, traj, params)[1:-1]
    return loads


def _sweep(problem: ThermistorProblem, traj: StateTrajectory, loads: np.ndarray,
           linear_tol: float) -> Tuple[np.ndarray, np.ndarray]:
    K, n = problem.n_steps, problem.n_vertices
    vartheta = np.zeros((K + 1, n))
    psi = np.zeros((K + 1, n))
    incoming = np.zeros(n)
    for k in range(K, 0, -1):
        try:
            vartheta[k], psi[k] = adjoint_step(problem, traj.theta[k], traj.phi[k], incoming, loads[k], linear_tol)
        except LinearSolverError as exc:
            logger.error(f"Adjoint step {k} failed: {exc}")
            raise AdjointSolveError(k, exc) from exc
        incoming = vartheta[k]
    vartheta[0] = problem.mass_lumped * vartheta[1] / problem.dt
    return vartheta, psi


@log_function(logger)
def solve_adjoint(problem: ThermistorProblem, traj: StateTrajectory, params: ObjectiveParams,
                  penalty_state: Optional[PenaltyState] = None, linear_tol: float = 1e-12) -> AdjointTrajectory:
    """Adjoint of the penalized objective for the trajectory ``traj``."""
    penalty_state = penalty_state or PenaltyState(0.0)
    loads = state_loads(problem, traj, params, penalty_state)
    loads[-1] += terminal_condition(problem, traj, params, penalty_state) / problem.dt
    vartheta, psi = _sweep(problem, traj, loads, linear_tol)
    trace = psi[:, problem.dofmap.control_vertices]
    logger.info(f"Adjoint sweep: max |psi| on contact {np.abs(trace).max():.3e}")
    return AdjointTrajectory(vartheta=vartheta, psi=psi, boundary_trace_psi=trace)


def apply_adjoint_operator(problem: ThermistorProblem, traj: StateTrajectory, f: np.ndarray,
                           linear_tol: float = 1e-12) -> np.ndarray:
    """Transpose of the tangent map: returns g with Σ_k g_k·h_k = Σ_k f_k·δθ_k(h).

    ``f`` holds one dual load per time level (level 0 is ignored).
    """
    f = np.asarray(f, dtype=float)
    if f.shape != traj.theta.shape:
        raise ValueError(f"dual load has shape {f.shape}, expected {traj.theta.shape}")
    _, psi = _sweep(problem, traj, f, linear_tol)
    g = problem.control_weights * psi[:, problem.dofmap.control_vertices]
    g[0] = 0.0
    return g


class AdjointSolver(BaseSolver[Dict[str, Any]]):
    """
    Runs the backward sweep for the current trajectory and forms the reduced
    gradient of the penalized objective.
    """
    def invoke(self, state: Dict[str, Any]) -> Dict[str, Any]:
        params = self.settings["params"]
        linear_tol = self.settings.get("linear_tol", 1e-12)
        adj = solve_adjoint(self.problem, state["traj"], params, PenaltyState(state["lam"]), linear_tol)
        grad = reduced_gradient(self.problem, state["control"], adj, params)
        return {
            "adj": adj,
            "grad": grad,
            "n_adjoint": state.get("n_adjoint", 0) + 1,
            "calls": self.count_call(state),
        }
