"""Implicit Euler time stepping of the coupled heat / potential system.

Each step solves for (θ_{k+1}, φ_{k+1}) with Newton's method on the coupled
residual

    R_θ = M_L(θ − θ_k)/dt + D K_η(θ)θ + B_L θ − b_l − J F(θ, φ)
    R_φ = A_σ(θ)φ − N u_{k+1}                       (free potential dofs)

starting from a semi-implicit pre-step. M_L and B_L are the lumped mass and
Robin matrices, D and J the diffusion and Joule numbers.
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from optimization.objective import PenaltyState, penalized_objective
from solvers.problem import ThermistorProblem
from solvers.solver_base import BaseSolver
from tools.fem import (
    assemble_control_load,
    assemble_heat_stiffness,
    assemble_joule_load,
    assemble_linearization_blocks,
    assemble_potential_system,
)
from tools.sparse import LinearSolverError, bicgstab_solve, cg_solve
from utils.logging import log_function
from utils.reporting import atomic_write_bytes

logger = logging.getLogger(__name__)

TRAJECTORY_MAGIC = b"THRMTRAJ"
TRAJECTORY_VERSION = 1


class NewtonError(RuntimeError):
    """Newton did not converge; ``residuals`` holds the residual history."""

    def __init__(self, message: str, residuals: List[float]):
        super().__init__(f"{message}; residuals {[f'{r:.3e}' for r in residuals]}")
        self.residuals = list(residuals)


class ForwardSolveError(RuntimeError):
    """A time step failed; ``step`` is the index of the level being computed."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"forward solve failed at step {step}: {cause}")
        self.step = step


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iters: int = 20
    linear_tol: float = 1e-12
    potential_tol: float = 1e-10

    def __post_init__(self):
        if not (self.tol > 0 and self.linear_tol > 0 and self.potential_tol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class StepStats:
    iterations: int
    residuals: Tuple[float, ...]

    @property
    def final_residual(self) -> float:
        return self.residuals[-1]


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """Scaled nodal temperature and potential at every time level.

    ``control`` is the control the trajectory was computed for and
    ``newton_stats[k-1]`` describes the step producing level ``k``.
    """

    times: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    control: np.ndarray
    newton_stats: Tuple[StepStats, ...] = field(default=(), repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


def solve_potential(problem: ThermistorProblem, theta: np.ndarray, u_slice: np.ndarray,
                    tol: float = 1e-10, x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Potential for a given temperature and contact current, zero on the grounded contact."""
    dofmap = problem.dofmap
    if not np.all(np.isfinite(theta)):
        raise LinearSolverError("non-finite temperature in potential solve", residual=float("nan"))
    A = assemble_potential_system(problem.mesh, dofmap, problem.material, theta)
    load = assemble_control_load(problem.mesh, dofmap, u_slice, problem.control_weights)
    guess = None if x0 is None else dofmap.restrict(x0)
    return dofmap.extend(cg_solve(A, dofmap.restrict(load), tol=tol, x0=guess))


def step_residual(problem: ThermistorProblem, theta_k: np.ndarray, theta: np.ndarray, phi: np.ndarray,
                  u_next: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mesh, dofmap, material = problem.mesh, problem.dofmap, problem.material
    r_theta = (
        problem.mass_lumped * (theta - theta_k) / problem.dt
        + problem.diffusion * (assemble_heat_stiffness(mesh, material, theta) @ theta)
        + problem.robin_lumped * theta
        - problem.robin_load
        - problem.joule * assemble_joule_load(mesh, material, theta, phi)
    )
    A = assemble_potential_system(mesh, dofmap, material, theta)
    load = assemble_control_load(mesh, dofmap, u_next, problem.control_weights)
    r_phi = A @ dofmap.restrict(phi) - dofmap.restrict(load)
    return r_theta, r_phi


def step_jacobian(problem: ThermistorProblem, theta: np.ndarray, phi: np.ndarray) -> sp.csr_matrix:
    """Exact Jacobian of the step residual w.r.t. (θ, φ_free)."""
    mesh, dofmap, material = problem.mesh, problem.dofmap, problem.material
    free = dofmap.free
    blocks = assemble_linearization_blocks(mesh, material, theta, phi)
    diagonal = sp.diags(problem.mass_lumped / problem.dt + problem.robin_lumped)
    j_tt = (diagonal + problem.diffusion * (assemble_heat_stiffness(mesh, material, theta) + blocks["K_eta_p"])
            - problem.joule * blocks["C_theta"])
    j_tp = -problem.joule * blocks["C_phi"][:, free]
    j_pt = blocks["A_sigma_p"][free, :]
    j_pp = assemble_potential_system(mesh, dofmap, material, theta)
    return sp.bmat([[j_tt, j_tp], [j_pt, j_pp]], format="csr")


def semi_implicit_prestep(problem: ThermistorProblem, theta_k: np.ndarray, u_next: np.ndarray,
                          cfg: NewtonConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Potential at θ_k, then one linear heat step with coefficients frozen at θ_k."""
    mesh, material = problem.mesh, problem.material
    phi_star = solve_potential(problem, theta_k, u_next, tol=cfg.potential_tol)
    matrix = (sp.diags(problem.mass_lumped / problem.dt + problem.robin_lumped)
              + problem.diffusion * assemble_heat_stiffness(mesh, material, theta_k)).tocsr()
    rhs = (problem.mass_lumped * theta_k / problem.dt + problem.robin_load
           + problem.joule * assemble_joule_load(mesh, material, theta_k, phi_star))
    theta_star = cg_solve(matrix, rhs, tol=cfg.linear_tol, x0=theta_k)
    return theta_star, phi_star


def step(problem: ThermistorProblem, theta_k: np.ndarray, u_next: np.ndarray,
         newton_cfg: Optional[NewtonConfig] = None) -> Tuple[np.ndarray, np.ndarray, StepStats]:
    """One implicit Euler step. Returns the new temperature, potential and Newton stats."""
    cfg = newton_cfg or NewtonConfig()
    dofmap = problem.dofmap
    n = problem.n_vertices
    theta, phi = semi_implicit_prestep(problem, theta_k, u_next, cfg)

    residuals: List[float] = []
    for iteration in range(1, cfg.max_iters + 1):
        r_theta, r_phi = step_residual(problem, theta_k, theta, phi, u_next)
        residual = float(np.linalg.norm(np.concatenate([r_theta, r_phi])))
        residuals.append(residual)
        logger.debug(f"Newton iteration {iteration}: residual {residual:.3e}")
        if not np.isfinite(residual):
            raise NewtonError("non-finite residual", residuals)
        if residual <= cfg.tol:
            return theta, phi, StepStats(iterations=iteration, residuals=tuple(residuals))
        if iteration == cfg.max_iters:
            break
        jacobian = step_jacobian(problem, theta, phi)
        try:
            delta = bicgstab_solve(jacobian, -np.concatenate([r_theta, r_phi]), tol=cfg.linear_tol)
        except LinearSolverError as exc:
            raise NewtonError(f"linear solve failed in Newton iteration {iteration}: {exc}", residuals) from exc
        theta = theta + delta[:n]
        phi = phi + dofmap.extend(delta[n:])
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(phi))):
            raise NewtonError("non-finite Newton iterate", residuals)

    raise NewtonError(f"no convergence within {cfg.max_iters} iterations", residuals)


def _control_values(problem: ThermistorProblem, control: Any) -> np.ndarray:
    values = np.asarray(getattr(control, "values", control), dtype=float)
    expected = (problem.n_steps + 1, problem.n_control)
    if values.shape != expected:
        raise ValueError(f"control has shape {values.shape}, expected {expected}")
    return values


@log_function(logger)
def solve_forward(problem: ThermistorProblem, control: Any, newton_cfg: Optional[NewtonConfig] = None,
                  theta0: Optional[np.ndarray] = None) -> StateTrajectory:
    """Integrate the coupled system over the whole horizon for one control."""
    cfg = newton_cfg or NewtonConfig()
    values = _control_values(problem, control)
    theta0 = problem.theta0 if theta0 is None else np.asarray(theta0, dtype=float)
    K, n = problem.n_steps, problem.n_vertices

    theta = np.empty((K + 1, n))
    phi = np.empty((K + 1, n))
    theta[0] = theta0
    try:
        phi[0] = solve_potential(problem, theta0, values[0], tol=cfg.potential_tol)
    except LinearSolverError as exc:
        raise ForwardSolveError(0, exc) from exc

    stats = []
    for k in range(1, K + 1):
        try:
            theta[k], phi[k], step_stats = step(problem, theta[k - 1], values[k], cfg)
        except (NewtonError, LinearSolverError) as exc:
            logger.error(f"Forward step {k} failed: {exc}")
            raise ForwardSolveError(k, exc) from exc
        stats.append(step_stats)
        if logger.isEnabledFor(logging.DEBUG):
            balance = energy_balance(problem, theta[k - 1], theta[k], phi[k])
            logger.debug(f"Step {k}: {step_stats.iterations} Newton iterations, energy residual {balance['residual']:.3e}")

    logger.info(
        f"Forward sweep: {K} steps, max {max(s.iterations for s in stats)} Newton iterations, "
        f"min temperature {problem.to_kelvin(theta.min()):.6f} K, max {problem.to_kelvin(theta.max()):.3f} K"
    )
    return StateTrajectory(times=problem.times, theta=theta, phi=phi, control=values.copy(),
                           newton_stats=tuple(stats))


def check_minimum_principle(traj: StateTrajectory, theta_l, theta0, tol: float = 1e-8) -> Dict[str, Any]:
    """Compare the smallest temperature of a trajectory with min(θ_l, min θ₀)."""
    m_inf = float(min(np.min(theta_l), np.min(theta0)))
    min_found = float(np.min(traj.theta))
    violated = bool(min_found < m_inf - tol)
    if violated:
        logger.warning(f"Minimum principle violated: min temperature {min_found:.12g} < {m_inf:.12g}")
    return {"m_inf": m_inf, "min_found": min_found, "violated": violated}


def energy_balance(problem: ThermistorProblem, theta_k: np.ndarray, theta: np.ndarray,
                   phi: np.ndarray) -> Dict[str, float]:
    """Heat bookkeeping of one step, obtained by testing the heat residual with 1.

    ``residual`` = storage − joule + robin, which vanishes up to the Newton
    tolerance because the conduction term integrates to zero.
    """
    storage = float(problem.mass_lumped @ (theta - theta_k) / problem.dt)
    joule = float(problem.joule * assemble_joule_load(problem.mesh, problem.material, theta, phi).sum())
    robin = float(problem.robin_lumped @ theta - problem.robin_load.sum())
    return {"storage": storage, "joule": joule, "robin": robin, "residual": storage - joule + robin}


def energy_balance_residual(problem: ThermistorProblem, traj: StateTrajectory) -> np.ndarray:
    """Per-step energy balance residuals for steps 1..K."""
    return np.array([
        energy_balance(problem, traj.theta[k - 1], traj.theta[k], traj.phi[k])["residual"]
        for k in range(1, traj.n_steps + 1)
    ])


def solve_linearized(problem: ThermistorProblem, traj: StateTrajectory, h: np.ndarray,
                     linear_tol: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
    """Tangent of the discrete control-to-state map in direction ``h``.

    Returns (δθ, δφ), each of shape (K+1, n). The first level of δθ is zero
    because the initial temperature does not depend on the control.
    """
    dofmap = problem.dofmap
    h = _control_values(problem, h)
    K, n = problem.n_steps, problem.n_vertices
    d_theta = np.zeros((K + 1, n))
    d_phi = np.zeros((K + 1, n))
    A0 = assemble_potential_system(problem.mesh, dofmap, problem.material, traj.theta[0])
    load0 = assemble_control_load(problem.mesh, dofmap, h[0], problem.control_weights)
    d_phi[0] = dofmap.extend(cg_solve(A0, dofmap.restrict(load0), tol=linear_tol))
    for k in range(1, K + 1):
        jacobian = step_jacobian(problem, traj.theta[k], traj.phi[k])
        load = assemble_control_load(problem.mesh, dofmap, h[k], problem.control_weights)
        rhs = np.concatenate([problem.mass_lumped * d_theta[k - 1] / problem.dt, dofmap.restrict(load)])
        delta = bicgstab_solve(jacobian, rhs, tol=linear_tol)
        d_theta[k] = delta[:n]
        d_phi[k] = dofmap.extend(delta[n:])
    return d_theta, d_phi


def save_trajectory(path: Union[str, Path], traj: StateTrajectory) -> None:
    """Binary cache: magic, version and sizes, then little-endian float64 arrays."""
    steps, n = traj.theta.shape
    header = TRAJECTORY_MAGIC + struct.pack("<IQQQ", TRAJECTORY_VERSION, steps, n, traj.control.shape[1])
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                       for a in (traj.times, traj.control, traj.theta, traj.phi))
    atomic_write_bytes(path, header + payload)
    logger.info(f"Trajectory cached to {path}")


def load_trajectory(path: Union[str, Path]) -> StateTrajectory:
    data = Path(path).read_bytes()
    head = len(TRAJECTORY_MAGIC) + struct.calcsize("<IQQQ")
    if len(data) < head or not data.startswith(TRAJECTORY_MAGIC):
        raise ValueError(f"{path} is not a trajectory cache")
    version, steps, n, nc = struct.unpack("<IQQQ", data[len(TRAJECTORY_MAGIC):head])
    if version != TRAJECTORY_VERSION:
        raise ValueError(f"unsupported trajectory cache version {version}")
    sizes = (steps, steps * nc, steps * n, steps * n)
    if len(data) != head + 8 * sum(sizes):
        raise ValueError(f"{path} is truncated")
    arrays, offset = [], head
    for size in sizes:
        arrays.append(np.frombuffer(data, dtype="<f8", count=size, offset=offset).astype(float))
        offset += 8 * size
    times, control, theta, phi = arrays
    return StateTrajectory(times=times, theta=theta.reshape(steps, n), phi=phi.reshape(steps, n),
                           control=control.reshape(steps, nc))


class ForwardSolver(BaseSolver[Dict[str, Any]]):
    """
    Integrates the state system for the current control and evaluates the
    penalized objective on the resulting trajectory.
    """
    def invoke(self, state: Dict[str, Any]) -> Dict[str, Any]:
        params = self.settings["params"]
        traj = solve_forward(self.problem, state["control"], self.settings.get("newton"))
        value, breakdown = penalized_objective(self.problem, traj, state["control"], params,
                                               PenaltyState(state["lam"]))
        return {
            "traj": traj,
            "value": value,
            "breakdown": breakdown,
            "n_forward": state.get("n_forward", 0) + 1,
            "calls": self.count_call(state),
        }
