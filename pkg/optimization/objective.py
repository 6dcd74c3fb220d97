"""Reduced objective, Moreau–Yosida penalty and reduced gradient.

All quantities are evaluated on the scaled problem. With ``m`` the lumped
mass, ``mb`` the lumped contact mass and ``M_E`` the design-region mass:

    tracking  = ½ eᵀ M_E e,                e = θ_K − θ_d
    gradient  = (γ/s) Σ_{k=1..K} dt Q_k^{s/q},   Q_k = Σ_e V_e |∇θ_k|^q
    tikhonov  = (β/2) [Σ_{k<K} dt mbᵀ(Du_k)² + Σ_k dt mbᵀ|u_k|^p]
    penalty   = (λ/2) Σ_{k=1..K} dt mᵀ (θ_k − θ_max)_+²

Gradients are Riesz representatives for ⟨a, b⟩ = Σ_k dt aᵀ diag(mb) b.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Tuple, Union

import numpy as np

from solvers.problem import ThermistorProblem
from tools.fem import gradient_lq_power

logger = logging.getLogger(__name__)


class GridMismatchError(ValueError):
    """Control and trajectory live on different time grids or contacts."""


@dataclass(frozen=True)
class ObjectiveParams:
    """Objective weights and bounds in physical units (K, A/m²).

    ``theta_d`` may be a scalar or one value per vertex; ``theta_max`` a
    scalar, one value per vertex, or a (K+1) × n space-time field.
    """

    theta_d: Union[float, np.ndarray] = 1500.0
    theta_max: Union[float, np.ndarray] = 1700.0
    u_max: float = 1e8
    gamma: float = 1e-8
    beta: float = 1e-5
    s_exp: float = 2.0
    q_exp: float = 2.0
    p_exp: float = 4.0

    def __post_init__(self):
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.s_exp < 2.0 or self.q_exp < 2.0:
            raise ValueError(f"norm exponents must be at least 2, got s={self.s_exp}, q={self.q_exp}")
        if not self.p_exp > 2.0:
            raise ValueError(f"p exponent must exceed 2, got {self.p_exp}")
        if self.u_max < 0.0:
            raise ValueError(f"u_max must be nonnegative, got {self.u_max}")

    def scaled_targets(self, problem: ThermistorProblem) -> Tuple[np.ndarray, np.ndarray, float]:
        """(θ_d, θ_max, u_max) in the scaled units of ``problem``."""
        s = problem.scaling
        return (np.asarray(self.theta_d, dtype=float) / s.theta_ref,
                np.asarray(self.theta_max, dtype=float) / s.theta_ref,
                float(self.u_max) / s.u_ref)

    def check_admissible_start(self, problem: ThermistorProblem) -> None:
        start = max(float(np.max(problem.theta0)), problem.theta_l)
        theta_max = np.asarray(self.theta_max, dtype=float) / problem.scaling.theta_ref
        first = theta_max[0] if theta_max.ndim == 2 else theta_max
        if np.any(first < start):
            raise ValueError("theta_max must not lie below the initial and ambient temperatures")


@dataclass(frozen=True, eq=False)
class ControlField:
    """Scaled boundary current at the control vertices, one row per time level."""

    values: np.ndarray
    times: np.ndarray

    @classmethod
    def zeros(cls, problem: ThermistorProblem) -> "ControlField":
        return cls(problem.zero_control(), problem.times)

    def to_physical(self, problem: ThermistorProblem) -> np.ndarray:
        return self.values * problem.scaling.u_ref


@dataclass(frozen=True)
class PenaltyState:
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError(f"penalty parameter must be nonnegative, got {self.lam}")

    def multiplier(self, problem: ThermistorProblem, traj: Any, params: ObjectiveParams) -> np.ndarray:
        """λ(θ − θ_max)_+ at every node and time level."""
        return self.lam * excess(problem, traj, params)


def _values(control: Any) -> np.ndarray:
    return np.asarray(getattr(control, "values", control), dtype=float)


def _check_grid(problem: ThermistorProblem, traj: Any, control: Any) -> np.ndarray:
    values = _values(control)
    if values.shape != (problem.n_steps + 1, problem.n_control):
        raise GridMismatchError(f"control shape {values.shape} does not match "
                                f"({problem.n_steps + 1}, {problem.n_control})")
    if traj is not None and traj.theta.shape[0] != values.shape[0]:
        raise GridMismatchError(f"trajectory has {traj.theta.shape[0]} levels, control {values.shape[0]}")
    return values


def excess(problem: ThermistorProblem, traj: Any, params: ObjectiveParams) -> np.ndarray:
    """(θ − θ_max)_+ per time level and node, scaled units."""
    _, theta_max, _ = params.scaled_targets(problem)
    return np.maximum(traj.theta - theta_max, 0.0)


def eval_objective(problem: ThermistorProblem, traj: Any, control: Any,
                   params: ObjectiveParams) -> Dict[str, float]:
    values = _check_grid(problem, traj, control)
    theta_d, _, _ = params.scaled_targets(problem)
    dt, mb = problem.dt, problem.control_weights

    error = traj.theta[-1] - theta_d
    tracking = 0.5 * float(error @ (problem.design_mass @ error))

    gradient_term = 0.0
    if params.gamma > 0.0:
        powers = np.array([gradient_lq_power(problem.mesh, traj.theta[k], params.q_exp)
                           for k in range(1, problem.n_steps + 1)])
        gradient_term = params.gamma / params.s_exp * dt * float(np.sum(powers ** (params.s_exp / params.q_exp)))

    du = np.diff(values, axis=0) / dt
    tikhonov = 0.5 * params.beta * dt * float(np.sum((du**2) @ mb) + np.sum((np.abs(values) ** params.p_exp) @ mb))

    return {
        "tracking": tracking,
        "gradient_term": gradient_term,
        "tikhonov": tikhonov,
        "total": tracking + gradient_term + tikhonov,
    }


def eval_penalty(problem: ThermistorProblem, traj: Any, penalty_state: PenaltyState,
                 params: ObjectiveParams) -> Dict[str, float]:
    over = excess(problem, traj, params)
    value = 0.5 * penalty_state.lam * problem.dt * float(np.sum((over[1:] ** 2) @ problem.mass_lumped))
    return {"value": value, "max_violation_K": float(problem.to_kelvin(over.max()))}


def penalized_objective(problem: ThermistorProblem, traj: Any, control: Any, params: ObjectiveParams,
                        penalty_state: PenaltyState) -> Tuple[float, Dict[str, float]]:
    """Objective plus penalty, with the breakdown of every term."""
    breakdown = eval_objective(problem, traj, control, params)
    penalty = eval_penalty(problem, traj, penalty_state, params)
    breakdown["penalty"] = penalty["value"]
    breakdown["max_violation_K"] = penalty["max_violation_K"]
    value = breakdown["total"] + penalty["value"]
    breakdown["penalized"] = value
    return value, breakdown


def tikhonov_gradient(problem: ThermistorProblem, values: np.ndarray, params: ObjectiveParams) -> np.ndarray:
    """β(−D_tt u) + β(p/2)|u|^{p−2}u on interior levels, zero on the pinned end levels."""
    dt = problem.dt
    grad = np.zeros_like(values)
    interior = values[1:-1]
    second = (values[2:] - 2.0 * interior + values[:-2]) / dt**2
    grad[1:-1] = params.beta * (-second + 0.5 * params.p_exp * np.abs(interior) ** (params.p_exp - 2.0) * interior)
    return grad


def reduced_gradient(problem: ThermistorProblem, control: Any, adj: Any, params: ObjectiveParams) -> np.ndarray:
    """Reduced gradient G_k = tikhonov part + ψ_k on the contact, pinned to 0 at both ends."""
    values = _check_grid(problem, None, control)
    grad = tikhonov_gradient(problem, values, params)
    grad[1:-1] += adj.boundary_trace_psi[1:-1]
    return grad


def project_control(control: Any, u_max: float) -> np.ndarray:
    """Clamp to [0, u_max] and pin the first and last level to zero."""
    projected = np.clip(_values(control), 0.0, u_max)
    projected[0] = 0.0
    projected[-1] = 0.0
    return projected


def control_inner(problem: ThermistorProblem, a: np.ndarray, b: np.ndarray) -> float:
    """⟨a, b⟩ = Σ_k dt aᵀ diag(mb) b on the contact."""
    return float(problem.dt * np.sum((np.asarray(a) * np.asarray(b)) @ problem.control_weights))


def initial_control(problem: ThermistorProblem, params: ObjectiveParams, fraction: float) -> np.ndarray:
    """Constant fraction of the scaled current bound on interior levels."""
    _, _, u_max = params.scaled_targets(problem)
    values = np.full((problem.n_steps + 1, problem.n_control), fraction * u_max)
    return project_control(values, u_max)
