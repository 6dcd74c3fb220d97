"""Projected Dai–Yuan nonlinear conjugate gradients with Armijo backtracking."""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Optional, Tuple, Type

import numpy as np

logger = logging.getLogger(__name__)

Inner = Callable[[np.ndarray, np.ndarray], float]


def euclidean_inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.vdot(a, b))


@dataclass(frozen=True)
class OptimizerConfig:
    """Inner NCG loop and outer penalty continuation settings.

    ``initial_control_fraction`` sets the start iterate to that fraction of
    the current bound on interior levels (0 keeps the stationary point u ≡ 0).
    """

    max_ncg_iters: int = 150
    rel_obj_tol: float = 1e-5
    grad_tol: float = 1e-12
    lambda_schedule: Tuple[float, ...] = tuple(10.0**i for i in range(11))
    violation_stop_K: float = 1e-2
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_trials: int = 30
    initial_step: float = 1.0
    step_growth: float = 2.0
    restart_every: int = 50
    dy_eps: float = 1e-14
    initial_control_fraction: float = 0.05

    def __post_init__(self):
        positive = ("rel_obj_tol", "grad_tol", "violation_stop_K", "armijo_c1", "initial_step", "step_growth", "dy_eps")
        for name in positive:
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError(f"backtrack must lie in (0, 1), got {self.backtrack}")
        if self.max_ncg_iters < 1 or self.max_trials < 1 or self.restart_every < 1:
            raise ValueError("iteration limits must be at least 1")
        schedule = np.asarray(self.lambda_schedule, dtype=float)
        if schedule.size == 0 or np.any(schedule < 0.0) or np.any(np.diff(schedule) <= 0.0):
            raise ValueError("lambda_schedule must be a nonempty, strictly increasing, nonnegative sequence")
        if not 0.0 <= self.initial_control_fraction <= 1.0:
            raise ValueError("initial_control_fraction must lie in [0, 1]")


def dai_yuan_direction(g: np.ndarray, g_prev: Optional[np.ndarray], d_prev: Optional[np.ndarray],
                       inner: Inner = euclidean_inner, eps: float = 1e-14) -> np.ndarray:
    """Dai–Yuan update d = −g + β d_prev with β = ‖g‖² / d_prevᵀ(g − g_prev).

    Falls back to steepest descent on the first iteration, when the
    denominator is not safely positive, and when the update is not a descent
    direction.
    """
    if g_prev is None or d_prev is None:
        return -g
    gg = inner(g, g)
    denominator = inner(d_prev, g - g_prev)
    scale = max(gg, np.sqrt(inner(d_prev, d_prev) * inner(g - g_prev, g - g_prev)), np.finfo(float).tiny)
    if denominator <= eps * scale:
        logger.warning(f"Dai-Yuan denominator {denominator:.3e} too small, restarting with steepest descent")
        return -g
    d = -g + (gg / denominator) * d_prev
    if inner(d, g) >= 0.0:
        logger.warning("Dai-Yuan direction is not a descent direction, restarting with steepest descent")
        return -g
    return d


@dataclass(frozen=True)
class LineSearchResult:
    """Outcome of a projected backtracking search.

    ``status`` is ``accepted``, ``stagnation`` (no trial met the Armijo
    condition) or ``no_progress`` (the projected step is zero).
    """

    status: str
    alpha: float
    u: np.ndarray
    value: float
    trials: int
    payload: Any = None

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"


def line_search(
    evaluate: Callable[[np.ndarray], Any],
    u: np.ndarray,
    d: np.ndarray,
    g: np.ndarray,
    value0: float,
    cfg: OptimizerConfig,
    alpha0: Optional[float] = None,
    project: Callable[[np.ndarray], np.ndarray] = lambda x: x,
    inner: Inner = euclidean_inner,
    recoverable: Tuple[Type[BaseException], ...] = (),
) -> LineSearchResult:
    """Armijo backtracking along the projected arc u(α) = P(u + α d).

    Accepts the first α with j(u(α)) ≤ j(u) + c₁⟨g, u(α) − u⟩. ``evaluate``
    returns the objective value or a (value, payload) pair; exceptions listed
    in ``recoverable`` count as an infinite objective.
    """
    alpha = cfg.initial_step if alpha0 is None else alpha0
    for trial in range(1, cfg.max_trials + 1):
        candidate = project(u + alpha * d)
        step = candidate - u
        if not np.any(step):
            logger.info(f"Projected step is zero at alpha={alpha:.3e}; no progress possible")
            return LineSearchResult("no_progress", alpha, u, value0, trial)
        slope = inner(g, step)
        if slope < 0.0:
            try:
                result = evaluate(candidate)
            except recoverable as exc:
                logger.warning(f"Trial alpha={alpha:.3e} rejected: {exc}")
                result = np.inf
            value, payload = result if isinstance(result, tuple) else (result, None)
            logger.debug(f"Line search trial {trial}: alpha={alpha:.3e} value={value:.12e} slope={slope:.3e}")
            if np.isfinite(value) and value <= value0 + cfg.armijo_c1 * slope:
                return LineSearchResult("accepted", alpha, candidate, float(value), trial, payload)
        alpha *= cfg.backtrack
    logger.warning(f"Line search stagnated after {cfg.max_trials} trials")
    return LineSearchResult("stagnation", alpha, u, value0, cfg.max_trials)
