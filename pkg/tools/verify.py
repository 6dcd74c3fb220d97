"""Reference oracles for verification: dense direct solves and FD derivatives.

Nothing on the optimization path imports this module; it backs the
gradient check subcommand and the test suite.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

logger = logging.getLogger(__name__)

MAX_DENSE_DOFS = 200
DEFAULT_EPS_SWEEP = tuple(np.geomspace(1e-3, 1e-7, 9))


class SingularSystemError(RuntimeError):
    """Raised by the dense oracle; ``pivot`` is the first zero pivot index."""

    def __init__(self, pivot: int):
        super().__init__(f"singular system: zero pivot at index {pivot}")
        self.pivot = pivot


class NonFiniteEvaluationError(RuntimeError):
    """Raised when a function probed by fd_directional returns inf or nan."""


@dataclass(frozen=True)
class DenseSystem:
    matrix: np.ndarray
    rhs: np.ndarray

    @classmethod
    def from_sparse(cls, matrix, rhs) -> "DenseSystem":
        dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
        if dense.shape[0] > MAX_DENSE_DOFS:
            raise ValueError(f"dense mirror limited to {MAX_DENSE_DOFS} dofs, got {dense.shape[0]}")
        return cls(matrix=dense.astype(float), rhs=np.asarray(rhs, dtype=float).copy())


def dense_mirror_solve(system: DenseSystem) -> np.ndarray:
    """LU with partial pivoting on the dense mirror of a sparse system."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(system.matrix, check_finite=True)
    diagonal = np.abs(np.diag(lu))
    tiny = np.finfo(float).eps * max(np.abs(system.matrix).max(initial=0.0), 1.0) * len(diagonal)
    singular = np.flatnonzero(diagonal <= tiny)
    if singular.size:
        raise SingularSystemError(int(singular[0]))
    return lu_solve((lu, piv), system.rhs)


@dataclass(frozen=True)
class FDEstimate:
    """Result of an eps sweep of central differences.

    ``estimate`` is taken at the flattest consecutive pair of the sweep.
    ``plateau_width`` counts consecutive pairs agreeing to ``plateau_tol``.
    ``kink`` is set when one-sided slopes disagree independently of eps.
    """

    estimate: float
    plateau_width: int
    plateau: bool
    kink: bool
    eps: np.ndarray
    differences: np.ndarray


def fd_directional(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    h_direction: np.ndarray,
    eps_sweep: Optional[Sequence[float]] = None,
    plateau_tol: float = 1e-4,
) -> FDEstimate:
    eps = np.asarray(eps_sweep if eps_sweep is not None else DEFAULT_EPS_SWEEP, dtype=float)
    x = np.asarray(x, dtype=float)
    h = np.asarray(h_direction, dtype=float)

    def evaluate(point):
        value = float(f(point))
        if not np.isfinite(value):
            raise NonFiniteEvaluationError(f"non-finite function value {value}")
        return value

    f0 = evaluate(x)
    plus = np.array([evaluate(x + e * h) for e in eps])
    minus = np.array([evaluate(x - e * h) for e in eps])
    central = (plus - minus) / (2.0 * eps)
    forward = (plus - f0) / eps
    backward = (f0 - minus) / eps

    scale = max(np.abs(central).max(), np.abs(forward).max(), np.abs(backward).max(), 1e-300)
    gaps = np.abs(np.diff(central)) / scale
    best = int(np.argmin(gaps))
    estimate = 0.5 * (central[best] + central[best + 1])

    width = 0
    for i in range(len(gaps)):
        run = 0
        while i + run < len(gaps) and gaps[i + run] <= plateau_tol:
            run += 1
        width = max(width, run)

    asymmetry = np.abs(forward - backward)
    kink = bool(asymmetry[0] > 1e-8 * scale and asymmetry[-1] > 0.5 * asymmetry[0])
    if kink:
        logger.warning(f"One-sided slopes disagree at every eps (asymmetry {asymmetry[-1]:.3e}); derivative undefined")

    logger.debug(f"FD sweep: estimate {estimate:.10e}, plateau width {width}, kink={kink}")
    return FDEstimate(
        estimate=float(estimate),
        plateau_width=width,
        plateau=bool(width > 0 and not kink),
        kink=kink,
        eps=eps,
        differences=central,
    )
