"""Tikhonov normal-equation solvers (direct Cholesky and conjugate gradients).

The reconstruction minimizes
    || T x - y ||^2 + alpha * x^T P x
over R^n, i.e. solves (T^T T + alpha P) x = T^T y.  Both norms reported on
the result use the dt-weighted discrete L2 convention of
:func:`abelscale.operators.grid_norm`; the minimizer itself is invariant
under that choice since both terms rescale together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .hilbert_scale import PenaltyMatrix
from .operators import ForwardOperator, grid_norm

DIRECT_MAX_N = 2000
RIDGE_FACTOR = 1e-14


@dataclass(frozen=True)
class TikhonovProblem:
    forward: ForwardOperator
    penalty: PenaltyMatrix
    alpha: float
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        n = self.forward.n
        data = np.asarray(self.data, dtype=float)
        if self.penalty.n != n or data.shape != (n,):
            raise ValueError(
                f"dimension mismatch: forward n={n}, penalty n={self.penalty.n}, "
                f"data shape={data.shape}"
            )
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class Reconstruction:
    x: np.ndarray = field(repr=False)
    residual_norm: float
    penalty_value: float
    solver_id: str
    iterations: int = 0
    warning: str | None = None
    ridge: float = 0.0


# Below this ratio of the penalty term to the data term the normal
# equations are too ill-conditioned for Cholesky (error ~ eps * cond) and
# the solver switches to a stacked least-squares formulation, which
# avoids squaring the condition number.
STACKED_PATH_RATIO = 1e-2


def _normal_system(problem: TikhonovProblem):
    t = problem.forward.matrix
    a = t.T @ t + problem.alpha * problem.penalty.matrix
    return 0.5 * (a + a.T), t.T @ problem.data


def _finish(problem: TikhonovProblem, x, solver_id, iterations=0,
            warning=None, ridge=0.0) -> Reconstruction:
    dt = problem.forward.grid.dt
    residual = problem.forward.matrix @ x - problem.data
    penalty_value = dt * float(x @ (problem.penalty.matrix @ x))
    return Reconstruction(
        x=x,
        residual_norm=grid_norm(residual, dt),
        penalty_value=max(penalty_value, 0.0),
        solver_id=solver_id,
        iterations=iterations,
        warning=warning,
        ridge=ridge,
    )


def _solve_stacked(problem: TikhonovProblem) -> np.ndarray:
    """Minimize ||Tx - y||^2 + alpha x^T P x as one stacked least squares."""
    t = problem.forward.matrix
    n = t.shape[0]
    stacked = np.vstack([t, np.sqrt(problem.alpha) * problem.penalty.sqrt_matrix])
    rhs = np.concatenate([problem.data, np.zeros(n)])
    x, *_ = scipy.linalg.lstsq(stacked, rhs, lapack_driver="gelsy")
    return x


def solve_direct(problem: TikhonovProblem) -> Reconstruction:
    """Solve the normal equations by Cholesky factorization.

    One step of iterative refinement keeps the normal-equation residual
    near rounding level.  When alpha is so small that the penalty term
    sits below rounding of the data term, the equivalent stacked
    least-squares problem is solved instead (same minimizer, far better
    conditioning).  If the assembled system is numerically indefinite
    despite that, a ridge of 1e-14 * trace is added and recorded.
    """
    t = problem.forward.matrix
    data_scale = float(np.sum(t * t))  # trace of T^T T
    penalty_scale = problem.alpha * float(np.trace(problem.penalty.matrix))
    if data_scale > 0 and penalty_scale < STACKED_PATH_RATIO * data_scale:
        return _finish(problem, _solve_stacked(problem), "direct")

    a, b = _normal_system(problem)
    ridge = 0.0
    warning = None
    for attempt in range(3):
        try:
            factor = scipy.linalg.cho_factor(a)
            break
        except np.linalg.LinAlgError:
            step = RIDGE_FACTOR * float(np.trace(a)) * (1000.0**attempt)
            a = a + step * np.eye(a.shape[0])
            ridge += step
            warning = "singular normal system; ridge fallback applied"
    else:
        raise np.linalg.LinAlgError("normal system not SPD even after ridge fallback")
    x = scipy.linalg.cho_solve(factor, b)
    x = x + scipy.linalg.cho_solve(factor, b - a @ x)
    return _finish(problem, x, "direct", warning=warning, ridge=ridge)


def solve_cg(problem: TikhonovProblem, tol: float = 1e-8,
             max_iter: int | None = None) -> Reconstruction:
    """Solve the normal equations by conjugate gradients.

    Stops when the system residual drops below ``tol`` times the norm of
    the right-hand side; on non-convergence within ``max_iter`` the last
    iterate is returned with a warning flag.
    """
    if not (tol > 0):
        raise ValueError(f"tolerance must be positive, got {tol}")
    a, b = _normal_system(problem)
    count = {"it": 0}

    def _tick(_xk):
        count["it"] += 1

    x, info = scipy.sparse.linalg.cg(a, b, rtol=tol, atol=0.0,
                                     maxiter=max_iter, callback=_tick)
    warning = None
    if info > 0:
        warning = f"cg did not converge within {info} iterations"
    elif info < 0:
        warning = f"cg reported failure (info={info})"
    return _finish(problem, x, "cg", iterations=count["it"], warning=warning)


def solve(problem: TikhonovProblem, solver: str = "auto", **cg_options) -> Reconstruction:
    """Dispatch to the direct solver (n <= 2000) or CG (larger systems)."""
    if solver == "auto":
        solver = "direct" if problem.forward.n <= DIRECT_MAX_N else "cg"
    if solver == "direct":
        return solve_direct(problem)
    if solver == "cg":
        return solve_cg(problem, **cg_options)
    raise ValueError(f"unknown solver {solver!r}")
