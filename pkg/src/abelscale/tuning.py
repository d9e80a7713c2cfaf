"""Noise models, regularization-parameter rules, and convergence-rate studies.

Two data-driven selection rules are provided: an oracle sweep that
minimizes the true reconstruction error (useful only in synthetic
studies, where the truth is known) and a discrepancy rule that estimates
the noise level from a quiet prefix of the signal and picks the largest
alpha whose residual stays within tau times that level.  The a-priori
formula alpha = C * delta^(2(a+p)/(a+q)) is also exposed.

Rate studies sweep noise levels, average reconstruction errors over
replicates, and fit a log-log slope to compare against the theoretical
rate q/(q+a) (with q capped at 2p+a by the penalty order).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .hilbert_scale import PenaltyMatrix, build_penalty
from .operators import (
    ConstantKernel,
    ForwardOperator,
    Grid,
    KERNELS,
    apply_forward,
    build_abel_matrix,
    grid_norm,
)
from .solver import Reconstruction, TikhonovProblem, solve

ALPHA_MIN_DEFAULT = 1e-16
ALPHA_MAX_DEFAULT = 1e4
STEP_FACTOR_DEFAULT = 10.0**0.1


@dataclass(frozen=True)
class NoiseModel:
    """Additive white Gaussian noise of standard deviation delta."""

    delta: float
    seed: int

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"noise level must be >= 0, got {self.delta}")


def add_noise(y: np.ndarray, model: NoiseModel) -> np.ndarray:
    """y + eta with eta ~ N(0, delta^2) i.i.d., reproducible per seed."""
    y = np.asarray(y, dtype=float)
    if model.delta == 0.0:
        return y.copy()
    rng = np.random.default_rng(model.seed)
    return y + rng.normal(0.0, model.delta, size=y.shape)


def _alpha_grid(alpha_min, alpha_max, step_factor):
    if not (alpha_min < alpha_max):
        raise ValueError(f"empty sweep range [{alpha_min}, {alpha_max}]")
    if not (step_factor > 1.0):
        raise ValueError(f"step factor must be > 1, got {step_factor}")
    count = int(math.floor(math.log(alpha_max / alpha_min) / math.log(step_factor))) + 1
    return alpha_min * step_factor ** np.arange(count)


def oracle_alpha(
    x_true: np.ndarray,
    y_noisy: np.ndarray,
    forward: ForwardOperator,
    penalty: PenaltyMatrix,
    alpha_min: float = ALPHA_MIN_DEFAULT,
    alpha_max: float = ALPHA_MAX_DEFAULT,
    step_factor: float = STEP_FACTOR_DEFAULT,
    patience: int = 5,
    solver: str = "direct",
) -> tuple[float, Reconstruction, float]:
    """Best-achievable alpha: sweep a log grid, minimize the true error.

    The sweep walks upward from ``alpha_min`` and stops early once the
    error has increased for ``patience`` consecutive steps.  Returns the
    minimizing (alpha, reconstruction, error).
    """
    x_true = np.asarray(x_true, dtype=float)
    dt = forward.grid.dt
    best = None
    prev_err = None
    rising = 0
    for alpha in _alpha_grid(alpha_min, alpha_max, step_factor):
        rec = solve(TikhonovProblem(forward, penalty, float(alpha), y_noisy), solver)
        err = grid_norm(rec.x - x_true, dt)
        if best is None or err < best[2]:
            best = (float(alpha), rec, err)
        if prev_err is not None and err > prev_err:
            rising += 1
            if rising >= patience:
                break
        else:
            rising = 0
        prev_err = err
    return best


def discrepancy_alpha(
    y_noisy: np.ndarray,
    forward: ForwardOperator,
    penalty: PenaltyMatrix,
    quiet_prefix_len: int,
    tau: float = 1.1,
    alpha_min: float = ALPHA_MIN_DEFAULT,
    alpha_max: float = ALPHA_MAX_DEFAULT,
    step_factor: float = STEP_FACTOR_DEFAULT,
    solver: str = "direct",
) -> tuple[float, Reconstruction, float]:
    """A-posteriori rule: match the residual to the estimated noise level.

    The noise level is estimated as the sample standard deviation over
    the first ``quiet_prefix_len`` samples (assumed pure noise), and the
    rule picks the largest swept alpha whose dt-weighted residual stays
    at or below tau times that level.  When no alpha qualifies, the alpha
    with residual closest to the target is returned and the
    reconstruction carries a warning flag.
    """
    if quiet_prefix_len < 10:
        raise ValueError(f"quiet prefix needs >= 10 samples, got {quiet_prefix_len}")
    if tau < 1.0:
        raise ValueError(f"tau must be >= 1, got {tau}")
    y_noisy = np.asarray(y_noisy, dtype=float)
    n = forward.n
    delta_hat = float(np.std(y_noisy[:quiet_prefix_len], ddof=1))
    # dt-weighted norm of an n-vector of i.i.d. noise of std delta_hat.
    target = tau * delta_hat * math.sqrt(n * forward.grid.dt)

    closest = None
    for alpha in _alpha_grid(alpha_min, alpha_max, step_factor)[::-1]:
        rec = solve(TikhonovProblem(forward, penalty, float(alpha), y_noisy), solver)
        gap = abs(rec.residual_norm - target)
        if closest is None or gap < closest[2]:
            closest = (float(alpha), rec, gap)
        if rec.residual_norm <= target:
            return float(alpha), rec, delta_hat
    alpha, rec, _ = closest
    rec = replace(rec, warning="no alpha in range met the discrepancy criterion")
    return alpha, rec, delta_hat


def apriori_alpha(delta: float, a: float, p: float, q: float, scale: float = 1.0) -> float:
    """alpha(delta) = scale * delta^(2(a+p)/(a+q))."""
    if not (delta > 0):
        raise ValueError(f"delta must be positive, got {delta}")
    if not (q > 0):
        raise ValueError(f"smoothness q must be positive, got {q}")
    return scale * delta ** (2.0 * (a + p) / (a + q))


@dataclass(frozen=True)
class SlopeInfo:
    slope: float
    p_star: float | None
    saturated: bool


def theoretical_slope(a: float, p: float, q: float | None = None) -> SlopeInfo:
    """Expected log-log convergence rate of the reconstruction error.

    With truth smoothness q the error scales as delta^(q/(q+a)) as long
    as the penalty order satisfies p >= p* = (q-a)/2; beyond p* the rate
    saturates at that value.  For numerically compactly supported truths
    (q = None, effectively unlimited smoothness) the attainable rate is
    limited by the penalty order alone: (2p+a)/(2p+2a).
    """
    if not (a > 0):
        raise ValueError(f"order must be positive, got a={a}")
    if q is None or math.isinf(q):
        return SlopeInfo(slope=(2.0 * p + a) / (2.0 * p + 2.0 * a),
                         p_star=None, saturated=False)
    p_star = (q - a) / 2.0
    if p >= p_star:
        return SlopeInfo(slope=q / (q + a), p_star=p_star, saturated=True)
    q_eff = 2.0 * p + a
    return SlopeInfo(slope=q_eff / (q_eff + a), p_star=p_star, saturated=False)


def fit_loglog_slope(points) -> tuple[float, float, float]:
    """Ordinary least squares on (log delta, log error).

    Returns (slope, intercept, r_squared); needs >= 4 strictly positive
    points.
    """
    pts = [(float(d), float(e)) for d, e in points]
    if len(pts) < 4:
        raise ValueError(f"need >= 4 points for a slope fit, got {len(pts)}")
    if any(d <= 0 or e <= 0 for d, e in pts):
        raise ValueError("slope fit requires strictly positive deltas and errors")
    log_d = np.log([d for d, _ in pts])
    log_e = np.log([e for _, e in pts])
    slope, intercept = np.polyfit(log_d, log_e, 1)
    fitted = slope * log_d + intercept
    ss_res = float(np.sum((log_e - fitted) ** 2))
    ss_tot = float(np.sum((log_e - np.mean(log_e)) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r_squared


@dataclass(frozen=True)
class TruthFunction:
    """Ground-truth shapes for the synthetic benchmarks.

    The Gaussian kinds use sigma = 0.05 by default so boundary values are
    at most exp(-50) and the function is numerically compactly supported
    when centered.  By default they are scaled to unit L2 norm
    (amplitude (sigma sqrt(pi))^(-1/2)), which fixes the meaning of the
    noise levels delta relative to the signal.
    """

    kind: str = "centered_gaussian"
    center: float | None = None
    sigma: float = 0.05
    amplitude: float | None = None
    func: object = None

    _CENTERS = {"centered_gaussian": 0.5, "offcenter_gaussian": 0.2}

    def values(self, nodes: np.ndarray) -> np.ndarray:
        if self.kind == "custom":
            if self.func is None:
                raise ValueError("custom test function needs a callable")
            return np.asarray(self.func(nodes), dtype=float)
        if self.kind not in self._CENTERS:
            raise ValueError(f"unknown test function kind {self.kind!r}")
        center = self.center if self.center is not None else self._CENTERS[self.kind]
        if self.amplitude is None:
            amplitude = (self.sigma * math.sqrt(math.pi)) ** -0.5
        else:
            amplitude = self.amplitude
        return amplitude * np.exp(-((nodes - center) ** 2) / (2.0 * self.sigma**2))


@dataclass(frozen=True)
class RatePlan:
    """Configuration of one rate study."""

    a: float
    p: float
    r: int | None = None
    q: float | None = None
    test_function: TruthFunction = TruthFunction()
    deltas: tuple[float, ...] = tuple(np.geomspace(0.005, 0.1, 8))
    replicates: int = 5
    alpha_rule: str = "oracle"
    n: int = 100
    seed: int = 0
    solver: str = "direct"
    kernel: str = "constant"
    data_oversample: int = 1
    alpha_fixed: float | None = None
    apriori_scale: float = 1.0
    tau: float = 1.1
    prefix_fraction: float = 0.1
    alpha_min: float = ALPHA_MIN_DEFAULT
    alpha_max: float = ALPHA_MAX_DEFAULT

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        object.__setattr__(self, "deltas", deltas)
        if len(deltas) < 4 or any(d <= 0 for d in deltas):
            raise ValueError("need >= 4 strictly positive noise levels")
        if max(deltas) / min(deltas) < 10.0:
            raise ValueError("noise levels must span at least one decade")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.alpha_rule not in ("oracle", "discrepancy", "apriori", "fixed"):
            raise ValueError(f"unknown alpha rule {self.alpha_rule!r}")

    @property
    def scale_index(self) -> int:
        return self.r if self.r is not None else math.ceil(self.a)


@dataclass(frozen=True)
class RateStudyResult:
    points: tuple[tuple[float, float, float], ...]
    fitted_slope: float
    theoretical_slope: float
    p_star: float | None
    alpha_trace: tuple[float, ...]
    errors: tuple[tuple[float, ...], ...]
    plan: RatePlan


class RateStudyError(RuntimeError):
    """Raised when a solve inside a rate study fails; carries partial points."""

    def __init__(self, message, partial_points):
        super().__init__(message)
        self.partial_points = partial_points


def _cell_seed(seed: int, delta_index: int, replicate: int) -> int:
    return int(np.random.SeedSequence((seed, delta_index, replicate)).generate_state(1)[0])


def _worker_count(n_cells: int) -> int:
    raw = os.environ.get("ABELSCALE_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError:
        threads = 1
    return max(1, min(threads, n_cells))


def run_rate_study(plan: RatePlan) -> RateStudyResult:
    """Execute a rate study: noise sweep, alpha selection, slope fit.

    Deterministic for a fixed plan: every (delta, replicate) cell derives
    its own RNG seed from the plan seed, so the result is identical
    regardless of the number of worker threads.
    """
    grid = Grid(plan.n)
    kernel = KERNELS.get(plan.kernel, ConstantKernel)()
    r = plan.scale_index
    forward = build_abel_matrix(plan.a, grid, kernel)
    penalty = build_penalty(r, plan.p, grid)
    x_true = plan.test_function.values(grid.nodes)

    if plan.data_oversample > 1:
        fine = Grid(plan.data_oversample * plan.n)
        y_clean = apply_forward(
            build_abel_matrix(plan.a, fine, kernel),
            plan.test_function.values(fine.nodes),
        )[:: plan.data_oversample]
    else:
        y_clean = apply_forward(forward, x_true)

    prefix_len = max(10, int(round(plan.prefix_fraction * plan.n)))

    def run_cell(di: int, rep: int):
        delta = plan.deltas[di]
        model = NoiseModel(delta=delta, seed=_cell_seed(plan.seed, di, rep))
        y_noisy = add_noise(y_clean, model)
        if plan.alpha_rule == "oracle":
            alpha, rec, _ = oracle_alpha(x_true, y_noisy, forward, penalty,
                                         alpha_min=plan.alpha_min,
                                         alpha_max=plan.alpha_max,
                                         solver=plan.solver)
        elif plan.alpha_rule == "discrepancy":
            alpha, rec, _ = discrepancy_alpha(y_noisy, forward, penalty,
                                              quiet_prefix_len=prefix_len,
                                              tau=plan.tau,
                                              alpha_min=plan.alpha_min,
                                              alpha_max=plan.alpha_max,
                                              solver=plan.solver)
        elif plan.alpha_rule == "apriori":
            if plan.q is None:
                raise ValueError("a-priori rule needs the smoothness q")
            alpha = apriori_alpha(delta, plan.a, plan.p, plan.q, plan.apriori_scale)
            rec = solve(TikhonovProblem(forward, penalty, alpha, y_noisy), plan.solver)
        else:
            if plan.alpha_fixed is None:
                raise ValueError("fixed rule needs alpha_fixed")
            alpha = plan.alpha_fixed
            rec = solve(TikhonovProblem(forward, penalty, alpha, y_noisy), plan.solver)
        return grid_norm(rec.x - x_true, grid.dt), alpha

    cells = [(di, rep) for di in range(len(plan.deltas)) for rep in range(plan.replicates)]
    results = {}
    workers = _worker_count(len(cells))
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for cell, res in zip(cells, pool.map(lambda c: run_cell(*c), cells)):
                    results[cell] = res
        else:
            for cell in cells:
                results[cell] = run_cell(*cell)
    except (np.linalg.LinAlgError, ValueError) as exc:
        done = sorted({di for (di, _rep) in results})
        partial = [
            (plan.deltas[di],
             float(np.mean([results[(di, rep)][0] for rep in range(plan.replicates)
                            if (di, rep) in results])))
            for di in done
        ]
        raise RateStudyError(f"rate study aborted: {exc}", partial) from exc

    points = []
    alpha_trace = []
    errors = []
    for di, delta in enumerate(plan.deltas):
        errs = np.array([results[(di, rep)][0] for rep in range(plan.replicates)])
        alphas = np.array([results[(di, rep)][1] for rep in range(plan.replicates)])
        points.append((delta, float(np.mean(errs)), float(np.std(errs))))
        alpha_trace.append(float(np.exp(np.mean(np.log(alphas)))))
        errors.append(tuple(float(e) for e in errs))

    slope, _intercept, _r2 = fit_loglog_slope([(d, e) for d, e, _ in points])
    info = theoretical_slope(plan.a, plan.p, plan.q)
    return RateStudyResult(
        points=tuple(points),
        fitted_slope=slope,
        theoretical_slope=info.slope,
        p_star=info.p_star,
        alpha_trace=tuple(alpha_trace),
        errors=tuple(errors),
        plan=plan,
    )
