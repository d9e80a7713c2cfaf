"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  The rate benchmarks fix the Gaussian amplitude so that the noise
grid delta in [0.005, 0.1] spans the moderate-noise regime where the
power laws are resolvable; seeds are pinned for reproducibility.
"""

import math
import time

import numpy as np
import pytest

from abelscale import (
    CallbackKernel,
    ConstantKernel,
    Grid,
    NoiseModel,
    RatePlan,
    StereologyKernel,
    TruthFunction,
    add_noise,
    apply_forward,
    build_abel_matrix,
    build_penalty,
    build_scale_operator,
    convergence_order,
    discrepancy_alpha,
    factorization_residual,
    grid_norm,
    hs_condition_check,
    oracle_alpha,
    run_rate_study,
    sym_fractional_power,
)

from conftest import gaussian
from test_hilbert_scale import B1_5, B2_7, B3_9

# Signal scales for the rate benchmarks (see module docstring).  The
# saturation experiments need a quieter relative-noise window than the
# rate-reproduction ones, hence the larger scale for criteria 2-3 and the
# wider bump for criterion 4.
BENCH_AMP = 20000 * (0.05 * math.sqrt(math.pi)) ** -0.5
WIDE_SIGMA = 0.1
WIDE_AMP = 100 * (WIDE_SIGMA * math.sqrt(math.pi)) ** -0.5
BENCH_SEED = 5


def report(criterion: str, ok: bool, detail: str) -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    return ok


def test_criterion_1_stencil_fidelity():
    start = time.perf_counter()
    ok = True
    for r, n, expected in ((1, 5, B1_5), (2, 7, B2_7), (3, 9, B3_9)):
        matrix = build_scale_operator(r, Grid(n)).matrix
        ok &= np.array_equal(matrix, expected * float(n) ** (2 * r))
    # the same closures at a larger, representative n
    for r, expected in ((1, B1_5), (2, B2_7), (3, B3_9)):
        n = 100
        matrix = build_scale_operator(r, Grid(n)).matrix / float(n) ** (2 * r)
        k = expected.shape[0] // 2
        ok &= np.array_equal(matrix[:k, : expected.shape[1]], expected[:k])
        ok &= np.array_equal(matrix[-k:, -expected.shape[1]:], expected[-k:])
    elapsed = time.perf_counter() - start
    ok &= elapsed < 1.0
    assert report("criterion 1 (stencil fidelity)", ok,
                  f"r=1,2,3 exact, runtime {elapsed:.3f}s")


@pytest.fixture(scope="module")
def rate_slopes():
    """Criterion-2 studies, shared with the saturation comparison."""
    slopes = {}
    start = time.perf_counter()
    for a in (0.5, 1.0, 1.5):
        plan = RatePlan(
            a=a, p=1.0, seed=BENCH_SEED,
            test_function=TruthFunction("centered_gaussian", amplitude=BENCH_AMP))
        slopes[a] = run_rate_study(plan).fitted_slope
    return slopes, time.perf_counter() - start


def test_criterion_2_rate_reproduction(rate_slopes):
    slopes, elapsed = rate_slopes
    expected = {0.5: 2.5 / 3.0, 1.0: 0.75, 1.5: 0.70}
    ok = all(abs(slopes[a] - expected[a]) <= 0.08 for a in expected)
    ok &= elapsed < 300.0
    assert report(
        "criterion 2 (rate reproduction)", ok,
        ", ".join(f"a={a}: {slopes[a]:.3f} (target {expected[a]:.3f}+-0.08)"
                  for a in sorted(slopes)) + f", runtime {elapsed:.0f}s")


def test_criterion_3_saturation(rate_slopes):
    slopes_c2, _ = rate_slopes
    sat = {}
    for p in (1.0, 2.0):
        plan = RatePlan(
            a=1.0, p=p, seed=BENCH_SEED,
            test_function=TruthFunction("offcenter_gaussian", amplitude=BENCH_AMP))
        sat[p] = run_rate_study(plan).fitted_slope
    gap = abs(sat[1.0] - sat[2.0])
    ok = gap <= 0.05
    ok &= all(0.40 <= s <= 0.65 for s in sat.values())
    ok &= all(s <= slopes_c2[1.0] - 0.05 for s in sat.values())
    assert report(
        "criterion 3 (saturation)", ok,
        f"p=1: {sat[1.0]:.3f}, p=2: {sat[2.0]:.3f}, gap {gap:.3f}, "
        f"centered a=1 slope {slopes_c2[1.0]:.3f}")


def test_criterion_4_operator_choice():
    slopes = {}
    for r in (2, 1):
        plan = RatePlan(
            a=1.5, p=2.0, r=r, seed=BENCH_SEED, alpha_min=1e-24,
            test_function=TruthFunction("offcenter_gaussian", sigma=WIDE_SIGMA,
                                        amplitude=WIDE_AMP))
        slopes[r] = run_rate_study(plan).fitted_slope
    sep = slopes[2] - slopes[1]
    ok = sep >= 0.05
    assert report(
        "criterion 4 (operator choice)", ok,
        f"r=2 penalty: {slopes[2]:.3f}, r=1 penalty: {slopes[1]:.3f}, "
        f"separation {sep:.3f} (need >= 0.05)")


def test_criterion_5_discrete_factorization():
    res1 = {n: factorization_residual(1, Grid(n), (1 - Grid(n).nodes**2) ** 2)
            for n in (100, 200)}
    t200 = Grid(200).nodes
    res2 = factorization_residual(2, Grid(200), 1 - 5 * t200**4 + 4 * t200**5)
    ok = res1[100] <= 0.05
    ok &= res1[100] / res1[200] >= 1.4
    ok &= res2 <= 0.1
    assert report(
        "criterion 5 (discrete factorization)", ok,
        f"r=1: {res1[100]:.2e} @ n=100, ratio {res1[100] / res1[200]:.2f}; "
        f"r=2: {res2:.3f} @ n=200")


def test_criterion_6_quadrature_exactness():
    grid = Grid(100)
    t = grid.nodes
    # a = 1 with affine x (integrand affine in s); a = 2 with constant x
    # (integrand (t-s)*c affine in s) -- the exactly-integrated cases
    op1 = build_abel_matrix(1.0, grid, ConstantKernel())
    y1 = apply_forward(op1, 0.3 + 1.7 * t)
    exact1 = 0.3 * t + 0.85 * t**2
    rel1 = np.max(np.abs(y1 - exact1)) / np.max(np.abs(exact1))
    op2 = build_abel_matrix(2.0, grid, ConstantKernel())
    y2 = apply_forward(op2, np.full(100, 1.3))
    exact2 = 1.3 * t**2 / 2
    rel2 = np.max(np.abs(y2 - exact2)) / np.max(np.abs(exact2))
    est = convergence_order(
        lambda g: build_abel_matrix(0.5, g, ConstantKernel()),
        gaussian, [100, 200, 400])
    ok = rel1 <= 1e-12 and rel2 <= 1e-12
    ok &= 0.8 <= est.order <= 1.5
    assert report(
        "criterion 6 (quadrature exactness)", ok,
        f"a=1 affine rel {rel1:.1e}, a=2 constant rel {rel2:.1e}, "
        f"a=0.5 order {est.order:.2f}")


def test_criterion_7_fractional_power_laws():
    ok = True
    details = []
    for r in (1, 2):
        b = build_scale_operator(r, Grid(100)).matrix
        m = b.T @ b
        scale = np.linalg.norm(m)
        half = sym_fractional_power(m, 0.5)
        err_half = np.linalg.norm(half @ half - m) / scale
        err_split = np.linalg.norm(
            sym_fractional_power(m, 0.3) @ sym_fractional_power(m, 0.7) - m) / scale
        ok &= err_half <= 1e-9 and err_split <= 1e-9
        details.append(f"r={r}: sqrt {err_half:.1e}, 0.3+0.7 {err_split:.1e}")
    assert report("criterion 7 (fractional power laws)", ok, "; ".join(details))


def test_criterion_8_penalty_derivative_consistency():
    grid = Grid(200)
    x = gaussian(grid.nodes)
    pen = build_penalty(1, 1.0, grid).matrix
    quad = grid.dt * x @ (pen @ x)
    deriv = grid.dt * np.sum((np.diff(x) / grid.dt) ** 2)
    rel = abs(quad - deriv) / deriv
    ok = rel <= 0.05
    assert report(
        "criterion 8 (penalty/derivative consistency)", ok,
        f"x P x = {quad:.4f} vs |x'|^2 = {deriv:.4f} ({rel:.2%})")


def test_criterion_9_discrepancy_end_to_end():
    n = 100
    grid = Grid(n)
    fine = Grid(10 * n)
    kernel = StereologyKernel()
    forward = build_abel_matrix(0.5, grid, kernel)
    penalty = build_penalty(1, 1.0, grid)
    y_clean = apply_forward(build_abel_matrix(0.5, fine, kernel),
                            gaussian(fine.nodes))[::10]
    x_true = gaussian(grid.nodes)
    y_noisy = add_noise(y_clean, NoiseModel(0.05, 4))

    alpha_d, rec_d, delta_hat = discrepancy_alpha(y_noisy, forward, penalty,
                                                  quiet_prefix_len=n // 10)
    alpha_o, rec_o, err_o = oracle_alpha(x_true, y_noisy, forward, penalty)
    err_d = grid_norm(rec_d.x - x_true, grid.dt)
    ok = 0.035 <= delta_hat <= 0.065
    ok &= err_d <= 3.0 * err_o
    assert report(
        "criterion 9 (discrepancy end-to-end)", ok,
        f"delta_hat {delta_hat:.4f} (true 0.05), error ratio "
        f"{err_d / err_o:.2f} (need <= 3)")


def test_criterion_10_diagnostics_oracle():
    const = hs_condition_check(ConstantKernel(), 0.5, fine_n=1000, report_n=120)
    shifted = hs_condition_check(
        CallbackKernel(lambda t, s: 1.0 + (t - s), name="shifted"),
        1.0, fine_n=2000, report_n=160)
    stereo = hs_condition_check(StereologyKernel(), 0.5, fine_n=1000, report_n=120)
    target = math.sqrt(0.5)
    rel = abs(shifted.hs_norm_estimate - target) / target
    ok = const.hs_norm_estimate == 0.0 and const.condition_met == "yes"
    ok &= rel <= 0.05 and shifted.condition_met == "yes"
    ok &= stereo.condition_met in ("no", "inconclusive")
    assert report(
        "criterion 10 (diagnostics oracle)", ok,
        f"constant {const.hs_norm_estimate:.1f}/{const.condition_met}, "
        f"shifted {shifted.hs_norm_estimate:.4f} vs {target:.4f} ({rel:.1%}), "
        f"stereology {stereo.condition_met}")
