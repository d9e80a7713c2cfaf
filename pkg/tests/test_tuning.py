import dataclasses
import math
import os

import numpy as np
import pytest

from abelscale import (
    ConstantKernel,
    Grid,
    NoiseModel,
    RatePlan,
    StereologyKernel,
    TruthFunction,
    add_noise,
    apply_forward,
    apriori_alpha,
    build_abel_matrix,
    build_penalty,
    discrepancy_alpha,
    fit_loglog_slope,
    grid_norm,
    oracle_alpha,
    run_rate_study,
    theoretical_slope,
)

from conftest import gaussian


class TestAddNoise:
    def test_zero_delta_is_identity(self):
        y = np.linspace(0, 1, 50)
        out = add_noise(y, NoiseModel(0.0, 7))
        assert np.array_equal(out, y)

    def test_seed_determinism(self):
        y = np.zeros(1000)
        a = add_noise(y, NoiseModel(0.05, 123))
        b = add_noise(y, NoiseModel(0.05, 123))
        assert np.array_equal(a, b)
        c = add_noise(y, NoiseModel(0.05, 124))
        assert not np.array_equal(a, c)

    def test_sample_std_matches_delta(self):
        eta = add_noise(np.zeros(10000), NoiseModel(0.05, 0))
        assert 0.049 <= np.std(eta, ddof=1) <= 0.051

    def test_rejects_negative_delta(self):
        with pytest.raises(ValueError):
            NoiseModel(-0.1, 0)


class TestOracleAlpha:
    def test_noise_free_p0_picks_smallest_alpha(self, benchmark):
        penalty = build_penalty(1, 0.0, benchmark["grid"])
        alpha, rec, err = oracle_alpha(benchmark["x_true"], benchmark["y_clean"],
                                       benchmark["forward"], penalty)
        assert alpha == pytest.approx(1e-16)

    def test_returned_error_is_the_minimum_over_sweep(self, benchmark):
        # definitional: re-sweep the same grid, no swept alpha beats it
        alpha, rec, err = oracle_alpha(benchmark["x_true"], benchmark["y_noisy"],
                                       benchmark["forward"], benchmark["penalty"])
        from abelscale.solver import TikhonovProblem, solve_direct
        dt = benchmark["grid"].dt
        for la in np.arange(-16, 4.01, 0.5):
            r = solve_direct(TikhonovProblem(benchmark["forward"],
                                             benchmark["penalty"], 10.0**la,
                                             benchmark["y_noisy"]))
            assert err <= grid_norm(r.x - benchmark["x_true"], dt) + 1e-12

    def test_rejects_empty_range(self, benchmark):
        with pytest.raises(ValueError, match="sweep"):
            oracle_alpha(benchmark["x_true"], benchmark["y_noisy"],
                         benchmark["forward"], benchmark["penalty"],
                         alpha_min=1.0, alpha_max=0.1)

    def test_rejects_bad_step_factor(self, benchmark):
        with pytest.raises(ValueError, match="step factor"):
            oracle_alpha(benchmark["x_true"], benchmark["y_noisy"],
                         benchmark["forward"], benchmark["penalty"],
                         step_factor=0.9)


class TestDiscrepancyAlpha:
    def test_noise_free_zero_prefix_drives_alpha_down(self):
        grid = Grid(100)
        x = np.where(grid.nodes >= 0.35, gaussian(grid.nodes), 0.0)
        forward = build_abel_matrix(1.0, grid, ConstantKernel())
        penalty = build_penalty(1, 1.0, grid)
        y = apply_forward(forward, x)
        assert np.all(y[:10] == 0.0)
        alpha, rec, delta_hat = discrepancy_alpha(y, forward, penalty,
                                                  quiet_prefix_len=10)
        assert delta_hat == 0.0
        assert alpha == pytest.approx(1e-16)
        assert rec.warning is not None

    def test_prefix_too_short(self, benchmark):
        with pytest.raises(ValueError, match="prefix"):
            discrepancy_alpha(benchmark["y_noisy"], benchmark["forward"],
                              benchmark["penalty"], quiet_prefix_len=5)

    def test_rejects_tau_below_one(self, benchmark):
        with pytest.raises(ValueError, match="tau"):
            discrepancy_alpha(benchmark["y_noisy"], benchmark["forward"],
                              benchmark["penalty"], quiet_prefix_len=10, tau=0.5)

    def test_residual_tracks_noise_level(self, benchmark):
        alpha, rec, delta_hat = discrepancy_alpha(
            benchmark["y_noisy"], benchmark["forward"], benchmark["penalty"],
            quiet_prefix_len=10)
        assert rec.warning is None
        assert rec.residual_norm <= 1.1 * delta_hat
        # the next larger swept alpha would overshoot the band
        from abelscale.solver import TikhonovProblem, solve_direct
        r_up = solve_direct(TikhonovProblem(benchmark["forward"],
                                            benchmark["penalty"],
                                            alpha * 10.0**0.1,
                                            benchmark["y_noisy"]))
        assert r_up.residual_norm > 1.1 * delta_hat


class TestStereologyDiscrepancyBenchmark:
    def test_prefix_estimate_and_error_ratio(self):
        # data generated on a 10x grid, subsampled, noise delta = 0.05
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
        assert 0.035 <= delta_hat <= 0.065
        alpha_o, rec_o, err_o = oracle_alpha(x_true, y_noisy, forward, penalty)
        err_d = grid_norm(rec_d.x - x_true, grid.dt)
        assert err_d <= 3.0 * err_o


class TestAprioriAlpha:
    def test_formula_values(self):
        assert apriori_alpha(0.1, a=1, p=1, q=2) == pytest.approx(0.1 ** (4.0 / 3.0))
        assert apriori_alpha(1.0, a=0.7, p=1.2, q=2.0, scale=3.5) == pytest.approx(3.5)
        # exponent 2(a+p)/(a+q) = 1 for a=0.5, p=1, q=2.5
        assert apriori_alpha(0.02, a=0.5, p=1, q=2.5) == pytest.approx(0.02)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            apriori_alpha(0.0, 1, 1, 2)
        with pytest.raises(ValueError):
            apriori_alpha(0.1, 1, 1, q=0.0)


class TestTheoreticalSlope:
    def test_compact_support_rates(self):
        assert theoretical_slope(0.5, 1.0).slope == pytest.approx(2.5 / 3.0)
        assert theoretical_slope(1.0, 1.0).slope == pytest.approx(0.75)
        assert theoretical_slope(1.5, 1.0).slope == pytest.approx(0.70)

    def test_saturated_regime(self):
        info = theoretical_slope(1.0, 1.0, q=1.5)
        assert info.saturated
        assert info.slope == pytest.approx(0.6)
        assert info.p_star == pytest.approx(0.25)

    def test_underpenalized_regime(self):
        info = theoretical_slope(1.0, 0.1, q=3.0)
        assert not info.saturated
        # attainable smoothness is capped at 2p + a = 1.2
        assert info.slope == pytest.approx(1.2 / 2.2)

    def test_rejects_nonpositive_order(self):
        with pytest.raises(ValueError):
            theoretical_slope(0.0, 1.0)


class TestFitLoglogSlope:
    def test_exact_power_law(self):
        d = np.geomspace(0.001, 0.1, 6)
        slope, intercept, r2 = fit_loglog_slope(list(zip(d, d**0.75)))
        assert slope == pytest.approx(0.75)
        assert r2 == pytest.approx(1.0)

    def test_linear_with_prefactor(self):
        d = np.geomspace(0.01, 1.0, 5)
        slope, intercept, r2 = fit_loglog_slope(list(zip(d, 3.0 * d)))
        assert slope == pytest.approx(1.0)
        assert intercept == pytest.approx(np.log(3.0))

    def test_jittered_power_law(self):
        rng = np.random.default_rng(12)
        d = np.geomspace(0.01, 0.3, 8)
        e = d**0.6 * (1 + 0.05 * rng.uniform(-1, 1, 8))
        slope, _, _ = fit_loglog_slope(list(zip(d, e)))
        assert 0.55 <= slope <= 0.65

    def test_needs_four_points(self):
        with pytest.raises(ValueError):
            fit_loglog_slope([(0.1, 1.0), (0.2, 2.0), (0.4, 3.0)])

    def test_rejects_nonpositive_values(self):
        with pytest.raises(ValueError):
            fit_loglog_slope([(0.1, 1.0), (0.2, -2.0), (0.4, 3.0), (0.8, 4.0)])


class TestRatePlanValidation:
    def test_rejects_few_deltas(self):
        with pytest.raises(ValueError):
            RatePlan(a=1.0, p=1.0, deltas=(0.01, 0.1, 0.5))

    def test_rejects_narrow_span(self):
        with pytest.raises(ValueError):
            RatePlan(a=1.0, p=1.0, deltas=(0.01, 0.02, 0.04, 0.05))

    def test_rejects_no_replicates(self):
        with pytest.raises(ValueError):
            RatePlan(a=1.0, p=1.0, replicates=0)

    def test_rejects_unknown_rule(self):
        with pytest.raises(ValueError):
            RatePlan(a=1.0, p=1.0, alpha_rule="lcurve")

    def test_scale_index_defaults_to_ceil(self):
        assert RatePlan(a=1.5, p=1.0).scale_index == 2
        assert RatePlan(a=1.5, p=1.0, r=1).scale_index == 1


def quick_plan(**overrides):
    base = dict(a=1.0, p=1.0, n=50, replicates=2, seed=9,
                deltas=tuple(np.geomspace(0.01, 0.1, 4)))
    base.update(overrides)
    return RatePlan(**base)


class TestRunRateStudy:
    def test_deterministic(self):
        r1 = run_rate_study(quick_plan())
        r2 = run_rate_study(quick_plan())
        assert r1.points == r2.points
        assert r1.fitted_slope == r2.fitted_slope
        assert r1.alpha_trace == r2.alpha_trace

    def test_thread_count_does_not_change_results(self, monkeypatch):
        r1 = run_rate_study(quick_plan())
        monkeypatch.setenv("ABELSCALE_THREADS", "4")
        r2 = run_rate_study(quick_plan())
        assert r1.points == r2.points

    def test_reports_positive_errors_and_alphas(self):
        res = run_rate_study(quick_plan())
        assert all(err > 0 for _, err, _ in res.points)
        assert all(a > 0 for a in res.alpha_trace)
        assert len(res.errors) == 4 and len(res.errors[0]) == 2

    def test_slope_stays_physical(self):
        # Tikhonov cannot beat O(delta); red-flag bound on the benchmark
        res = run_rate_study(quick_plan(replicates=3))
        assert res.fitted_slope <= 1.05

    def test_apriori_rule_needs_q(self):
        with pytest.raises((ValueError, Exception)):
            run_rate_study(quick_plan(alpha_rule="apriori"))

    def test_apriori_rule_runs(self):
        res = run_rate_study(quick_plan(alpha_rule="apriori", q=3.0))
        assert res.fitted_slope > 0

    def test_fixed_rule_uses_given_alpha(self):
        res = run_rate_study(quick_plan(alpha_rule="fixed", alpha_fixed=1e-4))
        assert all(a == pytest.approx(1e-4) for a in res.alpha_trace)

    def test_discrepancy_rule_runs(self):
        res = run_rate_study(quick_plan(alpha_rule="discrepancy"))
        assert res.fitted_slope > 0

    def test_saturation_ordering(self):
        # off-center truth at a=1 loses at least 0.05 of slope vs centered
        amp = 20000 * (0.05 * math.sqrt(math.pi)) ** -0.5
        centered = run_rate_study(RatePlan(
            a=1.0, p=1.0, seed=5,
            test_function=TruthFunction("centered_gaussian", amplitude=amp)))
        offcenter = run_rate_study(RatePlan(
            a=1.0, p=1.0, seed=5,
            test_function=TruthFunction("offcenter_gaussian", amplitude=amp)))
        assert offcenter.fitted_slope <= centered.fitted_slope - 0.05
