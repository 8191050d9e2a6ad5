import math

import numpy as np
import pytest
from scipy import stats as sps

from pnormlab.engine import (
    AlphaBudget,
    AsymptoticFiniteSchedule,
    AsymptoticSupSchedule,
    CalibrationWarning,
    CombinedTest,
    ConstantTest,
    EnhancedTest,
    MinimaxAdaptiveTest,
    PNormTest,
    UnionTest,
    asymptotic_critical_value,
    build_combined,
    build_enhanced,
    build_minimax_adaptive,
    custom_budget,
    evaluate,
    geometric_budget,
    is_permutation_symmetric,
    load_test,
    make_single_test,
    mc_calibrate,
    mc_scale_minimax,
    member_exponents,
    minimax_critical_value,
    reject_matrix,
    save_test,
    sup_asymptotic_critical_value,
)
from pnormlab.errors import CalibrationError, ConfigError, DomainError
from pnormlab.gaussmath import std_normal_cdf, std_normal_sf
from pnormlab.mc import MonteCarloPlan, empirical_upper_quantile, simulate_null_statistics
from pnormlab.norms import SUP, Exponent, batch_norms

from conftest import bisection_solve

E2 = Exponent.finite(2.0)


class TestAsymptoticCriticalValue:
    def test_euclidean_formula_value(self):
        z = bisection_solve(std_normal_cdf, 0.95, 0.0, 10.0)
        expected = (z * math.sqrt(200.0) + 100.0) ** 0.5
        assert asymptotic_critical_value(2.0, 100, 0.05) == pytest.approx(
            expected, rel=1e-9
        )

    def test_median_level_reduces_to_centering(self):
        # at alpha = 1/2 the quantile term vanishes
        assert asymptotic_critical_value(2.0, 400, 0.5) == pytest.approx(20.0, rel=1e-14)

    def test_log_space_path_matches_linear(self):
        p = math.e**4 + 1.0  # beyond the linear-path cutoff
        kappa = asymptotic_critical_value(p, 1000, 0.05)
        from pnormlab.gaussmath import gauss_moments, std_normal_quantile

        m = gauss_moments(p)
        z = std_normal_quantile(0.95)
        direct = (z * math.sqrt(1000 * m.variance) + 1000 * m.mean) ** (1.0 / p)
        assert kappa == pytest.approx(direct, rel=1e-12)

    def test_huge_exponent_stays_finite(self):
        kappa = asymptotic_critical_value(400.0, 10_000, 0.05)
        assert math.isfinite(kappa) and 1.0 < kappa < 50.0

    def test_negative_bracket_raises_calibration_error(self):
        with pytest.raises(CalibrationError):
            asymptotic_critical_value(2.0, 1, 0.9999)

    def test_monte_carlo_size_of_one_norm_value(self):
        # MC null rejection rate of the analytic critical value, p = 1, d = 1e4
        kappa = asymptotic_critical_value(1.0, 10_000, 0.05)
        test = PNormTest(d=10_000, exponent=Exponent.finite(1.0),
                         critical_value=kappa, alpha=0.05)
        from pnormlab.power import estimate_rejection

        rate, _ = estimate_rejection(
            test, 0, MonteCarloPlan(replications=20_000, seed=41)
        )
        assert 0.04 <= rate <= 0.06


class TestSupAsymptoticCriticalValue:
    def test_exact_size_within_widened_band(self):
        # exact null size of the limit-law critical value through the exact
        # cdf of the absolute maximum: 1 - (1 - 2 sf(kappa))^d; the limit-law
        # approximation converges slowly, hence the deliberately wide band
        for d in (10_000, 50_000):
            kappa = sup_asymptotic_critical_value(d, 0.05)
            size = -math.expm1(d * math.log1p(-2.0 * std_normal_sf(kappa)))
            assert 0.035 <= size <= 0.065

    def test_third_term_vanishes_at_special_level(self):
        alpha = 1.0 - math.exp(-2.0)
        d = 777
        root = math.sqrt(2.0 * math.log(d))
        expected = root - (math.log(math.log(d)) + math.log(4 * math.pi)) / (2 * root)
        assert sup_asymptotic_critical_value(d, alpha) == pytest.approx(
            expected, rel=1e-14
        )

    def test_monotone_in_level(self):
        d = 5000
        assert sup_asymptotic_critical_value(d, 0.01) > sup_asymptotic_critical_value(
            d, 0.05
        ) > sup_asymptotic_critical_value(d, 0.2)

    def test_small_dimension_rejected(self):
        with pytest.raises(DomainError):
            sup_asymptotic_critical_value(2, 0.05)


class TestMinimaxCriticalValue:
    def test_euclidean_arithmetic(self):
        expected = (3.0 * math.sqrt(200.0) + 100.0) ** 0.5
        assert minimax_critical_value(2.0, 100, 3.0) == pytest.approx(expected, rel=1e-12)

    def test_small_margin_limit_is_the_centering(self):
        from pnormlab.gaussmath import gauss_moments

        for p in (1.0, 2.0, 5.0):
            m = gauss_moments(p)
            kappa = minimax_critical_value(p, 500, 1e-12)
            assert kappa == pytest.approx((500 * m.mean) ** (1.0 / p), rel=1e-9)

    def test_matches_asymptotic_at_normal_quantile(self):
        from pnormlab.gaussmath import std_normal_quantile

        for p, d, alpha in ((1.0, 50, 0.05), (2.0, 1000, 0.1), (7.0, 200, 0.01)):
            assert minimax_critical_value(
                p, d, std_normal_quantile(1 - alpha)
            ) == asymptotic_critical_value(p, d, alpha)

    def test_domain(self):
        with pytest.raises(DomainError):
            minimax_critical_value(2.0, 100, 0.0)


class TestSchedules:
    def test_finite_schedule_value(self):
        s = AsymptoticFiniteSchedule(exponent=E2, alpha=0.05)
        assert s.value(100) == asymptotic_critical_value(2.0, 100, 0.05)
        assert s.kind == "asymptotic_finite"

    def test_sup_schedule_value(self):
        s = AsymptoticSupSchedule(alpha=0.05)
        assert s.value(5000) == sup_asymptotic_critical_value(5000, 0.05)

    def test_mc_schedule_pins_dimension(self):
        plan = MonteCarloPlan(replications=2000, seed=1)
        s = mc_calibrate(E2, 40, 0.05, plan)
        assert s.value(40) == s.critical_value
        with pytest.raises(DomainError):
            s.value(41)
        assert "seed=1" in s.provenance


class TestMcCalibrate:
    def test_chi_square_quantile_oracle(self):
        plan = MonteCarloPlan(replications=100_000, seed=314)
        sched = mc_calibrate(E2, 50, 0.05, plan)
        exact = math.sqrt(sps.chi2.ppf(0.95, df=50))
        density = 2.0 * exact * sps.chi2.pdf(exact**2, df=50)
        se = math.sqrt(0.05 * 0.95 / plan.replications) / density
        assert abs(sched.critical_value - exact) <= 3.0 * se

    def test_determinism(self):
        plan = MonteCarloPlan(replications=2000, seed=8)
        a = mc_calibrate(E2, 64, 0.05, plan).critical_value
        b = mc_calibrate(E2, 64, 0.05, plan).critical_value
        assert a == b

    def test_configuration_guards(self):
        with pytest.raises(ConfigError):
            mc_calibrate(E2, 10, 0.05, MonteCarloPlan(replications=500, seed=1))
        with pytest.raises(ConfigError):
            mc_calibrate(E2, 10, 0.001, MonteCarloPlan(replications=2000, seed=1))


class TestBudgets:
    def test_two_members(self):
        b = geometric_budget(2, 0.05, success=0.5, last_share=0.5)
        assert b.alphas == pytest.approx((0.025, 0.025), rel=1e-15)

    def test_five_member_reference_allocation(self):
        b = geometric_budget(5, 0.05, success=0.5, last_share=0.5)
        assert b.alphas == pytest.approx(
            (0.0133333333, 0.0066666667, 0.0033333333, 0.0016666667, 0.025),
            abs=1e-9,
        )
        # rounded presentation used in study summaries
        assert [round(a, 3) for a in b.alphas] == [0.013, 0.007, 0.003, 0.002, 0.025]

    def test_sum_is_exact(self, rng):
        for _ in range(50):
            m = int(rng.integers(2, 12))
            alpha = float(rng.uniform(0.01, 0.3))
            s = float(rng.uniform(0.05, 0.95))
            g = float(rng.uniform(0.05, 0.95))
            b = geometric_budget(m, alpha, success=s, last_share=g)
            assert abs(math.fsum(b.alphas) - alpha) <= 1e-15

    def test_limit_levels(self):
        b = geometric_budget(5, 0.05)
        assert b.limit_alpha(0) == pytest.approx(0.0125, rel=1e-12)
        assert b.limit_alpha(4) == pytest.approx(0.025, rel=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            geometric_budget(1, 0.05)
        with pytest.raises(DomainError):
            geometric_budget(3, 1.2)
        with pytest.raises(DomainError):
            AlphaBudget(alphas=(0.4, 0.7))  # total above 1

    def test_custom_budget_warns(self):
        with pytest.warns(CalibrationWarning):
            custom_budget((0.02, 0.03))


class TestMemberExponents:
    def test_reference_dimensions_give_five_members(self):
        for d in (50_000, 250_000):
            m, exps = member_exponents(d, "exp")
            assert m == 5
            assert exps == pytest.approx(
                (2.0, math.e + 1, math.e**2 + 1, math.e**3 + 1, math.e**4 + 1),
                rel=1e-15,
            )

    def test_growth_condition_headroom(self):
        # the largest exponent must outgrow 2 log d
        for d in (50_000, 250_000):
            _, exps = member_exponents(d, "exp")
            assert exps[-1] / math.log(d) > 2.0

    def test_linear_preset(self):
        m, exps = member_exponents(100, "linear")
        assert m == math.ceil(3 * math.log(100)) + 1
        assert exps[:3] == (2.0, 3.0, 4.0)
        assert len(exps) == m

    def test_domain(self):
        with pytest.raises(DomainError):
            member_exponents(2, "exp")
        with pytest.raises(DomainError):
            member_exponents(100, "nope")


@pytest.fixture(scope="module")
def combined():
    plan = MonteCarloPlan(replications=20_000, seed=11)
    m, exps = member_exponents(2000, "exp")
    return build_combined(2000, exps, geometric_budget(m, 0.05), plan), plan


class TestBuildCombined:

    def test_scale_in_unit_interval(self, combined):
        test, _ = combined
        assert 0.0 < test.scale <= 1.0

    def test_calibration_size_within_quantile_granularity(self, combined):
        test, plan = combined
        assert abs(test.calibration_size - 0.05) <= 1.0 / plan.replications + 1e-12

    def test_fresh_seed_size(self, combined):
        from pnormlab.power import estimate_rejection

        test, _ = combined
        vplan = MonteCarloPlan(replications=20_000, seed=9090)
        rate, se = estimate_rejection(test, 0, vplan)
        assert abs(rate - 0.05) <= 3.0 * math.sqrt(0.05 * 0.95 / vplan.replications)

    def test_membership_nesting_is_pointwise(self, combined, rng):
        # whenever some member statistic reaches its own critical value, the
        # combined test rejects (scale <= 1)
        test, _ = combined
        Y = rng.normal(size=(10_000, test.d)) + rng.choice(
            [0.0, 0.05], size=(10_000, 1)
        )
        norms = batch_norms(Y, test.norm_exponents())
        member_hit = np.zeros(10_000, dtype=bool)
        for p, k in zip(test.exponents, test.kappas):
            member_hit |= norms[Exponent.finite(p)] >= k
        combined_reject = test.decide_batch(norms, {})
        assert np.all(combined_reject[member_hit])

    def test_single_member_degenerates_to_plain_quantile(self):
        plan = MonteCarloPlan(replications=5000, seed=21)
        with pytest.warns(CalibrationWarning):
            budget = custom_budget((0.05,))
        test = build_combined(300, (2.0,), budget, plan)
        sched = mc_calibrate(E2, 300, 0.05, plan)
        assert test.scale * test.kappas[0] == pytest.approx(
            sched.critical_value, rel=1e-12
        )

    def test_shared_stats_reuse_matches_internal_simulation(self):
        plan = MonteCarloPlan(replications=5000, seed=33)
        m, exps = member_exponents(400, "exp")
        budget = geometric_budget(m, 0.05)
        stats = simulate_null_statistics(
            400, [Exponent.finite(p) for p in exps] + [SUP], plan
        )
        direct = build_combined(400, exps, budget, plan)
        shared = build_combined(400, exps, budget, plan, stats=stats)
        assert direct.kappas == shared.kappas
        assert direct.scale == shared.scale

    def test_input_validation(self):
        plan = MonteCarloPlan(replications=5000, seed=1)
        budget = geometric_budget(3, 0.05)
        with pytest.raises(DomainError):
            build_combined(100, (2.0, 3.0), budget, plan)  # length mismatch
        with pytest.raises(DomainError):
            build_combined(100, (3.0, 2.0, 4.0), budget, plan)  # not increasing
        with pytest.raises(ConfigError):
            build_combined(
                100, (2.0, 3.0, 4.0), budget, MonteCarloPlan(replications=900, seed=1)
            )


class TestAsymptoticAgreesWithMonteCarlo:
    def test_p1_to_p4_at_ten_thousand(self):
        # CLT regime: the analytic and empirical critical values agree within
        # three standard errors of the empirical quantile
        d, R, alpha = 10_000, 20_000, 0.05
        plan = MonteCarloPlan(replications=R, seed=20240601)
        exps = [Exponent.finite(p) for p in (1.0, 2.0, 3.0, 4.0)]
        stats = simulate_null_statistics(d, exps, plan)
        k = math.ceil(R * (1 - alpha))
        for e in exps:
            vals = np.sort(stats[e])
            kappa_mc = vals[k - 1]
            kappa_asym = asymptotic_critical_value(e.p, d, alpha)
            m = 200
            density = 2 * m / R / (vals[k - 1 + m] - vals[k - 1 - m])
            se = math.sqrt(alpha * (1 - alpha) / R) / density
            assert abs(kappa_mc - kappa_asym) <= 3.0 * se, e.label


class TestMinimaxAdaptive:
    @pytest.mark.filterwarnings("ignore::UserWarning")
    def test_single_member_reduces_to_one_norm(self):
        test = build_minimax_adaptive(100, 3.0, 1)
        expected = 3.0 * math.sqrt(100 * (1 - 2 / math.pi)) + 100 * math.sqrt(
            2 / math.pi
        )
        assert test.kappas[0] == pytest.approx(expected, rel=1e-12)

    @pytest.mark.filterwarnings("ignore::UserWarning")
    def test_second_member_closed_form(self):
        test = build_minimax_adaptive(400, 3.0, 2)
        assert test.kappas[1] ** 2 == pytest.approx(
            3.0 * math.sqrt(2 * 400) + 400, rel=1e-12
        )

    def test_side_condition_warning(self):
        with pytest.warns(CalibrationWarning):
            build_minimax_adaptive(10_000, 5.0, 8)

    def test_analytic_threshold_size_is_small(self):
        import warnings

        from pnormlab.power import estimate_rejection

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CalibrationWarning)
            test = build_minimax_adaptive(10_000, 5.0, 8)
        rate, _ = estimate_rejection(
            test, 0, MonteCarloPlan(replications=20_000, seed=606)
        )
        assert rate <= 0.01

    def test_mc_scaled_threshold_hits_target_size(self):
        import warnings

        from pnormlab.power import estimate_rejection

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CalibrationWarning)
            test = build_minimax_adaptive(500, 5.0, 6)
        plan = MonteCarloPlan(replications=20_000, seed=77)
        scaled = mc_scale_minimax(test, 0.05, plan)
        rate, se = estimate_rejection(
            scaled, 0, MonteCarloPlan(replications=20_000, seed=78)
        )
        assert abs(rate - 0.05) <= 3.0 * math.sqrt(0.05 * 0.95 / 20_000)

    def test_domain(self):
        with pytest.raises(DomainError):
            build_minimax_adaptive(100, 3.0, 0)


class TestEnhancement:
    def test_symmetric_base_ties_to_first_coordinate(self):
        plan = MonteCarloPlan(replications=2000, seed=5)
        base = make_single_test(300, E2, 0.05, "mc", plan)
        enhanced = build_enhanced(base, 300, plan)
        assert enhanced.coordinate == 0
        assert enhanced.spike_mean == pytest.approx(math.sqrt(math.log(300) / 2))
        assert enhanced.spike_threshold == pytest.approx(
            math.sqrt(enhanced.spike_mean)
        )

    def test_pointwise_domination(self, rng):
        plan = MonteCarloPlan(replications=3000, seed=6)
        base = make_single_test(100, E2, 0.05, "mc", plan)
        enhanced = build_enhanced(base, 100, plan)
        Y = rng.normal(size=(5000, 100))
        decisions = reject_matrix([base, enhanced], Y)
        assert np.all(decisions[1][decisions[0]])

    def test_never_reject_base_size_matches_exact_tail(self):
        from pnormlab.power import estimate_rejection

        d = 5000
        plan = MonteCarloPlan(replications=40_000, seed=17)
        enhanced = build_enhanced(ConstantTest(d=d), d, plan)
        rate, se = estimate_rejection(enhanced, 0, plan)
        exact = 2.0 * std_normal_sf((math.log(d) / 2.0) ** 0.25)
        assert abs(rate - exact) <= 3.0 * se + 1e-12

    def test_scan_machinery_on_asymmetric_base(self, monkeypatch):
        # force the scan path and check it stays deterministic end to end
        import pnormlab.engine as eng

        monkeypatch.setattr(eng, "is_permutation_symmetric", lambda t: False)
        plan = MonteCarloPlan(replications=2000, seed=99)
        base = make_single_test(40, E2, 0.05, "mc", plan)
        first = build_enhanced(base, 40, plan)
        second = build_enhanced(base, 40, plan)
        assert first.coordinate == second.coordinate
        assert 0 <= first.coordinate < 40

    def test_scan_counts_match_direct_evaluation(self):
        from pnormlab.engine import _SpikeScanTask
        from pnormlab.mc import StandardNormal, chunk_generator

        d = 12
        base = make_single_test(d, E2, 0.2, "mc", MonteCarloPlan(replications=2000, seed=3))
        spike = math.sqrt(math.log(d) / 2.0)
        task = _SpikeScanTask(
            base=base, d=d, spike_mean=spike, seed=123, sampler=StandardNormal()
        )
        counts = task(0, 0, 500)
        eps = chunk_generator(123, 0).standard_normal((500, d))
        expected = np.zeros(d, dtype=np.int64)
        for i in range(d):
            shifted = eps.copy()
            shifted[:, i] += spike
            expected[i] = int(reject_matrix([base], shifted)[0].sum())
        np.testing.assert_array_equal(counts, expected)

    def test_dimension_guard(self):
        with pytest.raises(DomainError):
            build_enhanced(ConstantTest(d=1), 1, MonteCarloPlan(replications=100, seed=1))


class TestEvaluate:
    def test_single_norm_threshold(self):
        test = PNormTest(d=2, exponent=E2, critical_value=5.0, alpha=0.05)
        assert evaluate(test, [3.0, 4.0]) is True  # statistic equals the cutoff
        assert evaluate(test, [3.0, 3.9]) is False

    def test_zero_vector_accepted_by_calibrated_tests(self):
        plan = MonteCarloPlan(replications=2000, seed=2)
        for test in (
            make_single_test(50, E2, 0.3, "mc", plan),
            make_single_test(50, SUP, 0.3, "mc", plan),
        ):
            assert evaluate(test, np.zeros(50)) is False

    def test_dimension_mismatch(self):
        test = PNormTest(d=3, exponent=E2, critical_value=1.0, alpha=0.05)
        with pytest.raises(DomainError):
            evaluate(test, [1.0, 2.0])

    def test_union_test_is_or_of_members(self, rng):
        a = PNormTest(d=4, exponent=E2, critical_value=2.0, alpha=0.1)
        b = PNormTest(d=4, exponent=SUP, critical_value=1.5, alpha=0.1)
        u = UnionTest(members=(a, b))
        Y = rng.normal(size=(200, 4))
        dec = reject_matrix([a, b, u], Y)
        np.testing.assert_array_equal(dec[2], dec[0] | dec[1])
        assert u.alpha == pytest.approx(0.2)

    def test_symmetry_classifier(self):
        a = PNormTest(d=4, exponent=E2, critical_value=2.0, alpha=0.1)
        assert is_permutation_symmetric(a)
        assert is_permutation_symmetric(UnionTest(members=(a, a)))
        enhanced = EnhancedTest(base=a, d=4, coordinate=0, spike_threshold=1.0,
                                spike_mean=1.0)
        assert not is_permutation_symmetric(enhanced)


class TestSerialization:
    def test_single_round_trip(self, tmp_path):
        plan = MonteCarloPlan(replications=2000, seed=44)
        test = make_single_test(60, SUP, 0.05, "mc", plan)
        path = tmp_path / "single.txt"
        save_test(test, path)
        assert load_test(path) == test

    def test_combined_round_trip(self, tmp_path):
        plan = MonteCarloPlan(replications=5000, seed=44)
        m, exps = member_exponents(150, "exp")
        test = build_combined(150, exps, geometric_budget(m, 0.05), plan)
        path = tmp_path / "combined.txt"
        save_test(test, path)
        assert load_test(path) == test

    def test_minimax_round_trip(self, tmp_path):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CalibrationWarning)
            test = build_minimax_adaptive(150, 4.0, 3)
        path = tmp_path / "minimax.txt"
        save_test(test, path)
        assert load_test(path) == test

    def test_schema_guard(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("schema = other/9\nkind = single\n")
        with pytest.raises(ConfigError):
            load_test(path)
