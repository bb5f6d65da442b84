"""
Tests for the Monte Carlo engine

The oracle checks compare brute-force simulation with the analytic formulas
and allow three to four standard errors.
"""

import math
import sys
import os

import numpy as np
import pytest

# Add parent directory to path to import modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import DegenerateEstimateError, DomainError, SimulationAbortedError
from numerics import std_normal_quantile
from oc import DependenceSpec, QualitySpec, SamplingPlan, oc2_at, overall_oc
from plans import solve_two_stage
from quantile import Method, reference_estimator
from sim import (
    RESULT_COLUMNS,
    RngSpec,
    ScaleInterpretation,
    SimModel,
    draw_model,
    draw_stage_samples,
    mc_oc_oracle,
    panel_mean_correlation,
    standard_model,
    results_frame,
    simulate_acceptance_rate,
    simulate_batch_cross_covariance,
    simulate_plan_distribution,
    spec_limit,
    two_stage_decision,
)


@pytest.fixture
def spec3():
    return QualitySpec.from_risks(0.02, 0.05, 0.1, 0.03)


class TestModels:
    """Test suite for the mixture production models"""

    @pytest.mark.parametrize("k,mean", [(1, 220.0), (2, 221.0), (3, 218.0), (4, 220.0)])
    def test_model_means(self, k, mean):
        """Mixture mean is the weighted mean of the components"""
        assert standard_model(k).mean() == pytest.approx(mean, abs=1e-12)

    def test_scale_interpretation(self):
        """N(220, 4) has variance 4, or variance 16 when 4 is a standard deviation"""
        assert standard_model(1).variance() == pytest.approx(4.0)
        assert standard_model(1, ScaleInterpretation.STDDEV).variance() == pytest.approx(16.0)

    def test_unknown_model(self):
        """Only models 1 to 4 exist"""
        with pytest.raises(DomainError):
            standard_model(5)

    def test_weights_sum_to_one(self):
        """Component weights are a probability vector"""
        with pytest.raises(DomainError):
            SimModel(((0.5, 0.0, 1.0), (0.4, 1.0, 1.0)))

    def test_degradation_range(self):
        """d lies in (0, 1]"""
        with pytest.raises(DomainError):
            standard_model(1, d=1.5)

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_quantile_inverts_cdf(self, k):
        """Model quantile solves F(x) = p"""
        model = standard_model(k)
        for p in (0.02, 0.05, 0.5):
            assert float(model.cdf(model.quantile(p))) == pytest.approx(p, abs=1e-10)

    def test_specification_limit(self):
        """tau = mu* (1 - tolerance)"""
        assert spec_limit(220.0, 0.05) == pytest.approx(209.0)
        model = standard_model(1, tau=spec_limit(220.0, 0.05))
        assert model.resolve_tau() == pytest.approx(209.0)
        assert 0 < model.fraction_nonconforming() < 1e-6

    def test_missing_limit(self):
        """Without tau or p there is no specification limit"""
        with pytest.raises(DomainError):
            standard_model(1).resolve_tau()

    def test_reference_estimator(self):
        """Model 1 reference estimator returns standard normal quantiles"""
        g = standard_model(1).reference_estimator()
        assert g(0.02) == pytest.approx(std_normal_quantile(0.02), abs=1e-9)


class TestDraws:
    """Test suite for sampling from the models"""

    def test_same_stream_same_draws(self):
        """Identical RngSpec gives identical draws"""
        a = draw_model(standard_model(2), 500, RngSpec(42, 3))
        b = draw_model(standard_model(2), 500, RngSpec(42, 3))
        assert np.array_equal(a.values, b.values)

    def test_substreams_differ(self):
        """Child streams are distinct"""
        spec = RngSpec(42)
        a = draw_model(standard_model(1), 50, spec.child(0))
        b = draw_model(standard_model(1), 50, spec.child(1))
        assert not np.array_equal(a.values, b.values)

    def test_seed_range(self):
        """Seeds are unsigned 64-bit integers"""
        with pytest.raises(DomainError):
            RngSpec(-1)
        with pytest.raises(DomainError):
            RngSpec(2**64)

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_mixture_moments(self, k):
        """Sample mean and variance match the closed form within four standard errors"""
        model = standard_model(k)
        n = 1_000_000
        x = draw_model(model, n, RngSpec(2024, k)).values
        mean_se = math.sqrt(model.variance() / n)
        assert abs(x.mean() - model.mean()) <= 4 * mean_se
        sq = (x - x.mean()) ** 2
        var_se = sq.std() / math.sqrt(n)
        assert abs(x.var(ddof=1) - model.variance()) <= 4 * var_se

    def test_single_component(self):
        """A one-component mixture draws only from that component"""
        model = SimModel(((1.0, 5.0, 1e-6),))
        x = draw_model(model, 100, RngSpec(1)).values
        assert np.all(np.abs(x - 5.0) < 0.01)

    def test_sample_size(self):
        """A sample needs two values"""
        with pytest.raises(DomainError):
            draw_model(standard_model(1), 1, RngSpec(1))

    def test_degraded_stage2(self):
        """Stage-2 measurements are scaled by d"""
        model = standard_model(1, d=0.5)
        x1, x2 = draw_stage_samples(model, 400, 300, DependenceSpec(), RngSpec(8))
        assert x1.shape == (400,) and x2.shape == (300,)
        assert x2.mean() == pytest.approx(110.0, abs=0.5)

    def test_panel_mean_correlation(self):
        """Remeasuring min(n1, n2) items correlates the stage means"""
        model = standard_model(1, item_correlation=0.6)
        dep = DependenceSpec.panel(0.3)
        gen = np.random.default_rng(99)
        n1, n2, reps = 40, 25, 10_000
        means = np.array([
            [part.mean() for part in draw_stage_samples(model, n1, n2, dep, gen)]
            for _ in range(reps)
        ])
        observed = np.corrcoef(means[:, 0], means[:, 1])[0, 1]
        expected = panel_mean_correlation(n1, n2, 0.6)
        assert expected == pytest.approx(0.6 * math.sqrt(n2 / n1))
        se = (1 - expected**2) / math.sqrt(reps)
        assert abs(observed - expected) <= 3 * se, f"observed {observed}, expected {expected}"

    def test_batch_effects_shared(self):
        """Items of one batch share the batch effect"""
        model = SimModel(((1.0, 0.0, 1e-12),))
        dep = DependenceSpec.spatial_batch(5, 1, 16, 1.0, 1.0)
        x1, _ = draw_stage_samples(model, 20, 20, dep, RngSpec(5))
        blocks = x1.reshape(4, 5)
        assert np.allclose(blocks, blocks[:, :1], atol=1e-4)


class TestBatchCovariance:
    """Test suite for the batch covariance oracle"""

    def test_matches_formula(self):
        """(4, 25, 25, 0.1, 1) gives covariance 1.4"""
        est = simulate_batch_cross_covariance(4, 25, 25, 0.1, 1.0, 20_000, RngSpec(17))
        assert abs(est.value - 1.4) <= 4 * est.se, f"{est.value} +- {est.se}"

    def test_reps(self):
        """Covariance needs at least two repetitions"""
        with pytest.raises(DomainError):
            simulate_batch_cross_covariance(4, 25, 25, 0.1, 1.0, 1, RngSpec(17))


class TestOracle:
    """Test suite for the brute-force stage-2 OC"""

    def test_orthant_value(self):
        """a = b = 0 and rho = 0 gives 0.75"""
        est = mc_oc_oracle(SamplingPlan(1, 0.0), SamplingPlan(1, 0.0), 0.0, 0.0, 1_000_000, RngSpec(1))
        assert abs(est.value - 0.75) <= 4 * est.se

    def test_saturation(self):
        """A hopeless stage-2 threshold is always passed"""
        est = mc_oc_oracle(SamplingPlan(85, 17.05), SamplingPlan(30, -1e6), -2.05, 0.0, 10_000, RngSpec(1))
        assert est.value == 1.0

    def test_no_hits(self):
        """An unreachable stage-1 threshold has no conditioning draws"""
        with pytest.raises(DegenerateEstimateError):
            mc_oc_oracle(SamplingPlan(1, 100.0), SamplingPlan(1, 0.0), 0.0, 0.0, 10_000, RngSpec(1))

    def test_too_few_draws(self):
        """At least 10 000 draws"""
        with pytest.raises(DomainError):
            mc_oc_oracle(SamplingPlan(1, 0.0), SamplingPlan(1, 0.0), 0.0, 0.0, 100, RngSpec(1))

    @pytest.mark.parametrize("rho", [0.0, 0.3, 0.6])
    def test_matches_quadrature(self, rho):
        """Quadrature OC2 agrees with the oracle on randomized plans"""
        params = np.random.default_rng(int(rho * 10) + 5)
        for k in range(5):
            n1 = int(params.integers(20, 201))
            n2 = int(params.integers(10, 121))
            q_mid = std_normal_quantile(0.03)
            q = std_normal_quantile(float(params.uniform(0.025, 0.04)))
            c1 = -math.sqrt(n1) * q_mid
            c2 = -(math.sqrt(n1) + math.sqrt(n2)) * q_mid + float(params.uniform(-1.0, 1.0))
            plan1, plan2 = SamplingPlan(n1, c1), SamplingPlan(n2, c2)
            est = mc_oc_oracle(plan1, plan2, q, rho, 1_000_000, RngSpec(7, k))
            exact = oc2_at(q, n1, c1, n2, c2, rho)
            se = math.sqrt(exact * (1.0 - exact) / est.hits)
            assert abs(est.value - exact) <= 3 * se, (
                f"set {k}: oracle {est.value} +- {est.se}, quadrature {exact}"
            )


class TestDecision:
    """Test suite for replaying the two-stage decision"""

    PLANS = (SamplingPlan(85, 17.05), SamplingPlan(20, 26.0))

    def test_easy_lot(self):
        """tau far below the mass accepts at both stages"""
        model = standard_model(1)
        record = two_stage_decision(model, self.PLANS, model.moments(), DependenceSpec(), RngSpec(3), tau=150.0)
        assert record.stage1_accepted and record.accepted

    def test_hopeless_lot(self):
        """tau far above the mass rejects at stage 1"""
        model = standard_model(1)
        record = two_stage_decision(model, self.PLANS, model.moments(), DependenceSpec(), RngSpec(3), tau=300.0)
        assert not record.stage1_accepted and not record.accepted
        assert record.t2 is None

    def test_rates_at_extremes(self):
        """Acceptance rate is one far inside the specification"""
        model = standard_model(1)
        rate = simulate_acceptance_rate(
            model, self.PLANS, model.moments(), DependenceSpec(), 500, RngSpec(4), p=1e-9
        )
        assert rate.rate == 1.0 and rate.stage1_rate == 1.0

    @pytest.mark.slow
    def test_overall_acceptance_at_aql(self, spec3):
        """Exact-normal plans accept (1 - alpha1)(1 - alpha2) = 0.9 of lots at the AQL"""
        model = standard_model(1)
        g = model.reference_estimator()
        result = solve_two_stage(spec3, g)
        plans = (result.plan1, result.plan2)
        rate = simulate_acceptance_rate(
            model, plans, model.moments(), DependenceSpec(), 100_000, RngSpec(2026), p=0.02
        )
        analytic = overall_oc(0.02, result.plan1, result.plan2, g)
        assert abs(rate.rate - analytic) <= 4 * rate.se, f"rate {rate.rate}, analytic {analytic}"
        assert rate.rate == pytest.approx(0.9, abs=0.01)


class TestPlanDistribution:
    """Test suite for simulate_plan_distribution"""

    def test_exact_quantiles_are_constant(self, spec3):
        """Solving with the true quantiles gives n1 = 85 every repetition"""
        result = simulate_plan_distribution(standard_model(1), 250, spec3, None, reps=3, rng=RngSpec(1))
        assert result.e_n1 == 85 and result.sd_n1 == 0
        assert result.sd_n2 == 0
        assert result.label == "exact"
        assert result.failures == 0

    def test_reproducible(self, spec3):
        """Same seed gives an identical result"""
        runs = [
            simulate_plan_distribution(standard_model(2), 60, spec3, Method.KDE_SJ, reps=4, rng=RngSpec(7))
            for _ in range(2)
        ]
        assert runs[0] == runs[1]
        assert np.array_equal(runs[0].plans, runs[1].plans)

    def test_result_row(self, spec3):
        """Rows follow the result column order"""
        result = simulate_plan_distribution(standard_model(1), 250, spec3, None, reps=2, rng=RngSpec(1))
        frame = results_frame([result])
        assert list(frame.columns) == RESULT_COLUMNS
        assert frame.loc[0, "type"] == "exact"
        assert frame.loc[0, "alpha2"] == pytest.approx(0.0722, abs=5e-4)

    def test_abort_on_failures(self, spec3):
        """Order statistics of ten values cannot separate 2% from 5%"""
        with pytest.raises(SimulationAbortedError):
            simulate_plan_distribution(standard_model(1), 10, spec3, Method.EMPIRICAL, reps=4, rng=RngSpec(1))

    @pytest.mark.parametrize("reps,m", [(0, 250), (10, 5)])
    def test_preconditions(self, spec3, reps, m):
        """reps >= 1 and m >= 10"""
        with pytest.raises(DomainError):
            simulate_plan_distribution(standard_model(1), m, spec3, Method.KDE_SJ, reps=reps, rng=RngSpec(1))

    @pytest.mark.slow
    def test_workers_do_not_change_results(self, spec3):
        """Parallel repetitions reproduce the serial result"""
        kwargs = dict(reps=6, rng=RngSpec(21))
        serial = simulate_plan_distribution(standard_model(1), 100, spec3, Method.KDE_BCV, **kwargs)
        parallel = simulate_plan_distribution(standard_model(1), 100, spec3, Method.KDE_BCV, workers=2, **kwargs)
        assert np.array_equal(serial.plans, parallel.plans)

    @pytest.mark.slow
    @pytest.mark.parametrize("method,e_n1", [(Method.KDE_BCV, 79.76), (Method.KDE_SJ, 82.13)])
    def test_reference_table_row(self, spec3, method, e_n1):
        """
        Model 1, m = 250, alpha1 = 3% over 1000 repetitions: E(n1) matches the
        reference mean and E(n2) follows the stage-size ratio of the exact plan
        """
        exact = solve_two_stage(spec3, reference_estimator())
        ratio = exact.plan2.n / exact.plan1.n
        result = simulate_plan_distribution(
            standard_model(1), 250, spec3, method, reps=1000, rng=RngSpec(250), workers=4
        )
        assert result.e_n1 == pytest.approx(e_n1, rel=0.10)
        assert result.e_n2 == pytest.approx(ratio * result.e_n1, rel=0.15)

    @pytest.mark.slow
    def test_stage1_mean_approaches_exact_size(self, spec3):
        """A larger time-t0 sample moves E(n1) towards the exact n1 = 85"""
        small, large = (
            simulate_plan_distribution(
                standard_model(1), m, spec3, Method.KDE_BCV, reps=100, rng=RngSpec(m), workers=4
            )
            for m in (250, 2000)
        )
        assert abs(large.e_n1 - 85) < abs(small.e_n1 - 85), (
            f"E(n1) = {small.e_n1} at m = 250, {large.e_n1} at m = 2000"
        )
