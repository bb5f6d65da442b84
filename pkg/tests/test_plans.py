"""
Tests for the stage-1 and stage-2 plan solvers and the dependence estimators
"""

import math
import sys
import os

import numpy as np
import pytest

# Add parent directory to path to import modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import (
    DegeneratePairsError,
    DependenceOutOfRangeError,
    DomainError,
    InfeasibleSpecError,
    ZeroSeparationError,
)
from oc import DependenceSpec, QualitySpec, oc2_at
from plans import (
    PairedSample,
    SolverConfig,
    _grid_search,
    batch_plans,
    estimate_rho,
    panel_stage2_size,
    round_batch,
    solve_stage2,
    solve_two_stage,
    spatial_batch_rho,
    stage1_plan,
    stage2_plan,
)
from quantile import Method, Sample, build_estimator, reference_estimator


@pytest.fixture
def normal_g():
    return reference_estimator()


@pytest.fixture
def spec3():
    """AQL 2%, RQL 5%, alpha1 = beta1 = 3%, alpha2 = beta2 = 7.22%"""
    return QualitySpec.from_risks(0.02, 0.05, 0.1, 0.03)


@pytest.fixture
def spec7():
    """AQL 2%, RQL 5%, alpha1 = beta1 = 7%, alpha2 = beta2 = 3.23%"""
    return QualitySpec.from_risks(0.02, 0.05, 0.1, 0.07)


@pytest.fixture(scope="module")
def solved3():
    spec = QualitySpec.from_risks(0.02, 0.05, 0.1, 0.03)
    g = reference_estimator()
    plan1 = stage1_plan(spec, g)
    return spec, plan1, solve_stage2(spec, plan1, g)


class TestStageOnePlan:
    """Test suite for the closed-form stage-1 plan"""

    def test_three_percent(self, spec3, normal_g):
        """Exact normal quantiles give n1 = 85 and c1 = 17.050"""
        plan = stage1_plan(spec3, normal_g)
        assert plan.n == 85, f"Expected n1 = 85, got {plan.n}"
        assert plan.c == pytest.approx(17.050, abs=1e-3)

    def test_seven_percent(self, spec7, normal_g):
        """Exact normal quantiles give n1 = 53 and c1 = 13.463"""
        plan = stage1_plan(spec7, normal_g)
        assert plan.n == 53, f"Expected n1 = 53, got {plan.n}"
        assert plan.c == pytest.approx(13.4631, abs=1e-3)

    def test_monotone_burden(self, normal_g):
        """Moving the RQL towards the AQL never shrinks n1"""
        sizes = [
            stage1_plan(QualitySpec.from_risks(0.02, rql, 0.1, 0.03), normal_g).n
            for rql in (0.08, 0.06, 0.05, 0.04, 0.03, 0.025)
        ]
        assert sizes == sorted(sizes), f"Sizes not monotone: {sizes}"

    def test_no_separation(self, spec3):
        """A flat quantile estimate cannot separate AQL from RQL"""
        with pytest.raises(ZeroSeparationError):
            stage1_plan(spec3, lambda p: 0.0)

    @pytest.mark.parametrize("method", [Method.EMPIRICAL, Method.KDE_SJ])
    def test_shift_invariance(self, spec3, method):
        """An affine change of the time-t0 sample leaves the plan unchanged"""
        rng = np.random.default_rng(3)
        sample = Sample(rng.normal(220.0, 2.0, 250))
        plan = stage1_plan(spec3, build_estimator(sample, method))
        moved = stage1_plan(spec3, build_estimator(sample.shifted(-15.0, 1.7), method))
        assert moved.n == plan.n
        tol = 1e-9 if method is Method.EMPIRICAL else 1e-6
        assert moved.c == pytest.approx(plan.c, abs=tol)


class TestStageTwoPlan:
    """Test suite for the stage-2 search"""

    def test_targets_met(self, solved3):
        """Rounding n2 up leaves the returned plan on the safe side of both targets"""
        spec, _, solution = solved3
        assert 0 <= solution.oc_aql - (1 - spec.alpha2) <= 5e-3
        assert 0 <= spec.beta2 - solution.oc_rql <= 5e-3

    def test_rounded_plan_is_best_effort(self, solved3):
        """Integer n2 cannot meet epsilon at both limits; the flag says so"""
        _, _, solution = solved3
        assert solution.deviation > SolverConfig().epsilon
        assert solution.certified is False
        assert solution.best_effort

    def test_continuous_solution_meets_targets(self, solved3, normal_g):
        """Before rounding the search meets both targets"""
        spec, plan1, solution = solved3
        assert solution.continuous_deviation <= 1e-6
        assert solution.plan.n == math.ceil(solution.continuous_n - 1e-9)
        args = (plan1.n, plan1.c, solution.continuous_n, solution.continuous_c)
        assert oc2_at(normal_g(spec.aql), *args) == pytest.approx(1 - spec.alpha2, abs=1e-3)
        assert oc2_at(normal_g(spec.rql), *args) == pytest.approx(spec.beta2, abs=1e-3)

    def test_plan_magnitude(self, solved3):
        """Stage-2 plan has the size of the reference study"""
        _, _, solution = solved3
        assert 8 <= solution.plan.n <= 45, f"n2 = {solution.plan.n}"
        assert 15 <= solution.plan.c <= 40, f"c2 = {solution.plan.c}"

    def test_reported_oc_matches_quadrature(self, solved3, normal_g):
        """Reported OC values come from the adaptive quadrature"""
        spec, plan1, solution = solved3
        plan2 = solution.plan
        expected = oc2_at(normal_g(spec.aql), plan1.n, plan1.c, plan2.n, plan2.c)
        assert solution.oc_aql == pytest.approx(expected, abs=1e-12)

    def test_deterministic(self, spec3, normal_g):
        """Identical inputs give identical plans"""
        plan1 = stage1_plan(spec3, normal_g)
        first = stage2_plan(spec3, plan1, normal_g)
        second = stage2_plan(spec3, plan1, normal_g)
        assert first == second

    def test_panel_with_zero_correlation(self, solved3, normal_g):
        """Panel dependence with rho = 0 reproduces the independent plan"""
        spec, plan1, solution = solved3
        panel = stage2_plan(spec, plan1, normal_g, DependenceSpec.panel(0.0))
        assert panel == solution.plan

    def test_smaller_stage2_risk_needs_more(self, solved3, spec7, normal_g):
        """alpha2 = 3.23% requires a larger stage-2 sample than alpha2 = 7.22%"""
        _, _, solution = solved3
        plan1 = stage1_plan(spec7, normal_g)
        assert stage2_plan(spec7, plan1, normal_g).n > solution.plan.n

    def test_grid_minimizer_respects_smallest_critical_value(self):
        """Within each n the search stops at the first c meeting epsilon"""

        class Table:
            def grid(self, n_values, c_values):
                return np.array([
                    [5.0, 4.0, 3.0],
                    [0.05, 0.01, 0.02],
                    [1.0, 0.08, 0.5],
                ])

        solver = SolverConfig(epsilon=0.1, grid_n_max=3, grid_c_max=3.0)
        assert _grid_search(Table(), solver) == (2, 1.0, 0.05)

    def test_grid_cap(self, spec3, normal_g):
        """A cap too small to meet the targets is an infeasible spec"""
        plan1 = stage1_plan(spec3, normal_g)
        with pytest.raises(InfeasibleSpecError):
            solve_stage2(spec3, plan1, normal_g, solver=SolverConfig(grid_n_max=1))

    def test_enforced_lambda(self, spec3, normal_g):
        """Panel mode with enforced lambda fixes n2 = ceil(n1 / lambda)"""
        plan1 = stage1_plan(spec3, normal_g)
        dep = DependenceSpec.panel(0.3, lam=1.44)
        plan2 = stage2_plan(spec3, plan1, normal_g, dep, SolverConfig(enforce_lambda=True))
        assert plan2.n == 60

    def test_two_stage_reports(self, spec3, normal_g):
        """Full solve reports validity for stage 1, stage 2 and overall"""
        result = solve_two_stage(spec3, normal_g)
        stage1, stage2, overall = result.reports
        assert stage1.valid
        assert stage2.valid, "Rounded stage-2 plan should be conservative"
        assert abs(stage2.producer_margin) < 5e-3 and abs(stage2.consumer_margin) < 5e-3
        assert overall.oc_aql >= 0.9
        assert overall.oc_aql == pytest.approx(0.9, abs=5e-3)
        assert overall.oc_rql == pytest.approx(0.03 * 0.0722, abs=5e-4)
        assert result.plan2 == result.stage2.plan

    def test_solver_config_validation(self):
        """Solver settings must be positive"""
        with pytest.raises(DomainError):
            SolverConfig(epsilon=0.0)


class TestPanelDependence:
    """Test suite for the panel correlation estimate"""

    def test_perfect_correlation(self):
        """Pairs (x, x) with n1 = n2 give 1"""
        x = np.linspace(0.0, 1.0, 30) ** 2
        assert estimate_rho(PairedSample(x, x, 50, 50)) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_anticorrelation(self):
        """Pairs (x, -x) with n1 = n2 give -1"""
        x = np.linspace(0.0, 1.0, 30) ** 2
        assert estimate_rho(PairedSample(x, -x, 50, 50)) == pytest.approx(-1.0, abs=1e-12)

    def test_perfect_correlation_is_refused(self):
        """A coefficient of one cannot enter the dependent OC"""
        x = np.arange(10.0)
        with pytest.raises(DependenceOutOfRangeError):
            DependenceSpec.panel(estimate_rho(PairedSample(x, x, 20, 20)))

    def test_size_ratio_scaling(self):
        """Correlation 0.5 with n1/n2 = 1.44 gives 1.2 * 0.5 = 0.6"""
        rng = np.random.default_rng(11)
        pairs = rng.multivariate_normal([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], size=100_000)
        ps = PairedSample(pairs[:, 0], pairs[:, 1], 144, 100)
        assert ps.lam == pytest.approx(1.44)
        assert estimate_rho(ps) == pytest.approx(0.6, abs=0.01)

    def test_zero_variance(self):
        """A constant coordinate is degenerate"""
        with pytest.raises(DegeneratePairsError):
            estimate_rho(PairedSample([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], 10, 10))

    def test_pairs_from_csv(self, tmp_path):
        """Two-column CSV with a header row"""
        path = tmp_path / "pairs.csv"
        path.write_text("t1,t2\n1.0,1.1\n2.0,2.3\n3.0,2.9\n")
        ps = PairedSample.from_csv(path, 30, 20)
        assert ps.size == 3
        assert ps.x2.tolist() == [1.1, 2.3, 2.9]

    def test_mismatched_pairs(self):
        """Coordinates must have the same length"""
        with pytest.raises(DomainError):
            PairedSample([1.0, 2.0, 3.0], [1.0, 2.0], 10, 10)

    @pytest.mark.parametrize("n1,lam,expected", [(85, 1.44, 60), (50, 2.0, 25), (3, 10.0, 1)])
    def test_panel_stage2_size(self, n1, lam, expected):
        """n2 = ceil(n1 / lambda)"""
        assert panel_stage2_size(n1, lam) == expected


class TestSpatialBatch:
    """Test suite for the batch design"""

    @pytest.mark.parametrize("n,b,expected", [(17, 5, 20), (20, 5, 20), (1, 8, 8)])
    def test_round_batch(self, n, b, expected):
        """Smallest multiple of b not below n"""
        assert round_batch(n, b) == expected

    def test_round_batch_domain(self):
        """Sizes and batch length start at one"""
        with pytest.raises(DomainError):
            round_batch(0, 4)

    def test_no_batch_effect(self):
        """sigma_B^2 = 0 gives sqrt(r1/r2)"""
        cov = spatial_batch_rho(4, 9, 25, 0.0, 1.0)
        assert cov.coefficient == pytest.approx(0.6, abs=1e-15)
        assert cov.raw == pytest.approx(0.6, abs=1e-15)

    def test_single_item_batches(self):
        """b = 1 and r1 = r2 normalizes to one and is refused"""
        with pytest.raises(DependenceOutOfRangeError) as info:
            spatial_batch_rho(1, 20, 20, 0.3, 1.0)
        assert info.value.value == pytest.approx(1.0)

    def test_batch_plans_out_of_range(self, spec3, normal_g):
        """Stage-1 batches outnumbering stage-2 batches push the coefficient past the cap"""
        with pytest.raises(DependenceOutOfRangeError):
            batch_plans(spec3, normal_g, 4, 0.1, 1.0)
