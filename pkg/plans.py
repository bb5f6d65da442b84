"""
Solving for stage-1 and stage-2 sampling plans

Stage 1 has a closed form. Stage 2 has none: a grid search over integer
(n2, c2) is followed by a continuous refinement, rounding of n2 up to an
integer and a final one-variable solve for c2.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy import optimize

from errors import (
    DegeneratePairsError,
    DependenceOutOfRangeError,
    DomainError,
    InfeasibleSpecError,
    ZeroSeparationError,
)
from numerics import QuadratureConfig, std_normal_quantile
from oc import (
    DEFAULT_RHO_MAX,
    BatchCovariance,
    DependenceKind,
    DependenceSpec,
    QualitySpec,
    SamplingPlan,
    Stage,
    ValidityReport,
    batch_cross_covariance,
    oc1_at,
    oc2_at,
    oc2_grid,
    validate_plan,
)
from quantile import read_numeric_csv

logger = logging.getLogger(__name__)

REFINE_ORDER = 256

QuantileFn = Callable[[float], float]


@dataclass(frozen=True)
class SolverConfig:
    """Stage-2 search settings"""

    epsilon: float = 1e-8
    grid_n_max: int = 200
    grid_c_max: float = 60.0
    refine_max_iter: int = 200
    refine_radius: float = 5.0
    enforce_lambda: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be > 0; got {self.epsilon}")
        if self.grid_n_max < 1:
            raise DomainError(f"grid_n_max must be >= 1; got {self.grid_n_max}")
        if not self.grid_c_max >= 1:
            raise DomainError(f"grid_c_max must be >= 1; got {self.grid_c_max}")
        if self.refine_max_iter < 1:
            raise DomainError(f"refine_max_iter must be >= 1; got {self.refine_max_iter}")
        if not self.refine_radius > 0:
            raise DomainError(f"refine_radius must be > 0; got {self.refine_radius}")


@dataclass(frozen=True, eq=False)
class PairedSample:
    """Items measured at both inspection times"""

    x1: np.ndarray
    x2: np.ndarray
    n1: int
    n2: int

    def __post_init__(self):
        x1 = np.array(self.x1, dtype=float).ravel()
        x2 = np.array(self.x2, dtype=float).ravel()
        if x1.size != x2.size:
            raise DomainError(f"pair coordinates differ in length: {x1.size} vs {x2.size}")
        if x1.size < 2:
            raise DomainError(f"need at least 2 pairs; got {x1.size}")
        if not (np.isfinite(x1).all() and np.isfinite(x2).all()):
            raise DomainError("pair values must be finite")
        if self.n1 < 1 or self.n2 < 1:
            raise DomainError(f"stage sizes must be >= 1; got n1={self.n1}, n2={self.n2}")
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)

    @property
    def size(self) -> int:
        return self.x1.size

    @property
    def lam(self) -> float:
        return self.n1 / self.n2

    @classmethod
    def from_csv(cls, path, n1: int, n2: int) -> "PairedSample":
        data = read_numeric_csv(path, columns=2)
        return cls(data[:, 0], data[:, 1], n1, n2)


# Stage 1


def _targets(spec: QualitySpec, g: QuantileFn) -> Tuple[float, float]:
    q_aql, q_rql = float(g(spec.aql)), float(g(spec.rql))
    if not q_aql < q_rql:
        raise ZeroSeparationError(
            f"quantile estimate does not separate AQL and RQL "
            f"(G^-1(aql)={q_aql:.6g}, G^-1(rql)={q_rql:.6g})"
        )
    return q_aql, q_rql


def stage1_size(spec: QualitySpec, q_aql: float, q_rql: float) -> float:
    """Unrounded closed-form stage-1 sample size"""
    z = std_normal_quantile(spec.alpha1) - std_normal_quantile(1.0 - spec.beta1)
    return z * z / (q_aql - q_rql) ** 2


def stage1_critical_value(n1: int, q_aql: float, q_rql: float) -> float:
    return -0.5 * math.sqrt(n1) * (q_aql + q_rql)


def stage1_plan(spec: QualitySpec, g: QuantileFn) -> SamplingPlan:
    """
    n1 = ceil((Phi^-1(alpha1) - Phi^-1(1-beta1))^2 / (G^-1(AQL) - G^-1(RQL))^2)
    c1 = -(sqrt(n1)/2) (G^-1(AQL) + G^-1(RQL))
    """
    q_aql, q_rql = _targets(spec, g)
    size = stage1_size(spec, q_aql, q_rql)
    if not math.isfinite(size):
        raise ZeroSeparationError("stage-1 sample size is not finite")
    n1 = max(1, math.ceil(size))
    plan = SamplingPlan(n1, stage1_critical_value(n1, q_aql, q_rql))
    logger.debug("stage 1: n*=%.4f -> n1=%d, c1=%.6f", size, plan.n, plan.c)
    return plan


# Stage 2


@dataclass(frozen=True)
class Stage2Solution:
    """Stage-2 plan with the intermediate solutions of the search"""

    plan: SamplingPlan
    grid_n: int
    grid_c: float
    continuous_n: float
    continuous_c: float
    continuous_deviation: float
    deviation: float
    oc_aql: float
    oc_rql: float
    converged: bool
    certified: bool

    @property
    def best_effort(self) -> bool:
        """Returned plan misses epsilon; deviation holds what it achieves"""
        return not self.certified


class _Objective:
    """Squared deviation of stage-2 OC from its targets at AQL and RQL"""

    def __init__(
        self,
        spec: QualitySpec,
        plan1: SamplingPlan,
        q_aql: float,
        q_rql: float,
        rho: float,
        quad: QuadratureConfig,
    ):
        self.plan1 = plan1
        self.q_aql = q_aql
        self.q_rql = q_rql
        self.rho = rho
        self.quad = quad
        self.target_aql = 1.0 - spec.alpha2
        self.target_rql = spec.beta2

    def grid(self, n2, c2, order: int = 96) -> np.ndarray:
        n1, c1 = self.plan1.n, self.plan1.c
        at_aql = oc2_grid(self.q_aql, n1, c1, n2, c2, self.rho, self.quad, order)
        at_rql = oc2_grid(self.q_rql, n1, c1, n2, c2, self.rho, self.quad, order)
        value = (at_aql - self.target_aql) ** 2 + (at_rql - self.target_rql) ** 2
        return np.where(np.isfinite(value), value, np.inf)

    def smooth(self, n2: float, c2: float) -> float:
        return float(self.grid(np.array([n2]), np.array([c2]), REFINE_ORDER)[0, 0])

    def exact(self, n2: float, c2: float) -> Tuple[float, float, float]:
        """Deviation and both OC values with adaptive quadrature"""
        n1, c1 = self.plan1.n, self.plan1.c
        at_aql = oc2_at(self.q_aql, n1, c1, n2, c2, self.rho, self.quad)
        at_rql = oc2_at(self.q_rql, n1, c1, n2, c2, self.rho, self.quad)
        deviation = (at_aql - self.target_aql) ** 2 + (at_rql - self.target_rql) ** 2
        return deviation, at_aql, at_rql


def _grid_search(objective: _Objective, solver: SolverConfig) -> Tuple[int, float, float]:
    """
    Minimizer over {(n, c): c <= c*(n)}, c*(n) the smallest c within epsilon
    for that n (all c when none is). Ties go to the smallest n, then c.
    """
    n_values = np.arange(1, solver.grid_n_max + 1)
    c_values = np.arange(1, math.floor(solver.grid_c_max) + 1, dtype=float)
    values = objective.grid(n_values, c_values)
    if not np.isfinite(values).any():
        raise InfeasibleSpecError("no stage-2 grid point has a finite objective")
    within = values <= solver.epsilon
    c_star = np.where(within.any(axis=1), within.argmax(axis=1), c_values.size - 1)
    allowed = np.arange(c_values.size) <= c_star[:, None]
    i, j = np.unravel_index(int(np.argmin(np.where(allowed, values, np.inf))), values.shape)
    return int(n_values[i]), float(c_values[j]), float(values[i, j])


def _solve_c(
    objective: _Objective, n2: float, center: float, solver: SolverConfig
) -> Tuple[float, float]:
    res = optimize.minimize_scalar(
        lambda c: objective.smooth(n2, c),
        bounds=(center - solver.refine_radius, center + solver.refine_radius),
        method="bounded",
        options={"xatol": 1e-8, "maxiter": solver.refine_max_iter},
    )
    if not res.success:
        logger.info("c2 refinement stopped early at n2=%.4f: %s", n2, res.message)
    return float(res.x), float(res.fun)


def _refine(
    objective: _Objective, n_start: int, c_start: float, solver: SolverConfig
) -> Tuple[float, float]:
    """Golden-section search on c nested inside a bounded search on real n"""
    lo = max(1.0, n_start - solver.refine_radius)
    hi = min(float(solver.grid_n_max), n_start + solver.refine_radius)
    if hi <= lo:
        return float(n_start), _solve_c(objective, n_start, c_start, solver)[0]
    res = optimize.minimize_scalar(
        lambda n: _solve_c(objective, n, c_start, solver)[1],
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-6, "maxiter": solver.refine_max_iter},
    )
    n_star = float(res.x)
    c_star, _ = _solve_c(objective, n_star, c_start, solver)
    return n_star, c_star


def panel_stage2_size(n1: int, lam: float) -> int:
    """n2 = ceil(n1 / lambda) for a prescribed size ratio"""
    if not lam > 0:
        raise DomainError(f"lambda must be > 0; got {lam}")
    return max(1, math.ceil(n1 / lam - 1e-9))


def solve_stage2(
    spec: QualitySpec,
    plan1: SamplingPlan,
    g: QuantileFn,
    dep: DependenceSpec = DependenceSpec(),
    solver: SolverConfig = SolverConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
) -> Stage2Solution:
    """
    Stage-2 plan matching OC2(AQL) = 1 - alpha2 and OC2(RQL) = beta2.

    Raises:
        InfeasibleSpecError: no finite grid objective, or the grid minimizer
            sits on the n2 cap without meeting epsilon
    """
    q_aql, q_rql = _targets(spec, g)
    objective = _Objective(spec, plan1, q_aql, q_rql, dep.rho, quad)

    fixed_n = None
    if solver.enforce_lambda and dep.kind is DependenceKind.PANEL and dep.lam:
        fixed_n = panel_stage2_size(plan1.n, dep.lam)

    if fixed_n is None:
        grid_n, grid_c, grid_value = _grid_search(objective, solver)
        if grid_n == solver.grid_n_max and grid_value > solver.epsilon:
            raise InfeasibleSpecError(
                f"stage-2 search reached n2 = {solver.grid_n_max} "
                f"with deviation {grid_value:.3g}"
            )
        logger.debug("stage 2 grid: n=%d c=%g objective=%.3g", grid_n, grid_c, grid_value)
        n_cont, c_cont = _refine(objective, grid_n, grid_c, solver)
        n2 = max(1, math.ceil(n_cont - 1e-9))
    else:
        c_values = np.arange(1, math.floor(solver.grid_c_max) + 1, dtype=float)
        row = objective.grid(np.array([fixed_n]), c_values)[0]
        grid_n, grid_c = fixed_n, float(c_values[int(np.argmin(row))])
        n_cont, c_cont = float(fixed_n), _solve_c(objective, fixed_n, grid_c, solver)[0]
        n2 = fixed_n

    continuous_deviation, _, _ = objective.exact(n_cont, c_cont)
    c2, _ = _solve_c(objective, n2, c_cont, solver)
    deviation, at_aql, at_rql = objective.exact(n2, c2)
    converged = continuous_deviation <= solver.epsilon
    certified = deviation <= solver.epsilon
    if not converged:
        logger.warning(
            "stage-2 refinement did not converge: deviation %.3g above epsilon %.3g",
            continuous_deviation, solver.epsilon,
        )
    elif not certified:
        logger.info(
            "stage-2 plan is best effort after rounding n2: deviation %.3g above epsilon %.3g",
            deviation, solver.epsilon,
        )
    logger.info(
        "stage 2: n2*=%.4f c2*=%.4f -> n2=%d c2=%.6f (deviation %.3g)",
        n_cont, c_cont, n2, c2, deviation,
    )
    return Stage2Solution(
        SamplingPlan(n2, c2), grid_n, grid_c, n_cont, c_cont,
        continuous_deviation, deviation, at_aql, at_rql, converged, certified,
    )


def stage2_plan(
    spec: QualitySpec,
    plan1: SamplingPlan,
    g: QuantileFn,
    dep: DependenceSpec = DependenceSpec(),
    solver: SolverConfig = SolverConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
) -> SamplingPlan:
    return solve_stage2(spec, plan1, g, dep, solver, quad).plan


@dataclass(frozen=True)
class TwoStagePlan:
    plan1: SamplingPlan
    stage2: Stage2Solution
    dependence: DependenceSpec
    reports: Tuple[ValidityReport, ValidityReport, ValidityReport]

    @property
    def plan2(self) -> SamplingPlan:
        return self.stage2.plan


def plan_reports(
    spec: QualitySpec,
    plan1: SamplingPlan,
    plan2: SamplingPlan,
    g: QuantileFn,
    dep: DependenceSpec = DependenceSpec(),
    quad: QuadratureConfig = QuadratureConfig(),
) -> Tuple[ValidityReport, ValidityReport, ValidityReport]:
    """Validity of stage 1, stage 2 and the overall OC"""
    rho = dep.rho

    def first(p):
        return oc1_at(g(p), plan1.n, plan1.c)

    def second(p):
        return oc2_at(g(p), plan1.n, plan1.c, plan2.n, plan2.c, rho, quad)

    return (
        validate_plan(spec, first, Stage.ONE),
        validate_plan(spec, second, Stage.TWO),
        validate_plan(spec, lambda p: first(p) * second(p), Stage.OVERALL),
    )


def solve_two_stage(
    spec: QualitySpec,
    g: QuantileFn,
    dep: DependenceSpec = DependenceSpec(),
    solver: SolverConfig = SolverConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
) -> TwoStagePlan:
    plan1 = stage1_plan(spec, g)
    stage2 = solve_stage2(spec, plan1, g, dep, solver, quad)
    reports = plan_reports(spec, plan1, stage2.plan, g, dep, quad)
    return TwoStagePlan(plan1, stage2, dep, reports)


# Dependence parameters


def estimate_rho(ps: PairedSample) -> float:
    """
    sqrt(n1/n2) * gamma / (sigma1 sigma2) from the remeasured pairs,
    all moments with denominator n.

    The value is returned as is; DependenceSpec.panel rejects it when it
    reaches the cap.
    """
    x1 = ps.x1 - ps.x1.mean()
    x2 = ps.x2 - ps.x2.mean()
    sigma1 = math.sqrt(np.mean(x1 * x1))
    sigma2 = math.sqrt(np.mean(x2 * x2))
    if sigma1 == 0 or sigma2 == 0:
        raise DegeneratePairsError("paired sample has zero variance in one coordinate")
    gamma = float(np.mean(x1 * x2))
    return math.sqrt(ps.n1 / ps.n2) * gamma / (sigma1 * sigma2)


def spatial_batch_rho(
    b: int,
    r1: int,
    r2: int,
    sigma_b2: float,
    sigma_eps2: float,
    rho_max: float = DEFAULT_RHO_MAX,
) -> BatchCovariance:
    """
    Cross-stage covariance of the spatial batch design and the coefficient fed
    to the dependent stage-2 OC.

    Raises:
        DependenceOutOfRangeError: coefficient >= rho_max
    """
    cov = batch_cross_covariance(b, r1, r2, sigma_b2, sigma_eps2)
    if cov.coefficient >= rho_max:
        raise DependenceOutOfRangeError(cov.coefficient, rho_max)
    return cov


def round_batch(n: int, b: int) -> int:
    """Smallest multiple of b that is >= n"""
    if n < 1 or b < 1:
        raise DomainError(f"n and b must be >= 1; got n={n}, b={b}")
    return -(-n // b) * b


def batch_plans(
    spec: QualitySpec,
    g: QuantileFn,
    b: int,
    sigma_b2: float,
    sigma_eps2: float,
    solver: SolverConfig = SolverConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
    rho_max: float = DEFAULT_RHO_MAX,
    max_rounds: int = 10,
) -> TwoStagePlan:
    """
    Plans for spatial batch sampling: both sizes rounded up to batch multiples
    and the critical values re-adjusted for the rounded sizes.

    The batch counts enter the dependence coefficient, so stage 2 is re-solved
    until its batch count is stable.
    """
    q_aql, q_rql = _targets(spec, g)
    n1 = round_batch(stage1_plan(spec, g).n, b)
    plan1 = SamplingPlan(n1, stage1_critical_value(n1, q_aql, q_rql))
    r1 = n1 // b
    # start from the independent stage-2 size
    independent = solve_stage2(spec, plan1, g, DependenceSpec(), solver, quad)
    r2 = round_batch(independent.plan.n, b) // b
    for _ in range(max_rounds):
        spatial_batch_rho(b, r1, r2, sigma_b2, sigma_eps2, rho_max)
        dep = DependenceSpec.spatial_batch(b, r1, r2, sigma_b2, sigma_eps2, rho_max)
        stage2 = solve_stage2(spec, plan1, g, dep, solver, quad)
        r_next = round_batch(stage2.plan.n, b) // b
        if r_next == r2:
            break
        r2 = r_next
    else:
        logger.warning("batch count of stage 2 did not settle after %d rounds", max_rounds)

    dep = DependenceSpec.spatial_batch(b, r1, r2, sigma_b2, sigma_eps2, rho_max)
    objective = _Objective(spec, plan1, q_aql, q_rql, dep.rho, quad)
    n2 = r2 * b
    c2, _ = _solve_c(objective, n2, stage2.plan.c, solver)
    deviation, at_aql, at_rql = objective.exact(n2, c2)
    stage2 = Stage2Solution(
        SamplingPlan(n2, c2), stage2.grid_n, stage2.grid_c,
        stage2.continuous_n, stage2.continuous_c, stage2.continuous_deviation,
        deviation, at_aql, at_rql, stage2.converged, deviation <= solver.epsilon,
    )
    reports = plan_reports(spec, plan1, stage2.plan, g, dep, quad)
    return TwoStagePlan(plan1, stage2, dep, reports)
