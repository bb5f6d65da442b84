"""
Monte Carlo engine for the two-stage scheme

Generates the mixture-of-normals production models, replays the full
control-inspection decision, estimates the distribution of solved sampling
plans over repeated time-t0 samples and provides brute-force oracles for the
analytic OC and covariance formulas.

Every repetition draws from its own substream of the seed, so results do not
depend on the order or the process in which repetitions run.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import optimize, special

from errors import (
    DegenerateEstimateError,
    DomainError,
    SamplingPlanError,
    SimulationAbortedError,
)
from numerics import QuadratureConfig
from oc import DependenceKind, DependenceSpec, QualitySpec, SamplingPlan
from plans import SolverConfig, stage1_plan, stage2_plan
from quantile import (
    BDConfig,
    Method,
    Sample,
    SampleMoments,
    StandardizedQuantileEstimator,
    build_estimator,
    standardize,
)

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "alpha1", "alpha2", "m", "type",
    "E_n1", "sd_n1", "c1", "sd_c1", "E_n2", "sd_n2", "c2", "sd_c2",
]
ORACLE_CHUNK = 1 << 18
MAX_FAILURE_FRACTION = 0.5


class ScaleInterpretation(str, Enum):
    """How the second parameter of N(mean, s) is read"""

    VARIANCE = "variance"
    STDDEV = "stddev"


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: float
    scale: float

    def __post_init__(self):
        if not self.weight > 0:
            raise DomainError(f"component weight must be > 0; got {self.weight}")
        if not self.scale > 0:
            raise DomainError(f"component scale must be > 0; got {self.scale}")


@dataclass(frozen=True)
class SimModel:
    """
    Mixture of normals for the quality variable.

    d is the degradation factor applied to stage-2 measurements, tau the lower
    specification limit (None: derive it from a target fraction p), and
    item_correlation the correlation of an item's two measurements in a panel
    design.
    """

    components: Tuple[MixtureComponent, ...]
    scale_interpretation: ScaleInterpretation = ScaleInterpretation.VARIANCE
    d: float = 1.0
    tau: Optional[float] = None
    item_correlation: float = 0.0

    def __post_init__(self):
        components = tuple(
            c if isinstance(c, MixtureComponent) else MixtureComponent(*c)
            for c in self.components
        )
        if not components:
            raise DomainError("model needs at least one component")
        total = math.fsum(c.weight for c in components)
        if abs(total - 1.0) > 1e-12:
            raise DomainError(f"component weights must sum to 1; got {total!r}")
        if not 0.0 < self.d <= 1.0:
            raise DomainError(f"degradation factor must lie in (0, 1]; got {self.d}")
        if not 0.0 <= self.item_correlation <= 1.0:
            raise DomainError(
                f"item correlation must lie in [0, 1]; got {self.item_correlation}"
            )
        object.__setattr__(self, "components", components)
        object.__setattr__(
            self, "scale_interpretation", ScaleInterpretation(self.scale_interpretation)
        )

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def stddevs(self) -> np.ndarray:
        scales = np.array([c.scale for c in self.components])
        if self.scale_interpretation is ScaleInterpretation.VARIANCE:
            return np.sqrt(scales)
        return scales

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def variance(self) -> float:
        second = self.weights @ (self.stddevs**2 + self.means**2)
        return float(second - self.mean() ** 2)

    def cdf(self, x):
        z = (np.asarray(x, dtype=float)[..., None] - self.means) / self.stddevs
        return special.ndtr(z) @ self.weights

    def quantile(self, p: float) -> float:
        if not 0.0 < p < 1.0:
            raise DomainError(f"probability must lie in (0, 1); got {p}")
        lo = float(np.min(self.means - 40.0 * self.stddevs))
        hi = float(np.max(self.means + 40.0 * self.stddevs))
        return optimize.brentq(lambda x: float(self.cdf(x)) - p, lo, hi, xtol=1e-12)

    def resolve_tau(self, p: Optional[float] = None) -> float:
        """Specification limit: tau when set, else the p-quantile of the model"""
        if p is not None:
            return self.quantile(p)
        if self.tau is None:
            raise DomainError("model has no specification limit and no target fraction")
        return self.tau

    def fraction_nonconforming(self) -> float:
        """P(X <= tau)"""
        return float(self.cdf(self.resolve_tau()))

    def moments(self) -> SampleMoments:
        return SampleMoments(self.mean(), math.sqrt(self.variance()))

    def reference_estimator(self) -> StandardizedQuantileEstimator:
        """Exact standardized quantile function of the model"""
        return standardize(self.quantile, self.moments(), None, {"reference": True})


_STANDARD_MODELS = {
    1: ((1.0, 220.0, 4.0),),
    2: ((0.9, 220.0, 4.0), (0.1, 230.0, 8.0)),
    3: ((0.2, 200.0, 4.0), (0.6, 220.0, 4.0), (0.2, 230.0, 8.0)),
    4: ((0.2, 212.0, 4.0), (0.6, 220.0, 8.0), (0.2, 228.0, 6.0)),
}


def standard_model(
    k: int,
    scale_interpretation: ScaleInterpretation = ScaleInterpretation.VARIANCE,
    **kwargs,
) -> SimModel:
    """Production models 1-4 of the reference simulation study"""
    try:
        spec = _STANDARD_MODELS[int(k)]
    except (KeyError, ValueError):
        raise DomainError(f"unknown model {k!r}; expected one of 1, 2, 3, 4")
    return SimModel(tuple(MixtureComponent(*c) for c in spec), scale_interpretation, **kwargs)


def spec_limit(mu_star: float, tolerance: float) -> float:
    """tau = mu* (1 - tolerance) for a nominal value mu* and a relative tolerance"""
    if not 0.0 <= tolerance < 1.0:
        raise DomainError(f"tolerance must lie in [0, 1); got {tolerance}")
    return mu_star * (1.0 - tolerance)


@dataclass(frozen=True)
class RngSpec:
    """Seed plus stream coordinates of a reproducible random stream"""

    seed: int
    stream_id: int = 0
    substream: Optional[int] = None

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer; got {self.seed}")
        if self.stream_id < 0 or (self.substream is not None and self.substream < 0):
            raise DomainError("stream indices must be >= 0")

    def child(self, index: int) -> "RngSpec":
        return replace(self, substream=index)

    def generator(self) -> np.random.Generator:
        key = (self.stream_id,) if self.substream is None else (self.stream_id, self.substream)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))


RngLike = Union[RngSpec, np.random.Generator]


def _generator(rng: RngLike) -> np.random.Generator:
    return rng.generator() if isinstance(rng, RngSpec) else rng


def _draw_components(model: SimModel, n: int, gen: np.random.Generator) -> np.ndarray:
    return gen.choice(len(model.components), size=n, p=model.weights)


def draw_values(model: SimModel, n: int, rng: RngLike) -> np.ndarray:
    gen = _generator(rng)
    comp = _draw_components(model, n, gen)
    return model.means[comp] + model.stddevs[comp] * gen.standard_normal(n)


def draw_model(model: SimModel, n: int, rng: RngLike) -> Sample:
    """n independent draws: component by weight, then a normal draw"""
    if n < 2:
        raise DomainError(f"a sample needs n >= 2; got {n}")
    return Sample(draw_values(model, n, rng))


def draw_stage_samples(
    model: SimModel, n1: int, n2: int, dep: DependenceSpec, rng: RngLike
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stage-1 measurements and degraded stage-2 measurements for the design.

    PANEL: the first min(n1, n2) items are remeasured; an item keeps its
    component and shared effect, only the measurement noise is redrawn.
    SPATIAL_BATCH: consecutive blocks of b items share a batch effect; stage 2
    remeasures the first min(n1, n2) items.
    """
    gen = _generator(rng)
    n_max = max(n1, n2)
    if dep.kind is DependenceKind.PANEL:
        r = model.item_correlation
        comp = _draw_components(model, n_max, gen)
        common = gen.standard_normal(n_max)
        noise1 = gen.standard_normal(n_max)
        noise2 = gen.standard_normal(n_max)
        mu, sd = model.means[comp], model.stddevs[comp]
        x1 = mu + sd * (math.sqrt(r) * common + math.sqrt(1.0 - r) * noise1)
        x2 = mu + sd * (math.sqrt(r) * common + math.sqrt(1.0 - r) * noise2)
        return x1[:n1], model.d * x2[:n2]
    if dep.kind is DependenceKind.SPATIAL_BATCH:
        b = dep.batch_size
        items = draw_values(model, n_max, gen)
        effects = gen.normal(0.0, math.sqrt(dep.sigma_b2), -(-n_max // b))
        x = items + effects[np.arange(n_max) // b]
        return x[:n1], model.d * x[:n2]
    x1 = draw_values(model, n1, gen)
    x2 = draw_values(model, n2, gen)
    return x1, model.d * x2


@dataclass(frozen=True)
class DecisionRecord:
    t1: float
    t2: Optional[float]
    stage1_accepted: bool
    accepted: bool


def two_stage_decision(
    lot_model: SimModel,
    plans: Tuple[SamplingPlan, SamplingPlan],
    moments: SampleMoments,
    dep: DependenceSpec,
    rng: RngLike,
    p: Optional[float] = None,
    tau: Optional[float] = None,
) -> DecisionRecord:
    """
    Replay the control-inspection decision on one lot.

    T1 = sqrt(n1)(mean1 - tau)/S_m must exceed c1; the lot then passes
    inspection iff T1 + T2 > c2 with T2 = sqrt(n2)(D mean2 - tau)/S_m, D = 1/d.
    """
    plan1, plan2 = plans
    tau = lot_model.resolve_tau(p) if tau is None else tau
    x1, x2 = draw_stage_samples(lot_model, plan1.n, plan2.n, dep, rng)
    t1 = math.sqrt(plan1.n) * (x1.mean() - tau) / moments.stddev
    if not t1 > plan1.c:
        return DecisionRecord(t1, None, False, False)
    t2 = math.sqrt(plan2.n) * (x2.mean() / lot_model.d - tau) / moments.stddev
    return DecisionRecord(t1, t2, True, t1 + t2 > plan2.c)


@dataclass(frozen=True)
class AcceptanceRate:
    rate: float
    se: float
    stage1_rate: float
    reps: int


def simulate_acceptance_rate(
    lot_model: SimModel,
    plans: Tuple[SamplingPlan, SamplingPlan],
    moments: SampleMoments,
    dep: DependenceSpec,
    reps: int,
    rng: RngSpec,
    p: Optional[float] = None,
) -> AcceptanceRate:
    """Overall and stage-1 acceptance rates over reps lots"""
    if reps < 1:
        raise DomainError(f"reps must be >= 1; got {reps}")
    tau = lot_model.resolve_tau(p)
    accepted = first = 0
    for k in range(reps):
        record = two_stage_decision(lot_model, plans, moments, dep, rng.child(k), tau=tau)
        first += record.stage1_accepted
        accepted += record.accepted
    rate = accepted / reps
    return AcceptanceRate(rate, math.sqrt(rate * (1.0 - rate) / reps), first / reps, reps)


@dataclass(frozen=True)
class SimResult:
    """Means and standard deviations of solved plans over the repetitions"""

    e_n1: float
    sd_n1: float
    e_c1: float
    sd_c1: float
    e_n2: float
    sd_n2: float
    e_c2: float
    sd_c2: float
    reps: int
    failures: int
    alpha1: float = float("nan")
    alpha2: float = float("nan")
    m: int = 0
    label: str = ""
    plans: np.ndarray = field(default=None, repr=False, compare=False)

    def to_row(self) -> dict:
        return dict(zip(RESULT_COLUMNS, [
            self.alpha1, self.alpha2, self.m, self.label,
            self.e_n1, self.sd_n1, self.e_c1, self.sd_c1,
            self.e_n2, self.sd_n2, self.e_c2, self.sd_c2,
        ]))


def results_frame(results: Iterable[SimResult]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in results], columns=RESULT_COLUMNS)


def method_label(method: Optional[Method]) -> str:
    return "exact" if method is None else Method(method).value


@dataclass(frozen=True)
class _PlanJob:
    model: SimModel
    m: int
    spec: QualitySpec
    method: Optional[Method]
    dep: DependenceSpec
    solver: SolverConfig
    quad: QuadratureConfig
    bd: BDConfig


def _solve_repetition(job: _PlanJob, rng: RngSpec) -> Optional[Tuple[float, float, float, float]]:
    """(n1, c1, n2, c2) for one fresh time-t0 sample, None when solving fails"""
    try:
        if job.method is None:
            g = job.model.reference_estimator()
        else:
            sample = draw_model(job.model, job.m, rng)
            g = build_estimator(sample, job.method, bd=job.bd)
        plan1 = stage1_plan(job.spec, g)
        plan2 = stage2_plan(job.spec, plan1, g, job.dep, job.solver, job.quad)
    except SamplingPlanError as e:
        logger.debug("repetition %s failed: %s", rng.substream, e)
        return None
    return plan1.n, plan1.c, plan2.n, plan2.c


def _solve_chunk(job: _PlanJob, rngs: Sequence[RngSpec]):
    return [_solve_repetition(job, r) for r in rngs]


def _spread(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if values.size > 1 else 0.0


def simulate_plan_distribution(
    model: SimModel,
    m: int,
    spec: QualitySpec,
    method: Optional[Method],
    dep: DependenceSpec = DependenceSpec(),
    reps: int = 1000,
    rng: RngSpec = RngSpec(0),
    solver: SolverConfig = SolverConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
    bd: BDConfig = BDConfig(),
    workers: Optional[int] = None,
) -> SimResult:
    """
    Distribution of solved plans over reps fresh time-t0 samples of size m.

    method None solves with the model's exact standardized quantiles.
    Failed repetitions are counted and left out of the moments.

    Raises:
        SimulationAbortedError: more than half of the repetitions failed
    """
    if reps < 1:
        raise DomainError(f"reps must be >= 1; got {reps}")
    if m < 10:
        raise DomainError(f"time-t0 sample size must be >= 10; got {m}")
    method = None if method is None else Method(method)
    job = _PlanJob(model, m, spec, method, dep, solver, quad, bd)
    rngs = [rng.child(k) for k in range(reps)]

    if workers and workers > 1:
        chunks = [rngs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_solve_chunk, [job] * workers, chunks))
        outcomes: List = [None] * reps
        for i, part in enumerate(parts):
            outcomes[i::workers] = part
    else:
        outcomes = _solve_chunk(job, rngs)

    solved = np.array([o for o in outcomes if o is not None], dtype=float).reshape(-1, 4)
    failures = reps - solved.shape[0]
    if failures > MAX_FAILURE_FRACTION * reps:
        raise SimulationAbortedError(
            f"{failures} of {reps} repetitions failed to produce a plan "
            f"(method {method_label(method)}, m={m})"
        )
    if failures:
        logger.warning("%d of %d repetitions failed and were excluded", failures, reps)
    means = solved.mean(axis=0)
    sds = [_spread(solved[:, j]) for j in range(4)]
    logger.info(
        "%s m=%d: E(n1)=%.2f E(n2)=%.2f over %d reps",
        method_label(method), m, means[0], means[2], solved.shape[0],
    )
    return SimResult(
        means[0], sds[0], means[1], sds[1], means[2], sds[2], means[3], sds[3],
        reps, failures, spec.alpha1, spec.alpha2, m, method_label(method), solved,
    )


def simulate_table(
    model: SimModel,
    aql: float,
    rql: float,
    alpha: float = 0.1,
    alpha1s: Sequence[float] = (0.03, 0.05, 0.07),
    ms: Sequence[int] = (250, 500),
    methods: Sequence[Optional[Method]] = (Method.KDE_BCV, Method.KDE_SJ),
    reps: int = 1000,
    seed: int = 0,
    **kwargs,
) -> pd.DataFrame:
    """Plan distributions over the alpha1 x m x method grid, one stream per row"""
    results = []
    for alpha1 in alpha1s:
        spec = QualitySpec.from_risks(aql, rql, alpha, alpha1)
        for m in ms:
            for method in methods:
                rng = RngSpec(seed, stream_id=len(results))
                results.append(
                    simulate_plan_distribution(model, m, spec, method, reps=reps, rng=rng, **kwargs)
                )
    return results_frame(results)


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    se: float
    hits: int


def mc_oc_oracle(
    plan1: SamplingPlan,
    plan2: SamplingPlan,
    q: float,
    rho: float,
    draws: int,
    rng: RngLike,
) -> OracleEstimate:
    """
    Brute-force stage-2 OC: P(Z1 > a, Z1 + Z2 > b) / P(Z1 > a) for standard
    normals with correlation rho, a = c1 + sqrt(n1) q, b = c2 + (sqrt(n1) + sqrt(n2)) q.
    """
    if draws < 10_000:
        raise DomainError(f"oracle needs at least 10000 draws; got {draws}")
    if not abs(rho) < 1.0:
        raise DomainError(f"rho must lie in (-1, 1); got {rho}")
    gen = _generator(rng)
    a = plan1.c + math.sqrt(plan1.n) * q
    b = plan2.c + (math.sqrt(plan1.n) + math.sqrt(plan2.n)) * q
    spread = math.sqrt(1.0 - rho * rho)
    hits = passes = 0
    remaining = draws
    while remaining:
        size = min(remaining, ORACLE_CHUNK)
        z1 = gen.standard_normal(size)
        z2 = rho * z1 + spread * gen.standard_normal(size)
        conditioned = z1 > a
        hits += int(conditioned.sum())
        passes += int((conditioned & (z1 + z2 > b)).sum())
        remaining -= size
    if hits == 0:
        raise DegenerateEstimateError(f"no draw exceeded the stage-1 threshold {a:.6g}")
    ratio = passes / hits
    return OracleEstimate(ratio, math.sqrt(ratio * (1.0 - ratio) / hits), hits)


def panel_mean_correlation(n1: int, n2: int, item_corr: float) -> float:
    """Cor of the stage means when min(n1, n2) items are remeasured"""
    return min(n1, n2) / math.sqrt(n1 * n2) * item_corr


@dataclass(frozen=True)
class CovarianceEstimate:
    value: float
    se: float


def simulate_batch_cross_covariance(
    b: int,
    r1: int,
    r2: int,
    sigma_b2: float,
    sigma_eps2: float,
    reps: int,
    rng: RngLike,
) -> CovarianceEstimate:
    """
    Cov(sqrt(n1) mean1, sqrt(n2) mean2) for X = mu + B + eps with batch effects
    B shared by b adjacent items; stage 2 remeasures the first min(r1, r2) batches.
    """
    if reps < 2:
        raise DomainError(f"reps must be >= 2; got {reps}")
    gen = _generator(rng)
    r_max = max(r1, r2)
    n1, n2 = b * r1, b * r2
    s1_all = np.empty(reps)
    s2_all = np.empty(reps)
    chunk = max(1, ORACLE_CHUNK // (r_max * b))
    for start in range(0, reps, chunk):
        size = min(chunk, reps - start)
        effects = gen.normal(0.0, math.sqrt(sigma_b2), (size, r_max, 1))
        noise = gen.normal(0.0, math.sqrt(sigma_eps2), (size, r_max, b))
        batch_sums = (effects + noise).sum(axis=2)
        s1 = batch_sums[:, :r1].sum(axis=1) / math.sqrt(n1)
        s2 = batch_sums[:, :r2].sum(axis=1) / math.sqrt(n2)
        s1_all[start:start + size] = s1
        s2_all[start:start + size] = s2
    products = (s1_all - s1_all.mean()) * (s2_all - s2_all.mean())
    value = float(products.sum() / (reps - 1))
    return CovarianceEstimate(value, float(np.std(products, ddof=1) / math.sqrt(reps)))
