"""
Operating characteristics of the two-stage (control-inspection) scheme

Stage 1 accepts iff T1 > c1. Stage 2 accepts iff T1 + T2 > c2, so its OC is a
conditional probability given stage-1 acceptance. The overall OC is the product
OC1 * OC2, i.e. P(T1 > c1, T1 + T2 > c2).
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import special

from errors import (
    DependenceOutOfRangeError,
    DomainError,
    InfeasibleAllocationError,
    NullConditioningError,
)
from numerics import QuadratureConfig, integrate_tail, std_normal_pdf, tail_rule

logger = logging.getLogger(__name__)

NULL_EVENT = 1e-300
DEFAULT_RHO_MAX = 0.99

QuantileFn = Callable[[float], float]


def _check_fraction(name: str, value: float):
    if not 0.0 < value < 1.0:
        raise DomainError(f"{name} must lie in (0, 1); got {value}")


def _check_risk(name: str, value: float):
    if not 0.0 < value < 0.5:
        raise DomainError(f"{name} must lie in (0, 0.5); got {value}")


@dataclass(frozen=True)
class RiskAllocation:
    """Per-stage risks plus the overall pair they imply"""

    alpha1: float
    beta1: float
    alpha2: float
    beta2: float
    alpha: float
    beta: float


def allocate_risks(
    alpha: float, beta: float, alpha1: float, symmetric: bool = True
) -> RiskAllocation:
    """
    Split the global producer risk so that (1 - alpha1)(1 - alpha2) = 1 - alpha.

    symmetric: consumer risks equal the producer risks (beta_i = alpha_i), and the
        implied global consumer risk is beta1 * beta2. Otherwise the consumer risk
        is split evenly, beta1 = beta2 = sqrt(beta).
    """
    _check_fraction("alpha", alpha)
    _check_fraction("beta", beta)
    if not alpha1 > 0:
        raise DomainError(f"alpha1 must be > 0; got {alpha1}")
    if alpha1 >= alpha:
        raise InfeasibleAllocationError(
            f"alpha1 = {alpha1} leaves no stage-2 risk within alpha = {alpha}"
        )
    alpha2 = 1.0 - (1.0 - alpha) / (1.0 - alpha1)
    if symmetric:
        beta1, beta2 = alpha1, alpha2
    else:
        beta1 = beta2 = math.sqrt(beta)
    implied_alpha = 1.0 - (1.0 - alpha1) * (1.0 - alpha2)
    return RiskAllocation(alpha1, beta1, alpha2, beta2, implied_alpha, beta1 * beta2)


def equal_split_risks(alpha: float, beta: float) -> RiskAllocation:
    """alpha1 = alpha2 = 1 - sqrt(1 - alpha) and beta1 = beta2 = sqrt(beta)"""
    _check_fraction("alpha", alpha)
    _check_fraction("beta", beta)
    a = 1.0 - math.sqrt(1.0 - alpha)
    b = math.sqrt(beta)
    return RiskAllocation(a, b, a, b, 1.0 - (1.0 - a) ** 2, b * b)


@dataclass(frozen=True)
class QualitySpec:
    """AQL/RQL and the global and per-stage risks"""

    aql: float
    rql: float
    alpha: float
    beta: float
    alpha1: float
    beta1: float
    alpha2: float
    beta2: float

    def __post_init__(self):
        _check_fraction("aql", self.aql)
        _check_fraction("rql", self.rql)
        if not self.aql < self.rql:
            raise DomainError(f"aql must be < rql; got aql={self.aql}, rql={self.rql}")
        for name in ("alpha", "beta", "alpha1", "beta1", "alpha2", "beta2"):
            _check_risk(name, getattr(self, name))

    @classmethod
    def from_allocation(cls, aql: float, rql: float, risks: RiskAllocation) -> "QualitySpec":
        return cls(
            aql, rql, risks.alpha, risks.beta,
            risks.alpha1, risks.beta1, risks.alpha2, risks.beta2,
        )

    @classmethod
    def from_risks(
        cls,
        aql: float,
        rql: float,
        alpha: float,
        alpha1: float,
        beta: Optional[float] = None,
        symmetric: bool = True,
    ) -> "QualitySpec":
        """Spec with stage-2 risks allocated from the global producer risk"""
        beta = alpha if beta is None else beta
        return cls.from_allocation(aql, rql, allocate_risks(alpha, beta, alpha1, symmetric))


@dataclass(frozen=True)
class SamplingPlan:
    """Sample size n and critical value c for one stage"""

    n: int
    c: float

    def __post_init__(self):
        if isinstance(self.n, float) and self.n.is_integer():
            object.__setattr__(self, "n", int(self.n))
        if not isinstance(self.n, (int, np.integer)) or isinstance(self.n, bool):
            raise DomainError(f"sample size must be an integer; got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "c", float(self.c))
        if self.n < 1:
            raise DomainError(f"sample size must be >= 1; got {self.n}")
        if not math.isfinite(self.c):
            raise DomainError(f"critical value must be finite; got {self.c}")


class DependenceKind(str, Enum):
    INDEPENDENT = "independent"
    PANEL = "panel"
    SPATIAL_BATCH = "batch"


@dataclass(frozen=True)
class BatchCovariance:
    """Cross-stage covariance of the batch design and its normalized coefficient"""

    raw: float
    coefficient: float


def batch_cross_covariance(
    b: int, r1: int, r2: int, sigma_b2: float, sigma_eps2: float
) -> BatchCovariance:
    """
    sqrt(r1/r2) * (b sigma_B^2 + sigma_eps^2), normalized by the per-observation
    variance sigma_B^2 + sigma_eps^2.
    """
    if b < 1 or r1 < 1 or r2 < 1:
        raise DomainError(f"batch size and counts must be >= 1; got b={b}, r1={r1}, r2={r2}")
    if not sigma_eps2 > 0:
        raise DomainError(f"sigma_eps2 must be > 0; got {sigma_eps2}")
    if not sigma_b2 >= 0:
        raise DomainError(f"sigma_b2 must be >= 0; got {sigma_b2}")
    ratio = math.sqrt(r1 / r2)
    raw = ratio * b * sigma_b2 + ratio * sigma_eps2
    return BatchCovariance(raw, raw / (sigma_b2 + sigma_eps2))


@dataclass(frozen=True)
class DependenceSpec:
    """
    Dependence between the stage statistics.

    Build through independent(), panel() or spatial_batch(); the constructor
    rejects a coefficient at or beyond rho_max.
    """

    kind: DependenceKind = DependenceKind.INDEPENDENT
    rho_hat: float = 0.0
    lam: Optional[float] = None
    batch_size: int = 1
    r1: int = 1
    r2: int = 1
    sigma_b2: float = 0.0
    sigma_eps2: float = 1.0
    rho_max: float = DEFAULT_RHO_MAX

    def __post_init__(self):
        object.__setattr__(self, "kind", DependenceKind(self.kind))
        if not 0.0 < self.rho_max < 1.0:
            raise DomainError(f"rho_max must lie in (0, 1); got {self.rho_max}")
        if self.lam is not None and not self.lam > 0:
            raise DomainError(f"lambda must be > 0; got {self.lam}")
        if self.kind is DependenceKind.PANEL:
            if not math.isfinite(self.rho_hat) or abs(self.rho_hat) >= self.rho_max:
                raise DependenceOutOfRangeError(self.rho_hat, self.rho_max)
        elif self.kind is DependenceKind.SPATIAL_BATCH:
            coefficient = self.batch.coefficient
            if coefficient >= self.rho_max:
                raise DependenceOutOfRangeError(coefficient, self.rho_max)

    @classmethod
    def independent(cls) -> "DependenceSpec":
        return cls()

    @classmethod
    def panel(
        cls, rho_hat: float, lam: Optional[float] = None, rho_max: float = DEFAULT_RHO_MAX
    ) -> "DependenceSpec":
        return cls(DependenceKind.PANEL, rho_hat=rho_hat, lam=lam, rho_max=rho_max)

    @classmethod
    def spatial_batch(
        cls,
        b: int,
        r1: int,
        r2: int,
        sigma_b2: float,
        sigma_eps2: float,
        rho_max: float = DEFAULT_RHO_MAX,
    ) -> "DependenceSpec":
        return cls(
            DependenceKind.SPATIAL_BATCH, batch_size=b, r1=r1, r2=r2,
            sigma_b2=sigma_b2, sigma_eps2=sigma_eps2, rho_max=rho_max,
        )

    @property
    def batch(self) -> BatchCovariance:
        return batch_cross_covariance(
            self.batch_size, self.r1, self.r2, self.sigma_b2, self.sigma_eps2
        )

    @property
    def rho(self) -> float:
        if self.kind is DependenceKind.PANEL:
            return self.rho_hat
        if self.kind is DependenceKind.SPATIAL_BATCH:
            return self.batch.coefficient
        return 0.0


# Evaluation at a fixed standardized quantile q = G^{-1}(p). Sample sizes may be
# real here; the stage-2 solver relaxes n to the reals.


def stage1_threshold(q: float, n1: float, c1: float) -> float:
    return c1 + math.sqrt(n1) * q


def oc1_at(q: float, n1: float, c1: float) -> float:
    return float(special.ndtr(-stage1_threshold(q, n1, c1)))


def _check_rho(rho: float, rho_max: float):
    if not math.isfinite(rho) or abs(rho) >= rho_max:
        raise DependenceOutOfRangeError(rho, rho_max)


def joint_acceptance_at(
    q: float,
    n1: float,
    c1: float,
    n2: float,
    c2: float,
    rho: float = 0.0,
    cfg: QuadratureConfig = QuadratureConfig(),
) -> float:
    """P(T1 > c1, T1 + T2 > c2) with (T1, T2) standard bivariate normal shifted by q"""
    a = stage1_threshold(q, n1, c1)
    b = c2 + (math.sqrt(n1) + math.sqrt(n2)) * q
    denominator = float(special.ndtr(-a))
    if denominator < NULL_EVENT:
        return 0.0
    slope = 1.0 + rho
    spread = math.sqrt(1.0 - rho * rho)

    def integrand(z):
        return special.ndtr(-(b - slope * z) / spread) * std_normal_pdf(z)

    numerator = integrate_tail(integrand, a, cfg.scaled(denominator))
    return min(max(numerator, 0.0), denominator)


def oc2_at(
    q: float,
    n1: float,
    c1: float,
    n2: float,
    c2: float,
    rho: float = 0.0,
    cfg: QuadratureConfig = QuadratureConfig(),
) -> float:
    """Stage-2 OC as the ratio P(T1 > c1, T1 + T2 > c2) / P(T1 > c1)"""
    denominator = float(special.ndtr(-stage1_threshold(q, n1, c1)))
    if denominator < NULL_EVENT:
        raise NullConditioningError(
            f"stage-1 acceptance probability {denominator:.3g} is numerically zero"
        )
    numerator = joint_acceptance_at(q, n1, c1, n2, c2, rho, cfg)
    return min(max(numerator / denominator, 0.0), 1.0)


def oc2_grid(
    q: float,
    n1: float,
    c1: float,
    n2,
    c2,
    rho: float = 0.0,
    cfg: QuadratureConfig = QuadratureConfig(),
    order: int = 96,
) -> np.ndarray:
    """
    Stage-2 OC on the outer grid n2 x c2 with a fixed Gauss-Legendre rule.

    The denominator is integrated with the same rule so the ratio stays in [0, 1].
    """
    a = stage1_threshold(q, n1, c1)
    z, w = tail_rule(a, cfg, order)
    n2 = np.asarray(n2, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    b = c2[None, :] + (math.sqrt(n1) + np.sqrt(n2)[:, None]) * q
    weight = w * std_normal_pdf(z)
    denominator = weight.sum()
    if denominator < NULL_EVENT:
        raise NullConditioningError(
            f"stage-1 acceptance probability {denominator:.3g} is numerically zero"
        )
    spread = math.sqrt(1.0 - rho * rho)
    tail = special.ndtr(-(b[..., None] - (1.0 + rho) * z) / spread)
    return np.clip(tail @ weight / denominator, 0.0, 1.0)


# Public evaluation on fractions p through an estimator


def oc1(p: float, plan1: SamplingPlan, g: QuantileFn) -> float:
    """1 - Phi(c1 + sqrt(n1) G^{-1}(p))"""
    _check_fraction("p", p)
    return oc1_at(g(p), plan1.n, plan1.c)


def oc2_independent(
    p: float,
    plan1: SamplingPlan,
    plan2: SamplingPlan,
    g: QuantileFn,
    cfg: QuadratureConfig = QuadratureConfig(),
) -> float:
    _check_fraction("p", p)
    return oc2_at(g(p), plan1.n, plan1.c, plan2.n, plan2.c, 0.0, cfg)


def oc2_dependent(
    p: float,
    plan1: SamplingPlan,
    plan2: SamplingPlan,
    g: QuantileFn,
    rho: float,
    cfg: QuadratureConfig = QuadratureConfig(),
    rho_max: float = DEFAULT_RHO_MAX,
) -> float:
    """Stage-2 OC when T2 given T1 = z is normal with mean rho z and variance 1 - rho^2"""
    _check_fraction("p", p)
    _check_rho(rho, rho_max)
    return oc2_at(g(p), plan1.n, plan1.c, plan2.n, plan2.c, rho, cfg)


def oc2(
    p: float,
    plan1: SamplingPlan,
    plan2: SamplingPlan,
    g: QuantileFn,
    dep: DependenceSpec = DependenceSpec(),
    cfg: QuadratureConfig = QuadratureConfig(),
) -> float:
    if dep.kind is DependenceKind.INDEPENDENT:
        return oc2_independent(p, plan1, plan2, g, cfg)
    return oc2_dependent(p, plan1, plan2, g, dep.rho, cfg, dep.rho_max)


def overall_oc(
    p: float,
    plan1: SamplingPlan,
    plan2: SamplingPlan,
    g: QuantileFn,
    dep: DependenceSpec = DependenceSpec(),
    cfg: QuadratureConfig = QuadratureConfig(),
) -> float:
    """OC1 * OC2; zero where stage 1 never accepts"""
    _check_fraction("p", p)
    if dep.kind is not DependenceKind.INDEPENDENT:
        _check_rho(dep.rho, dep.rho_max)
    return joint_acceptance_at(g(p), plan1.n, plan1.c, plan2.n, plan2.c, dep.rho, cfg)


def oc_curve(
    ps: Sequence[float],
    plan1: SamplingPlan,
    plan2: SamplingPlan,
    g: QuantileFn,
    dep: DependenceSpec = DependenceSpec(),
    cfg: QuadratureConfig = QuadratureConfig(),
) -> pd.DataFrame:
    """Table p, oc1, oc2, overall; oc2 is NaN where stage 1 never accepts"""
    rows = []
    for p in ps:
        p = float(p)
        first = oc1(p, plan1, g)
        both = overall_oc(p, plan1, plan2, g, dep, cfg)
        second = both / first if first >= NULL_EVENT else float("nan")
        rows.append({"p": p, "oc1": first, "oc2": min(second, 1.0), "overall": both})
    return pd.DataFrame(rows, columns=["p", "oc1", "oc2", "overall"])


class Stage(str, Enum):
    ONE = "1"
    TWO = "2"
    OVERALL = "overall"


@dataclass(frozen=True)
class ValidityReport:
    stage: Stage
    oc_aql: float
    oc_rql: float
    producer_target: float
    consumer_target: float

    @property
    def producer_margin(self) -> float:
        return self.oc_aql - self.producer_target

    @property
    def consumer_margin(self) -> float:
        return self.consumer_target - self.oc_rql

    @property
    def producer_ok(self) -> bool:
        return self.producer_margin >= 0

    @property
    def consumer_ok(self) -> bool:
        return self.consumer_margin >= 0

    @property
    def valid(self) -> bool:
        return self.producer_ok and self.consumer_ok

    def deviation(self) -> float:
        """Squared deviation from both targets"""
        return self.producer_margin**2 + self.consumer_margin**2


def validate_plan(
    spec: QualitySpec, oc_fn: Callable[[float], float], stage: Union[Stage, str, int]
) -> ValidityReport:
    """OC(aql) >= 1 - alpha and OC(rql) <= beta at the given stage"""
    stage = stage if isinstance(stage, Stage) else Stage(str(stage))
    alpha, beta = {
        Stage.ONE: (spec.alpha1, spec.beta1),
        Stage.TWO: (spec.alpha2, spec.beta2),
        Stage.OVERALL: (spec.alpha, spec.beta),
    }[stage]
    report = ValidityReport(stage, oc_fn(spec.aql), oc_fn(spec.rql), 1.0 - alpha, beta)
    logger.debug(
        "stage %s: OC(aql)=%.6g OC(rql)=%.6g valid=%s",
        stage.value, report.oc_aql, report.oc_rql, report.valid,
    )
    return report
