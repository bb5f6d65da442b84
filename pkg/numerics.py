"""
Standard-normal functions and semi-infinite quadrature

All OC formulas integrate a bounded function against the standard normal
density, so integrals over [a, oo) are truncated a few standard deviations
out and handed to QUADPACK's adaptive Gauss-Kronrod rule.
"""

import logging
import math
import os
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
from scipy import integrate, special

from errors import ConvergenceError, DomainError

logger = logging.getLogger(__name__)

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances for integrate_tail"""

    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    truncation_radius: float = 9.0
    max_subdivisions: int = 200

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise DomainError(f"rel_tol must be > 0; got {self.rel_tol}")
        if not self.abs_tol > 0:
            raise DomainError(f"abs_tol must be > 0; got {self.abs_tol}")
        if not self.truncation_radius >= 6:
            raise DomainError(
                f"truncation_radius must be >= 6; got {self.truncation_radius}"
            )
        if self.max_subdivisions < 1:
            raise DomainError(
                f"max_subdivisions must be >= 1; got {self.max_subdivisions}"
            )

    @classmethod
    def from_env(cls, **overrides) -> "QuadratureConfig":
        """Default config with TSSP_QUAD_RELTOL applied, then explicit overrides"""
        env_value = os.environ.get("TSSP_QUAD_RELTOL")
        if env_value:
            try:
                overrides.setdefault("rel_tol", float(env_value))
            except ValueError:
                raise DomainError(f"TSSP_QUAD_RELTOL is not a number: {env_value!r}")
        return cls(**overrides)

    def scaled(self, factor: float) -> "QuadratureConfig":
        """Copy with abs_tol multiplied by factor (for small reference masses)"""
        return replace(self, abs_tol=max(self.abs_tol * factor, 1e-300))


def _check_not_nan(x, name: str = "x"):
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any():
        raise DomainError(f"{name} must not be NaN")
    return arr


def std_normal_pdf(x):
    """Standard normal density (2*pi)^(-1/2) exp(-x^2/2)"""
    arr = np.asarray(x, dtype=float)
    if not np.isfinite(arr).all():
        raise DomainError("std_normal_pdf requires finite input")
    out = np.exp(-0.5 * arr * arr) / SQRT_2PI
    return float(out) if out.ndim == 0 else out


def std_normal_cdf(x):
    """Standard normal distribution function; +-inf map to 1 and 0"""
    arr = _check_not_nan(x)
    out = special.ndtr(arr)
    return float(out) if out.ndim == 0 else out


def std_normal_quantile(p):
    """Inverse of std_normal_cdf on the open unit interval"""
    arr = _check_not_nan(p, "p")
    if ((arr <= 0.0) | (arr >= 1.0)).any():
        raise DomainError(f"probability must lie in (0, 1); got {p}")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def _tail_limits(a: float, radius: float) -> Tuple[float, float]:
    lower = max(a, -radius)
    upper = max(lower, 0.0) + radius
    return lower, upper


def integrate_tail(
    f: Callable[[float], float], a: float, cfg: QuadratureConfig = QuadratureConfig()
) -> float:
    """
    Integral of f over [a, oo) for integrands dominated by the normal density.

    The range is truncated to [max(a, -R), max(a, 0) + R] with R the
    truncation radius, outside of which the Gaussian weight carries no mass
    worth resolving.

    Raises:
        ConvergenceError: subdivision limit reached without meeting the
            tolerance; carries the best estimate and its error bound
    """
    if math.isnan(a):
        raise DomainError("lower limit must not be NaN")
    lower, upper = _tail_limits(a, cfg.truncation_radius)
    result = integrate.quad(
        f,
        lower,
        upper,
        epsabs=cfg.abs_tol,
        epsrel=cfg.rel_tol,
        limit=cfg.max_subdivisions,
        full_output=1,
    )
    value, abserr = result[0], result[1]
    if len(result) > 3:
        # QUADPACK flagged trouble; accept when the bound still meets the tolerance
        if abserr > max(cfg.abs_tol, cfg.rel_tol * abs(value)):
            raise ConvergenceError(
                f"quadrature on [{lower:.6g}, {upper:.6g}] did not converge: {result[3]}",
                estimate=value,
                error_bound=abserr,
            )
        logger.debug("quad warning ignored, bound %.3g within tolerance", abserr)
    return value


@lru_cache(maxsize=8)
def _legendre_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def tail_rule(a, cfg: QuadratureConfig = QuadratureConfig(), order: int = 96):
    """
    Fixed Gauss-Legendre nodes and weights on the truncated tail of each a.

    Vectorized companion of integrate_tail for evaluating many integrals at
    once (grid searches); returns arrays of shape a.shape + (order,).
    """
    a = np.asarray(a, dtype=float)
    radius = cfg.truncation_radius
    lower = np.maximum(a, -radius)
    upper = np.maximum(lower, 0.0) + radius
    x, w = _legendre_rule(order)
    half = 0.5 * (upper - lower)[..., None]
    mid = 0.5 * (upper + lower)[..., None]
    return mid + half * x, half * w
