"""
Standardized quantile estimators from the production-line sample

The time-t0 sample yields a raw quantile function F_m^{-1} (sample
quantile, inverted Gaussian kernel estimator, or Bernstein-Durrmeyer
polynomial) which is standardized with the sample mean and the
(m-1)-denominator standard deviation.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from errors import (
    ConvergenceError,
    DataFileError,
    DegenerateSampleError,
    DomainError,
)
from numerics import SQRT_2PI, std_normal_quantile

logger = logging.getLogger(__name__)

PAIR_COUNT_BINS = 1000
MIN_BANDWIDTH_SAMPLE = 10


class Method(str, Enum):
    """Raw quantile estimation methods"""

    EMPIRICAL = "empirical"
    KDE_BCV = "kde-bcv"
    KDE_SJ = "kde-sj"
    BD_POLY = "bd"


def read_numeric_csv(path, columns: int = 1) -> np.ndarray:
    """
    Read a numeric CSV file, one record per line.

    A leading non-numeric row is taken as a header. Blank lines are skipped.

    Returns:
        Array of shape (rows,) for one column, (rows, columns) otherwise

    Raises:
        DataFileError: unreadable file, missing columns or a non-numeric
            row (the message names the line)
    """
    path = Path(path)
    try:
        frame = pd.read_csv(
            path, header=None, dtype=str, skip_blank_lines=False, comment="#"
        )
    except FileNotFoundError:
        raise DataFileError(path, "file not found")
    except pd.errors.EmptyDataError:
        raise DataFileError(path, "file is empty")
    except (OSError, pd.errors.ParserError) as e:
        raise DataFileError(path, f"cannot read file ({e})")

    if frame.shape[1] < columns:
        raise DataFileError(path, f"expected {columns} column(s), got {frame.shape[1]}")

    frame = frame.iloc[:, :columns]
    raw = frame.apply(lambda col: col.str.strip())
    numeric = raw.apply(pd.to_numeric, errors="coerce")

    blank = raw.isna().all(axis=1)
    bad = numeric.isna().any(axis=1) & ~blank
    rows = []
    header_seen = False
    for position in range(len(frame)):
        line = position + 1
        if blank.iloc[position]:
            continue
        if bad.iloc[position]:
            if not rows and not header_seen:
                header_seen = True
                logger.debug("treating line %d of %s as header", line, path)
                continue
            raise DataFileError(path, "non-numeric value", line=line)
        rows.append(numeric.iloc[position].to_numpy(dtype=float))

    if not rows:
        raise DataFileError(path, "no numeric rows")
    data = np.vstack(rows)
    if not np.isfinite(data).all():
        raise DataFileError(path, "non-finite value")
    return data[:, 0] if columns == 1 else data


@dataclass(frozen=True, eq=False)
class Sample:
    """Measurements of the quality variable from the production line"""

    values: np.ndarray
    sorted_view: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).ravel()
        if arr.size < 2:
            raise DomainError(f"sample needs at least 2 values; got {arr.size}")
        if not np.isfinite(arr).all():
            raise DomainError("sample values must be finite")
        arr.setflags(write=False)
        ordered = np.sort(arr)
        ordered.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "sorted_view", ordered)

    @property
    def size(self) -> int:
        return self.values.size

    @classmethod
    def from_csv(cls, path) -> "Sample":
        return cls(read_numeric_csv(path, columns=1))

    def shifted(self, delta: float, scale: float = 1.0) -> "Sample":
        """Sample delta + scale * x (location difference of the production line)"""
        return Sample(delta + scale * self.values)


SampleLike = Union[Sample, Sequence[float], np.ndarray]


def _sorted_values(s: SampleLike) -> np.ndarray:
    if isinstance(s, Sample):
        return s.sorted_view
    arr = np.sort(np.asarray(s, dtype=float).ravel())
    if arr.size == 0 or not np.isfinite(arr).all():
        raise DomainError("sample values must be finite and non-empty")
    return arr


def _check_probability(p: float):
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1); got {p}")


@dataclass(frozen=True)
class SampleMoments:
    """Mean and (m-1)-denominator standard deviation of the time-t0 sample"""

    mean: float
    stddev: float

    def __post_init__(self):
        if not (math.isfinite(self.stddev) and self.stddev > 0):
            raise DegenerateSampleError(
                f"standard deviation must be > 0; got {self.stddev}"
            )
        if not math.isfinite(self.mean):
            raise DomainError("mean must be finite")

    @classmethod
    def from_sample(cls, s: SampleLike) -> "SampleMoments":
        values = _sorted_values(s)
        if values.size < 2:
            raise DegenerateSampleError("moments need at least 2 values")
        return cls(float(np.mean(values)), float(np.std(values, ddof=1)))


@dataclass(frozen=True)
class StandardizedQuantileEstimator:
    """p -> (F_m^{-1}(p) - mean) / stddev"""

    raw_quantile: Callable[[float], float]
    moments: SampleMoments
    method_tag: Optional[Method] = None
    details: Mapping[str, object] = field(default_factory=dict)

    def raw(self, p: float) -> float:
        _check_probability(p)
        return float(self.raw_quantile(p))

    def evaluate(self, p: float) -> float:
        return (self.raw(p) - self.moments.mean) / self.moments.stddev

    __call__ = evaluate

    def evaluate_many(self, ps) -> np.ndarray:
        return np.array([self.evaluate(float(p)) for p in np.ravel(ps)])


def standardize(
    raw: Callable[[float], float],
    mom: SampleMoments,
    method_tag: Optional[Method] = None,
    details: Optional[Mapping[str, object]] = None,
) -> StandardizedQuantileEstimator:
    """Wrap a raw quantile function into the standardized estimator"""
    return StandardizedQuantileEstimator(raw, mom, method_tag, dict(details or {}))


def reference_estimator(
    quantile_fn: Callable[[float], float] = std_normal_quantile,
    moments: SampleMoments = SampleMoments(0.0, 1.0),
) -> StandardizedQuantileEstimator:
    """
    Estimator built from a known quantile function and known moments.

    With the defaults this is the exact standard normal quantile function.
    """
    return standardize(quantile_fn, moments, None, {"reference": True})


# Sample quantile


def empirical_quantile(s: SampleLike, p: float) -> float:
    """Order statistic X_(ceil(m p))"""
    _check_probability(p)
    values = _sorted_values(s)
    m = values.size
    k = math.ceil(round(m * p, 9))
    k = min(max(k, 1), m)
    return float(values[k - 1])


# Gaussian kernel estimator


def kde_density(s: SampleLike, x, h: float):
    """Gaussian-kernel density estimate with bandwidth h"""
    values = _sorted_values(s)
    z = (np.asarray(x, dtype=float)[..., None] - values) / h
    return np.exp(-0.5 * z * z).sum(axis=-1) / (values.size * h * SQRT_2PI)


def kde_cdf(s: SampleLike, x, h: float):
    """Integrated kernel estimate, mean of Phi((x - X_i)/h)"""
    values = _sorted_values(s)
    z = (np.asarray(x, dtype=float)[..., None] - values) / h
    return special.ndtr(z).mean(axis=-1)


def kde_quantile(s: SampleLike, p: float, h: float) -> float:
    """
    Solve kde_cdf(x) = p by bracketed root finding.

    Raises:
        ConvergenceError: the root is not bracketed in [min - 10h, max + 10h]
    """
    _check_probability(p)
    if not h > 0:
        raise DomainError(f"bandwidth must be > 0; got {h}")
    values = _sorted_values(s)
    lo, hi = values[0] - 10.0 * h, values[-1] + 10.0 * h

    def excess(x):
        return float(kde_cdf(values, x, h)) - p

    f_lo, f_hi = excess(lo), excess(hi)
    if f_lo > 0 or f_hi < 0:
        raise ConvergenceError(
            f"kernel quantile for p={p} not bracketed in [{lo:.6g}, {hi:.6g}]"
        )
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    root = optimize.brentq(excess, lo, hi, xtol=1e-13 * h, maxiter=500)
    residual = abs(excess(root))
    if residual > 1e-10:
        raise ConvergenceError(
            f"kernel quantile residual {residual:.3g} above 1e-10",
            estimate=root,
            error_bound=residual,
        )
    return float(root)


def kde_quantile_function(s: SampleLike, h: float) -> Callable[[float], float]:
    values = _sorted_values(s).copy()
    return lambda p: kde_quantile(values, p, h)


def _pair_counts(values: np.ndarray, nbins: int = PAIR_COUNT_BINS) -> Tuple[float, np.ndarray]:
    """Bin width and pair counts by bin lag (lag 0 counts pairs within a bin)"""
    xmin, xmax = values.min(), values.max()
    width = (xmax - xmin) * 1.01 / nbins
    if not width > 0:
        raise DegenerateSampleError("all sample values are identical")
    index = np.floor((values - xmin) / width).astype(int)
    counts = np.bincount(index, minlength=nbins).astype(float)
    lags = np.correlate(counts, counts, mode="full")[nbins - 1 :].copy()
    lags[0] = 0.5 * (np.sum(counts * counts) - values.size)
    return width, lags


def _check_bandwidth_sample(values: np.ndarray):
    if values.size < MIN_BANDWIDTH_SAMPLE:
        raise DomainError(
            f"bandwidth selection needs at least {MIN_BANDWIDTH_SAMPLE} values; "
            f"got {values.size}"
        )


def _lag_deltas(width: float, lags: np.ndarray, h: float):
    delta = (np.arange(lags.size) * width / h) ** 2
    keep = delta < 1000.0
    return delta[keep], lags[keep]


def _bcv_score(h: float, width: float, lags: np.ndarray, m: int) -> float:
    delta, cnt = _lag_deltas(width, lags, h)
    total = np.sum(np.exp(-delta / 4.0) * (delta * delta - 12.0 * delta + 12.0) * cnt)
    return (1.0 + total / (32.0 * m)) / (2.0 * m * h * math.sqrt(math.pi))


def bandwidth_bcv(s: SampleLike) -> float:
    """
    Biased cross-validation bandwidth for the Gaussian kernel.

    The score is scanned on a log grid over [sd/m, 5 sd m^(-1/5)]; the first
    interior local minimum is refined with bounded Brent. The score decays
    to zero for very large h, so the global minimum is never the answer.
    """
    values = _sorted_values(s)
    _check_bandwidth_sample(values)
    sd = float(np.std(values, ddof=1))
    if not sd > 0:
        raise DegenerateSampleError("BCV score is flat for a constant sample")
    m = values.size
    width, lags = _pair_counts(values / sd)

    def score(t):
        return _bcv_score(t, width, lags, m)

    grid = np.geomspace(1.0 / m, 5.0 * m ** (-0.2), 200)
    scores = np.array([score(t) for t in grid])
    interior = np.flatnonzero(
        (scores[1:-1] < scores[:-2]) & (scores[1:-1] <= scores[2:])
    )
    if interior.size:
        i = interior[0] + 1
        res = optimize.minimize_scalar(
            score, bounds=(grid[i - 1], grid[i + 1]), method="bounded",
            options={"xatol": 1e-9},
        )
        t = float(res.x)
    else:
        # no local minimum: fall back to the oversmoothing bound
        t = 1.144 * m ** (-0.2)
        logger.warning("BCV score has no interior minimum; using oversmoothed bandwidth")
    logger.debug("BCV bandwidth %.6g (m=%d)", t * sd, m)
    return t * sd


def _phi4(h: float, width: float, lags: np.ndarray, m: int) -> float:
    delta, cnt = _lag_deltas(width, lags, h)
    total = np.sum(np.exp(-delta / 2.0) * (delta * delta - 6.0 * delta + 3.0) * cnt)
    total = 2.0 * total + 3.0 * m
    return total / (m * (m - 1) * h**5 * SQRT_2PI)


def _phi6(h: float, width: float, lags: np.ndarray, m: int) -> float:
    delta, cnt = _lag_deltas(width, lags, h)
    total = np.sum(
        np.exp(-delta / 2.0)
        * (delta**3 - 15.0 * delta**2 + 45.0 * delta - 15.0)
        * cnt
    )
    total = 2.0 * total - 15.0 * m
    return total / (m * (m - 1) * h**7 * SQRT_2PI)


def bandwidth_sj(s: SampleLike, max_tries: int = 100) -> float:
    """
    Sheather-Jones solve-the-equation plug-in bandwidth (Gaussian kernel).

    Raises:
        DegenerateSampleError: zero scale estimate
        ConvergenceError: the equation could not be bracketed within
            max_tries widenings, or the pilot estimates are unusable
    """
    values = _sorted_values(s)
    _check_bandwidth_sample(values)
    m = values.size
    sd = float(np.std(values, ddof=1))
    iqr = float(np.subtract(*np.percentile(values, [75, 25])))
    scale = min(sd, iqr / 1.349) if iqr > 0 else sd
    if not scale > 0:
        raise DegenerateSampleError("zero scale estimate")
    width, lags = _pair_counts(values / scale)

    a = 1.24 * m ** (-1.0 / 7.0)
    b = 1.23 * m ** (-1.0 / 9.0)
    c1 = 1.0 / (2.0 * math.sqrt(math.pi) * m)
    td = -_phi6(b, width, lags, m)
    if not (math.isfinite(td) and td > 0):
        raise ConvergenceError("sample is too sparse for the SJ pilot estimate")
    alpha2 = 1.357 * (_phi4(a, width, lags, m) / td) ** (1.0 / 7.0)
    if not math.isfinite(alpha2):
        raise ConvergenceError("SJ pilot bandwidth is not finite")

    def equation(t):
        sdh = _phi4(alpha2 * t ** (5.0 / 7.0), width, lags, m)
        if not sdh > 0:
            return -t
        return (c1 / sdh) ** 0.2 - t

    hmax = 1.144 * m ** (-0.2)
    lower, upper = 0.1 * hmax, hmax
    for attempt in range(max_tries):
        if equation(lower) * equation(upper) <= 0:
            break
        if attempt % 2 == 0:
            upper *= 1.2
        else:
            lower /= 1.2
    else:
        raise ConvergenceError(f"SJ equation not bracketed after {max_tries} steps")
    t = optimize.brentq(equation, lower, upper, xtol=1e-12, maxiter=100)
    logger.debug("SJ bandwidth %.6g (m=%d)", t * scale, m)
    return t * scale


# Bernstein-Durrmeyer polynomial estimator


@dataclass(frozen=True)
class BDConfig:
    """Degree (None = AUTO) and support of the Bernstein-Durrmeyer estimator"""

    degree: Optional[int] = None
    support_lo: Optional[float] = None
    support_hi: Optional[float] = None
    mode_budget: int = 3
    tolerance: Optional[float] = None
    grid_size: int = 512

    def __post_init__(self):
        if self.degree is not None and self.degree < 0:
            raise DomainError(f"degree must be >= 0; got {self.degree}")
        if (
            self.support_lo is not None
            and self.support_hi is not None
            and not self.support_lo < self.support_hi
        ):
            raise DomainError("support_lo must be < support_hi")
        if self.mode_budget < 1:
            raise DomainError("mode_budget must be >= 1")

    def support_for(self, values: np.ndarray) -> Tuple[float, float]:
        lo_v, hi_v = float(values[0]), float(values[-1])
        spread = hi_v - lo_v
        pad = 0.05 * spread if spread > 0 else 0.05 * max(abs(lo_v), 1.0)
        lo = self.support_lo if self.support_lo is not None else lo_v - pad
        hi = self.support_hi if self.support_hi is not None else hi_v + pad
        if not lo < hi:
            raise DomainError(f"empty support [{lo}, {hi}]")
        for v in (lo_v, hi_v):
            if not lo <= v <= hi:
                raise DomainError(f"value {v:g} lies outside the support [{lo:g}, {hi:g}]")
        return lo, hi


def _rescaled(s: SampleLike, cfg: BDConfig):
    values = _sorted_values(s)
    lo, hi = cfg.support_for(values)
    return (values - lo) / (hi - lo), lo, hi


def _quantile_weights(y: np.ndarray, degree: int) -> np.ndarray:
    """(N+1) a_i: the step quantile function integrated against each basis polynomial"""
    m = y.size
    i = np.arange(degree + 1)[:, None]
    edges = np.arange(m + 1) / m
    incomplete = special.betainc(i + 1, degree - i + 1, edges[None, :])
    return np.diff(incomplete, axis=1) @ y


def _cdf_weights(y: np.ndarray, degree: int) -> np.ndarray:
    """Durrmeyer weights of the empirical distribution function"""
    i = np.arange(degree + 1)[:, None]
    return (1.0 - special.betainc(i + 1, degree - i + 1, y[None, :])).mean(axis=1)


def _bernstein(weights: np.ndarray, x) -> np.ndarray:
    degree = weights.size - 1
    x = np.asarray(x, dtype=float)
    basis = stats.binom.pmf(np.arange(degree + 1), degree, x[..., None])
    return basis @ weights


def _bernstein_derivative(weights: np.ndarray, x) -> np.ndarray:
    degree = weights.size - 1
    if degree == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    return degree * _bernstein(np.diff(weights), x)


def _count_modes(density: np.ndarray) -> int:
    slope = np.sign(np.diff(density))
    slope = slope[slope != 0]
    if slope.size == 0:
        return 1
    peaks = int(np.sum((slope[:-1] > 0) & (slope[1:] < 0)))
    peaks += int(slope[0] < 0) + int(slope[-1] > 0)
    return max(peaks, 1)


def selection_tolerance(m: int) -> float:
    """1/R_m with R_m = 2 sqrt(m) / sqrt(2 log log m)"""
    if m < 3:
        # log log m <= 0: no degree can be certified
        return 0.0
    r_m = 2.0 * math.sqrt(m) / math.sqrt(2.0 * math.log(math.log(m)))
    return 1.0 / r_m


@dataclass(frozen=True)
class DegreeSelection:
    degree: int
    certified: bool
    sup_distance: float
    tolerance: float
    modes: int


def bd_select_degree(s: SampleLike, cfg: BDConfig = BDConfig()) -> DegreeSelection:
    """
    Smallest degree whose induced density stays within the mode budget and
    whose distribution function inverts the quantile estimate to within 1/R_m.

    When no degree qualifies, the degree with the smallest sup distance is
    returned with certified=False.
    """
    y, _, _ = _rescaled(s, cfg)
    m = y.size
    tol = cfg.tolerance if cfg.tolerance is not None else selection_tolerance(m)
    grid = (np.arange(cfg.grid_size) + 0.5) / cfg.grid_size
    best = None
    for degree in range(1, max(1, math.ceil(m / 2)) + 1):
        q_weights = _quantile_weights(y, degree)
        f_weights = _cdf_weights(y, degree)
        q = np.clip(_bernstein(q_weights, grid), 0.0, 1.0)
        distance = float(np.max(np.abs(_bernstein(f_weights, q) - grid)))
        modes = _count_modes(_bernstein_derivative(f_weights, grid))
        if best is None or distance < best.sup_distance:
            best = DegreeSelection(degree, False, distance, tol, modes)
        if modes <= cfg.mode_budget and distance <= tol:
            logger.debug("BD degree %d certified (distance %.4g)", degree, distance)
            return DegreeSelection(degree, True, distance, tol, modes)
    logger.warning(
        "no BD degree met tolerance %.4g; using degree %d (distance %.4g)",
        tol, best.degree, best.sup_distance,
    )
    return best


def bd_quantile_function(
    s: SampleLike, cfg: BDConfig = BDConfig()
) -> Tuple[Callable[[float], float], int]:
    """Quantile function of the BD estimator and the degree it uses"""
    y, lo, hi = _rescaled(s, cfg)
    degree = cfg.degree if cfg.degree is not None else bd_select_degree(s, cfg).degree
    weights = _quantile_weights(y, degree)

    def quantile(p: float) -> float:
        _check_probability(p)
        return float(lo + (hi - lo) * _bernstein(weights, p))

    return quantile, degree


def bd_quantile(s: SampleLike, p: float, cfg: BDConfig = BDConfig()) -> float:
    """Degree-N Bernstein-Durrmeyer smoothing of the sample quantile function"""
    _check_probability(p)
    quantile, _ = bd_quantile_function(s, cfg)
    return quantile(p)


def build_estimator(
    s: Sample,
    method: Method,
    bandwidth: Optional[float] = None,
    bd: BDConfig = BDConfig(),
) -> StandardizedQuantileEstimator:
    """Raw quantile function for method, standardized with the sample moments"""
    method = Method(method)
    moments = SampleMoments.from_sample(s)
    details = {}
    if method is Method.EMPIRICAL:
        values = s.sorted_view
        raw = lambda p: empirical_quantile(values, p)  # noqa: E731
    elif method in (Method.KDE_BCV, Method.KDE_SJ):
        if bandwidth is None:
            selector = bandwidth_bcv if method is Method.KDE_BCV else bandwidth_sj
            bandwidth = selector(s)
        raw = kde_quantile_function(s, bandwidth)
        details["bandwidth"] = bandwidth
    else:
        if bd.degree is None:
            selection = bd_select_degree(s, bd)
            details["certified"] = selection.certified
            bd = BDConfig(
                selection.degree, bd.support_lo, bd.support_hi,
                bd.mode_budget, bd.tolerance, bd.grid_size,
            )
        raw, degree = bd_quantile_function(s, bd)
        details["degree"] = degree
    return standardize(raw, moments, method, details)
