"""
Run configuration for the command line

A flat key = value file (one key per line, # comments) or the JSON document
written by `plan --format json`. Command-line overrides win over the file.
Unknown keys are rejected and every value is re-validated by building the
module dataclasses.
"""

import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union, get_args, get_origin, get_type_hints

from errors import ConfigError, DataFileError, InputError
from numerics import QuadratureConfig
from oc import DependenceKind, DependenceSpec, QualitySpec, SamplingPlan
from plans import SolverConfig
from quantile import BDConfig, Method
from sim import ScaleInterpretation, standard_model

logger = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    # quality specification
    aql: float = 0.02
    rql: float = 0.05
    alpha: float = 0.1
    alpha1: float = 0.03
    beta: Optional[float] = None
    symmetric: bool = True
    # estimator
    method: str = Method.KDE_SJ.value
    bandwidth: Optional[float] = None
    bd_degree: Optional[int] = None
    support_lo: Optional[float] = None
    support_hi: Optional[float] = None
    # dependence
    dep: str = DependenceKind.INDEPENDENT.value
    rho: Optional[float] = None
    lam: Optional[float] = None
    batch_b: int = 1
    sigma_b2: float = 0.0
    sigma_eps2: float = 1.0
    rho_max: float = 0.99
    d: float = 1.0
    # stage-2 solver
    epsilon: float = 1e-8
    grid_n_max: int = 200
    grid_c_max: float = 60.0
    refine_max_iter: int = 200
    enforce_lambda: bool = False
    # quadrature
    rel_tol: Optional[float] = None
    abs_tol: float = 1e-12
    truncation_radius: float = 9.0
    max_subdivisions: int = 200
    # simulation
    model: int = 1
    m: int = 250
    reps: int = 1000
    seed: Optional[int] = None
    scale_interp: str = ScaleInterpretation.VARIANCE.value
    workers: Optional[int] = None
    # explicit plans
    n1: Optional[int] = None
    c1: Optional[float] = None
    n2: Optional[int] = None
    c2: Optional[float] = None

    def __post_init__(self):
        try:
            Method(self.method)
            DependenceKind(self.dep)
            ScaleInterpretation(self.scale_interp)
        except ValueError as e:
            raise ConfigError(str(e))

    @classmethod
    def keys(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_mapping(cls, mapping: Dict[str, Any], base: "RunConfig" = None) -> "RunConfig":
        """Apply mapping (strings or typed values) on top of base"""
        hints = get_type_hints(cls)
        values = {}
        for raw_key, raw_value in mapping.items():
            key = str(raw_key).strip().replace("-", "_")
            if key == "lambda":
                key = "lam"
            if key not in hints:
                raise ConfigError(f"unknown configuration key {raw_key!r}")
            values[key] = _convert(key, raw_value, hints[key])
        return replace(base or cls(), **values)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        stripped = text.lstrip()
        if stripped.startswith("{"):
            try:
                document = json.loads(stripped)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{source}: invalid JSON ({e})")
            return cls.from_mapping(document.get("config", document))
        mapping = {}
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{number}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            mapping[key] = value
        return cls.from_mapping(mapping)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise DataFileError(path, f"cannot read file ({e.strerror})")
        return cls.from_text(text, str(path))

    def with_overrides(self, **overrides) -> "RunConfig":
        """Overrides that are None are left out"""
        return RunConfig.from_mapping(
            {k: v for k, v in overrides.items() if v is not None}, base=self
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    # builders

    def quality_spec(self) -> QualitySpec:
        return QualitySpec.from_risks(
            self.aql, self.rql, self.alpha, self.alpha1, self.beta, self.symmetric
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            self.epsilon, self.grid_n_max, self.grid_c_max,
            self.refine_max_iter, enforce_lambda=self.enforce_lambda,
        )

    def quad_config(self) -> QuadratureConfig:
        explicit = {
            "abs_tol": self.abs_tol,
            "truncation_radius": self.truncation_radius,
            "max_subdivisions": self.max_subdivisions,
        }
        if self.rel_tol is not None:
            explicit["rel_tol"] = self.rel_tol
        return QuadratureConfig.from_env(**explicit)

    def bd_config(self) -> BDConfig:
        return BDConfig(self.bd_degree, self.support_lo, self.support_hi)

    @property
    def method_tag(self) -> Method:
        return Method(self.method)

    @property
    def dependence_kind(self) -> DependenceKind:
        return DependenceKind(self.dep)

    def dependence(self, n1: int = None, n2: int = None) -> DependenceSpec:
        """Dependence spec; batch designs need the stage sizes for the batch counts"""
        kind = self.dependence_kind
        if kind is DependenceKind.INDEPENDENT:
            return DependenceSpec.independent()
        if kind is DependenceKind.PANEL:
            if self.rho is None:
                raise ConfigError("panel dependence needs rho (or a paired sample)")
            return DependenceSpec.panel(self.rho, self.lam, self.rho_max)
        if n1 is None or n2 is None:
            raise ConfigError("batch dependence needs both stage sizes")
        if n1 % self.batch_b or n2 % self.batch_b:
            raise InputError(
                f"stage sizes {n1}, {n2} are not multiples of the batch size {self.batch_b}"
            )
        return DependenceSpec.spatial_batch(
            self.batch_b, n1 // self.batch_b, n2 // self.batch_b,
            self.sigma_b2, self.sigma_eps2, self.rho_max,
        )

    def explicit_plans(self) -> Optional[Tuple[SamplingPlan, SamplingPlan]]:
        given = [self.n1, self.c1, self.n2, self.c2]
        if all(v is None for v in given):
            return None
        if any(v is None for v in given):
            raise ConfigError("explicit plans need all of n1, c1, n2, c2")
        return SamplingPlan(self.n1, self.c1), SamplingPlan(self.n2, self.c2)

    def sim_model(self):
        return standard_model(self.model, ScaleInterpretation(self.scale_interp), d=self.d)


def _convert(key: str, value: Any, hint) -> Any:
    target = hint
    optional = False
    if get_origin(hint) is Union:
        args = [a for a in get_args(hint) if a is not type(None)]
        target, optional = args[0], True
    if isinstance(value, str):
        text = value.strip()
        if text.lower() in ("", "none", "null"):
            if optional:
                return None
            raise ConfigError(f"{key} needs a value")
        value = text
    elif value is None:
        if optional:
            return None
        raise ConfigError(f"{key} needs a value")
    try:
        if target is bool:
            if isinstance(value, bool):
                return value
            lowered = str(value).lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(value)
        if target is int:
            if isinstance(value, int) or (isinstance(value, str) and value.lstrip("+-").isdigit()):
                return int(value)
            number = float(value)
            if not number.is_integer():
                raise ValueError(value)
            return int(number)
        if target is float:
            return float(value)
        return str(value.value if hasattr(value, "value") else value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {value!r} as {target.__name__}")
