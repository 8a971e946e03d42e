import hashlib
import json
import logging

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from phibayes.divergence import DivergenceSpec
from phibayes.errors import ConfigError, DomainError, PhiBayesError
from phibayes.estimators import ESCORT_MODES, LOSS_KINDS, LossSpec, default_escort_mode
from phibayes.families import FAMILIES, ParametricFamily, build_family
from phibayes.optimize import OptimizerConfig
from phibayes.posterior import PriorSpec
from phibayes.quadrature import QuadratureConfig
from phibayes.sampler import SamplerConfig

logger = logging.getLogger(__name__)

STUDY_KINDS = ("SingleFit", "DualitySanity", "MonteCarloNormality", "RobustnessSweep", "SequentialUpdate")
MAX_CONTAMINATION = 0.5


@dataclass(frozen=True)
class ModelConfig:
    family: str
    theta0: tuple[float, ...]
    fixed: dict[str, float] = field(default_factory=dict)
    bounds: tuple[tuple[float, float], ...] | None = None

    def build(self) -> ParametricFamily:
        return build_family(self.family, self.fixed, list(self.bounds) if self.bounds else None)


@dataclass(frozen=True)
class EscortConfig:
    mode: str
    value: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ContaminantConfig:
    family: str
    theta: tuple[float, ...]
    fixed: dict[str, float] = field(default_factory=dict)

    def build(self) -> ParametricFamily:
        return build_family(self.family, self.fixed)


@dataclass(frozen=True)
class StudyConfig:
    kind: str = "SingleFit"
    replications: int = 1
    n: int = 100
    master_seed: int = 0
    output_dir: str = "runs"
    epsilon: float = 0.05
    losses: tuple[str, ...] = ("squared", "absolute")
    tau: float | None = None
    contamination: tuple[float, ...] = (0.0,)
    contaminant: ContaminantConfig | None = None
    split: float = 0.6
    duality_thetas: tuple[float, ...] = (0.25, 0.5, 1.0)
    data: str | None = None

    def loss_specs(self) -> list[LossSpec]:
        specs = [LossSpec(kind) for kind in self.losses if kind != "quantile"]
        if "quantile" in self.losses:
            specs.append(LossSpec("quantile", self.tau))
        return specs


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    divergences: tuple[DivergenceSpec, ...]
    prior: PriorSpec
    escort: EscortConfig
    mcmc: SamplerConfig = field(default_factory=SamplerConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    study: StudyConfig = field(default_factory=StudyConfig)

    @property
    def divergence(self) -> DivergenceSpec:
        return self.divergences[0]

    def family(self) -> ParametricFamily:
        return self.model.build()

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return config_hash(self)


def config_hash(cfg: ExperimentConfig) -> str:
    """
    First 16 hex digits of the SHA-256 of the canonical JSON dump of the configuration
    """
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _take(table: dict, section: str, known: tuple[str, ...]) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigError(f"[{section}]: unknown key(s) {', '.join(unknown)}")
    return table


def _floats(value: Any, key: str) -> tuple[float, ...]:
    values = np.atleast_1d(np.asarray(value, dtype=object))
    try:
        return tuple(float(v) for v in values.ravel())
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: expected numbers, got {value!r}") from e


def _pairs(value: Any, key: str) -> tuple[tuple[float, float], ...]:
    try:
        pairs = tuple((float(lo), float(hi)) for lo, hi in value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: expected a list of [low, high] pairs, got {value!r}") from e
    return pairs


def _block(section: str, cls: type, table: dict, convert: dict | None = None) -> Any:
    names = tuple(cls.__dataclass_fields__)
    table = dict(_take(table, section, names))
    for key, fn in (convert or {}).items():
        if key in table:
            table[key] = fn(table[key], f"{section}.{key}")
    try:
        return cls(**table)
    except PhiBayesError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}]: {e}") from e


def _model(table: dict) -> ModelConfig:
    table = _take(table, "model", ("family", "fixed", "theta0", "bounds"))
    for key in ("family", "theta0"):
        if key not in table:
            raise ConfigError(f"model.{key} is required")
    if table["family"] not in FAMILIES:
        raise ConfigError(f"model.family: {table['family']!r} is not one of {tuple(FAMILIES)}")
    return ModelConfig(
        family=table["family"],
        theta0=_floats(table["theta0"], "model.theta0"),
        fixed={key: float(value) for key, value in table.get("fixed", {}).items()},
        bounds=_pairs(table["bounds"], "model.bounds") if "bounds" in table else None,
    )


def _divergences(table: dict) -> tuple[DivergenceSpec, ...]:
    table = _take(table, "divergence", ("gamma",))
    value = table.get("gamma", 0.0)
    values = value if isinstance(value, list) else [value]
    if not values:
        raise ConfigError("divergence.gamma must not be empty")
    return tuple(DivergenceSpec.from_config(v) for v in values)


def _prior(table: dict | None, family: ParametricFamily) -> PriorSpec:
    if not table:
        return PriorSpec.uniform_box(family.bounds)
    table = _take(table, "prior", ("kind", "mean", "sd", "bounds"))
    kind = table.get("kind", "normal")
    if kind == "normal":
        return PriorSpec.normal(_floats(table.get("mean", ()), "prior.mean"), _floats(table.get("sd", ()), "prior.sd"))
    if kind == "uniform-box":
        return PriorSpec.uniform_box(_pairs(table["bounds"], "prior.bounds") if "bounds" in table else family.bounds)
    return PriorSpec(kind)


def _escort(table: dict | None, family: ParametricFamily) -> EscortConfig:
    table = _take(table or {}, "escort", ("mode", "value"))
    mode = table.get("mode", default_escort_mode(family))
    if mode not in ESCORT_MODES:
        raise ConfigError(f"escort.mode: {mode!r} is not one of {ESCORT_MODES}")
    value = _floats(table["value"], "escort.value") if "value" in table else None
    if mode == "fixed" and value is None:
        raise ConfigError("escort.value is required when escort.mode is fixed")
    return EscortConfig(mode=mode, value=value)


def _study(table: dict | None) -> StudyConfig:
    table = dict(table or {})
    contaminant = table.pop("contaminant", None)
    study = _block(
        "study",
        StudyConfig,
        table,
        {
            "contamination": _floats,
            "duality_thetas": _floats,
            "losses": lambda value, key: tuple(value) if isinstance(value, list) else (value,),
        },
    )
    if contaminant is not None:
        contaminant = _take(contaminant, "study.contaminant", ("family", "fixed", "theta"))
        if contaminant.get("family") not in FAMILIES:
            raise ConfigError(f"study.contaminant.family: {contaminant.get('family')!r} is not one of {tuple(FAMILIES)}")
        if "theta" not in contaminant:
            raise ConfigError("study.contaminant.theta is required")
        study = replace(
            study,
            contaminant=ContaminantConfig(
                family=contaminant["family"],
                theta=_floats(contaminant["theta"], "study.contaminant.theta"),
                fixed={key: float(value) for key, value in contaminant.get("fixed", {}).items()},
            ),
        )
    return study


def _validate(cfg: ExperimentConfig) -> None:
    family = cfg.family()
    theta0 = family.param(cfg.model.theta0)
    if not family.contains(theta0):
        raise ConfigError(f"model.theta0 = {list(cfg.model.theta0)} lies outside the parameter box")
    cfg.prior.check_positive_at(theta0)
    if cfg.prior.dim != family.param_dim:
        raise ConfigError(f"prior has {cfg.prior.dim} coordinates, {family.name} has {family.param_dim}")
    if cfg.escort.value is not None:
        family.param(cfg.escort.value)

    study = cfg.study
    if study.kind not in STUDY_KINDS:
        raise ConfigError(f"study.kind: {study.kind!r} is not one of {STUDY_KINDS}")
    if study.replications < 1:
        raise ConfigError(f"study.replications must be at least 1, got {study.replications}")
    if study.n < 1:
        raise ConfigError(f"study.n must be at least 1, got {study.n}")
    if not 0 <= study.master_seed < 2**64:
        raise ConfigError(f"study.master_seed must be a 64-bit unsigned integer, got {study.master_seed}")
    if not 0.0 < study.epsilon < 1.0:
        raise ConfigError(f"study.epsilon must lie in (0, 1), got {study.epsilon}")
    for kind in study.losses:
        if kind not in LOSS_KINDS:
            raise ConfigError(f"study.losses: {kind!r} is not one of {LOSS_KINDS}")
    study.loss_specs()
    for fraction in study.contamination:
        if not 0.0 <= fraction < MAX_CONTAMINATION:
            raise ConfigError(f"study.contamination: {fraction} is outside [0, {MAX_CONTAMINATION})")
    if any(fraction > 0 for fraction in study.contamination) and study.contaminant is None:
        raise ConfigError("study.contaminant is required when study.contamination is positive")
    if study.contaminant is not None:
        contaminant = study.contaminant.build()
        contaminant.param(study.contaminant.theta)
        if contaminant.support[0] < family.support[0] or contaminant.support[1] > family.support[1]:
            raise ConfigError(
                f"study.contaminant: {contaminant.name} support {contaminant.support} is not inside the "
                f"{family.name} support {family.support}"
            )
    if not 0.0 < study.split < 1.0:
        raise ConfigError(f"study.split must lie in (0, 1), got {study.split}")
    if study.data is not None and study.kind != "SingleFit":
        raise ConfigError("study.data is only read by SingleFit")
    if study.kind == "DualitySanity" and family.param_dim != 1:
        raise ConfigError("DualitySanity runs on one-parameter models")


def parse_config(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """
    Build a validated configuration from parsed TOML

    Args:
        raw: parsed TOML document
        overrides: command-line overrides, keys seed, gamma, output

    Returns:
        ExperimentConfig: validated configuration
    """
    _take(raw, "top level", ("model", "divergence", "prior", "escort", "mcmc", "quadrature", "optimizer", "study"))
    if "model" not in raw:
        raise ConfigError("[model] is required")
    overrides = {key: value for key, value in (overrides or {}).items() if value is not None}

    model = _model(raw["model"])
    family = model.build()
    divergences = _divergences(raw.get("divergence", {}))
    if "gamma" in overrides:
        divergences = (DivergenceSpec.from_config(overrides["gamma"]),)
    study = _study(raw.get("study"))
    if "seed" in overrides:
        study = replace(study, master_seed=int(overrides["seed"]))
    if "output" in overrides:
        study = replace(study, output_dir=str(overrides["output"]))

    cfg = ExperimentConfig(
        model=model,
        divergences=divergences,
        prior=_prior(raw.get("prior"), family),
        escort=_escort(raw.get("escort"), family),
        mcmc=_block("mcmc", SamplerConfig, raw.get("mcmc", {}), {"proposal_scale": _floats}),
        quadrature=_block("quadrature", QuadratureConfig, raw.get("quadrature", {})),
        optimizer=_block("optimizer", OptimizerConfig, raw.get("optimizer", {})),
        study=study,
    )
    try:
        _validate(cfg)
    except DomainError as e:
        raise ConfigError(str(e)) from e
    logger.debug(f"Configuration {cfg.config_hash()} is valid")
    return cfg


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """
    Read and validate a TOML configuration file

    Args:
        path: path to the file
        overrides: command-line overrides, keys seed, gamma, output

    Returns:
        ExperimentConfig: validated configuration
    """
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Configuration {path} is not valid TOML: {e}") from e
    return parse_config(raw, overrides)
