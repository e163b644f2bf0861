"""
Configuration handling for fedbuff-validator.

Experiment files are YAML documents validated by the pydantic models below.
Values are taken with precedence: explicit arguments > environment variables
> config file.
"""

import logging
import math
import os
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, Union, get_args, get_origin

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from fedbuff_validator.exceptions import ConfigError

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV_VAR = "FEDBUFF_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "runs"
MAX_SEED = 2**64 - 1


class Family(str, Enum):
    """Synthetic objective families."""
    QUADRATIC_MIXTURE = "QuadraticMixture"
    LOGISTIC_NONCONVEX = "LogisticNonconvex"


class ArrivalMode(str, Enum):
    """How client arrivals at the server are generated."""
    EVENT_DRIVEN = "EventDriven"
    UNIFORM_ARRIVAL = "UniformArrival"


class DelayKind(str, Enum):
    DETERMINISTIC = "Deterministic"
    UNIFORM_INT = "UniformInt"
    GEOMETRIC = "Geometric"


class StalenessPolicy(str, Enum):
    """What to do when an update is staler than tau_max."""
    ENFORCE = "Enforce"
    OBSERVE = "Observe"


class Algorithm(str, Enum):
    FEDBUFF = "FedBuff"
    PURE_ASYNC = "PureAsync"
    FEDAVG_SYNC = "FedAvgSync"


class Schedule(str, Enum):
    """Stepsize schedule: explicit values, or derived from the convergence theorem."""
    AUTO = "auto"
    MANUAL = "manual"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_finite(values: Sequence[float], what: str) -> None:
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"{what} must contain only finite values")


class ProblemSpec(_Section):
    """Synthetic heterogeneous problem definition."""
    family: Family = Family.QUADRATIC_MIXTURE
    n: int = Field(ge=1)
    d: int = Field(ge=1)
    heterogeneity_shift: float = Field(default=1.0, ge=0)
    regularizer_weight: float = Field(default=0.1, ge=0)
    scale: float = Field(default=1.0, gt=0)
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    points_per_client: int = Field(default=8, ge=1)
    point_spread: float = Field(default=1.0, ge=0)
    centers: Optional[List[List[float]]] = None
    initial_model: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_shapes(self) -> "ProblemSpec":
        if self.centers is not None:
            if self.family != Family.QUADRATIC_MIXTURE:
                raise ValueError("explicit centers are only supported for QuadraticMixture")
            if len(self.centers) != self.n or any(len(c) != self.d for c in self.centers):
                raise ValueError(f"centers must be an n x d list ({self.n} x {self.d})")
            for center in self.centers:
                _check_finite(center, "centers")
        if self.initial_model is not None:
            if len(self.initial_model) != self.d:
                raise ValueError(f"initial_model must have length d={self.d}")
            _check_finite(self.initial_model, "initial_model")
        return self


class HyperParams(_Section):
    """Algorithm hyperparameters (local steps, stepsizes, buffer, batch)."""
    schedule: Schedule = Schedule.MANUAL
    Q: int = Field(default=1, ge=1)
    eta: Optional[float] = Field(default=None, gt=0)
    beta: Optional[float] = Field(default=None, gt=0)
    K: int = Field(default=1, ge=1)
    batch_size: int = Field(default=1, ge=1)
    full_batch: bool = False

    @model_validator(mode="after")
    def _check_schedule(self) -> "HyperParams":
        if self.schedule == Schedule.MANUAL and (self.eta is None or self.beta is None):
            raise ValueError("a manual schedule requires both eta and beta")
        return self

    @property
    def resolved(self) -> bool:
        return self.eta is not None and self.beta is not None

    def with_stepsizes(self, eta: float, beta: float) -> "HyperParams":
        """Return a copy carrying concrete stepsizes (the schedule label is kept)."""
        return self.model_copy(update={"eta": eta, "beta": beta})


class DelayModel(_Section):
    """Download/upload delay distribution, applied independently to each leg."""
    kind: DelayKind = DelayKind.DETERMINISTIC
    download: List[float] = Field(default_factory=lambda: [0.0])
    upload: List[float] = Field(default_factory=lambda: [0.0])
    lo: int = Field(default=0, ge=0)
    hi: int = Field(default=0, ge=0)
    p: float = Field(default=0.5, gt=0, le=1)
    cap: int = Field(default=0, ge=0)

    @field_validator("download", "upload")
    @classmethod
    def _check_constants(cls, values: List[float]) -> List[float]:
        if not values:
            raise ValueError("at least one delay constant is required")
        _check_finite(values, "delay constants")
        if any(v < 0 for v in values):
            raise ValueError("delay constants must be nonnegative")
        return values

    @model_validator(mode="after")
    def _check_range(self) -> "DelayModel":
        if self.kind == DelayKind.UNIFORM_INT and self.lo > self.hi:
            raise ValueError(f"lo ({self.lo}) must not exceed hi ({self.hi})")
        return self

    def constants_for(self, client_id: int) -> Tuple[float, float]:
        """Deterministic (download, upload) constants of a client.

        A single-entry list applies to every client.
        """
        down = self.download[client_id] if len(self.download) > 1 else self.download[0]
        up = self.upload[client_id] if len(self.upload) > 1 else self.upload[0]
        return down, up

    def leg_bounds(self) -> Tuple[float, float, float, float]:
        """Return (download_min, download_cap, upload_min, upload_cap)."""
        if self.kind == DelayKind.DETERMINISTIC:
            return min(self.download), max(self.download), min(self.upload), max(self.upload)
        if self.kind == DelayKind.UNIFORM_INT:
            return float(self.lo), float(self.hi), float(self.lo), float(self.hi)
        return 0.0, float(self.cap), 0.0, float(self.cap)


class SimConfig(_Section):
    """Simulation settings for the asynchronous schedulers."""
    mode: ArrivalMode = ArrivalMode.UNIFORM_ARRIVAL
    tau_max: int = Field(default=0, ge=0)
    delay_model: DelayModel = Field(default_factory=DelayModel)
    horizon_T: int = Field(default=16, ge=1)
    n: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    staleness_policy: StalenessPolicy = StalenessPolicy.ENFORCE
    event_log: bool = False

    @model_validator(mode="after")
    def _check_delay_lists(self) -> "SimConfig":
        if self.n is not None and self.delay_model.kind == DelayKind.DETERMINISTIC:
            for leg in (self.delay_model.download, self.delay_model.upload):
                if len(leg) not in (1, self.n):
                    raise ValueError(f"deterministic delays need 1 or n={self.n} constants per leg")
        return self


class SyncRoundConfig(_Section):
    """Synchronous FedAvg round settings."""
    clients_per_round: int = Field(ge=1)
    aggregation_weight: float = Field(gt=0)


class ExperimentConfig(_Section):
    """A declarative experiment: one algorithm over seeds x horizons."""
    name: str = "experiment"
    problem: ProblemSpec
    hyper: HyperParams
    sim: SimConfig = Field(default_factory=SimConfig)
    sync: Optional[SyncRoundConfig] = None
    algorithm: Algorithm = Algorithm.FEDBUFF
    seeds: List[int] = Field(default_factory=lambda: [0])
    horizons: List[int] = Field(default_factory=list)
    output_dir: Optional[str] = None
    probe_radius: float = Field(default=5.0, gt=0)
    probe_count: int = Field(default=100, ge=0)
    stderr_multiplier: float = Field(default=2.0, ge=0)

    @field_validator("seeds")
    @classmethod
    def _check_seeds(cls, seeds: List[int]) -> List[int]:
        if not seeds:
            raise ValueError("at least one seed is required")
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be distinct")
        if any(s < 0 or s > MAX_SEED for s in seeds):
            raise ValueError("seeds must be 64-bit unsigned integers")
        return seeds

    @field_validator("horizons")
    @classmethod
    def _check_horizons(cls, horizons: List[int]) -> List[int]:
        if any(h < 1 for h in horizons):
            raise ValueError("horizons must be >= 1")
        if len(set(horizons)) != len(horizons):
            raise ValueError("horizons must be distinct")
        return sorted(horizons)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if self.sim.n is not None and self.sim.n != self.problem.n:
            raise ValueError(f"sim.n ({self.sim.n}) must match problem.n ({self.problem.n})")
        delays = self.sim.delay_model
        if delays.kind == DelayKind.DETERMINISTIC:
            for leg in (delays.download, delays.upload):
                if len(leg) not in (1, self.problem.n):
                    raise ValueError(f"deterministic delays need 1 or n={self.problem.n} constants per leg")
        if self.sync is not None and self.sync.clients_per_round > self.problem.n:
            raise ValueError("sync.clients_per_round must not exceed problem.n")
        if self.hyper.K > self.problem.n:
            logger.warning(f"Buffer size K={self.hyper.K} exceeds the client count n={self.problem.n}")
        return self

    @property
    def horizon_grid(self) -> List[int]:
        return self.horizons or [self.sim.horizon_T]

    @property
    def sim_for_problem(self) -> SimConfig:
        """SimConfig with n filled in from the problem."""
        return self.sim.model_copy(update={"n": self.problem.n})

    @property
    def sync_round(self) -> SyncRoundConfig:
        """Synchronous round config; full participation with weight 1/n by default."""
        if self.sync is not None:
            return self.sync
        return SyncRoundConfig(clients_per_round=self.problem.n, aggregation_weight=1.0 / self.problem.n)


def _unwrap_model(annotation: Any) -> Optional[Type[BaseModel]]:
    """Return the pydantic model class behind an annotation, if any."""
    if isinstance(annotation, type) and issubclass(annotation, BaseModel):
        return annotation
    if get_origin(annotation) is Union:
        for arg in get_args(annotation):
            model = _unwrap_model(arg)
            if model is not None:
                return model
    return None


def invariant_name(model_cls: Type[BaseModel], loc: Sequence[Union[int, str]]) -> str:
    """Name the invariant behind a pydantic error location, e.g. ``HyperParams.K``."""
    current = model_cls
    for position, part in enumerate(loc):
        if not isinstance(part, str) or part not in current.model_fields:
            continue
        nested = _unwrap_model(current.model_fields[part].annotation)
        if nested is None or position == len(loc) - 1:
            if nested is not None:
                return nested.__name__
            return f"{current.__name__}.{part}"
        current = nested
    return current.__name__


def validate_section(model_cls: Type[BaseModel], data: Dict[str, Any]) -> Any:
    """Validate a mapping against a config model, raising ConfigError on failure.

    Args:
        model_cls: Pydantic model class to validate against
        data: Raw mapping

    Returns:
        Validated model instance
    """
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = tuple(first.get("loc", ()))
        where = ".".join(str(p) for p in loc) or model_cls.__name__
        raise ConfigError(
            title=invariant_name(model_cls, loc),
            detail=f"{where}: {first.get('msg', 'invalid value')}",
        )


def parse_override(override: str) -> Tuple[List[str], Any]:
    """Parse a ``dotted.key=value`` override; the value is read as YAML."""
    if "=" not in override:
        raise ConfigError("override", f"Expected KEY=VALUE, got '{override}'")
    key, raw = override.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError("override", f"Empty key in '{override}'")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError("override", f"Cannot parse value of '{key}': {e}")
    return key.split("."), value


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``--override`` entries to a raw config mapping (copy on write)."""
    result = _deep_copy(raw)
    for override in overrides:
        path, value = parse_override(override)
        node = result
        for part in path[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            elif not isinstance(child, dict):
                raise ConfigError("override", f"'{part}' is not a mapping in '{override}'")
            node = child
        node[path[-1]] = value
    return result


def _deep_copy(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _deep_copy(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_deep_copy(v) for v in value]
    return value


def load_config_file(config_file: str) -> Dict[str, Any]:
    """Load a raw mapping from a YAML config file.

    Args:
        config_file: Path to YAML configuration file

    Returns:
        Dictionary of configuration values
    """
    try:
        with open(config_file, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError("config file", f"Failed to load {config_file}: {e}")
    if not isinstance(data, dict):
        raise ConfigError("config file", f"{config_file} must contain a mapping at the top level")
    return data


def load_experiment_config(config_file: str, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Load, override and validate an experiment config file."""
    raw = apply_overrides(load_config_file(config_file), overrides)
    config = validate_section(ExperimentConfig, raw)
    logger.debug(f"Loaded experiment '{config.name}' from {config_file}")
    return config


def resolve_output_dir(cli_out: Optional[str], config: Optional[ExperimentConfig] = None) -> str:
    """Pick the output root: --out > FEDBUFF_OUTPUT_DIR > config file > default."""
    return (
        cli_out
        or os.environ.get(OUTPUT_DIR_ENV_VAR)
        or (config.output_dir if config is not None else None)
        or DEFAULT_OUTPUT_DIR
    )
