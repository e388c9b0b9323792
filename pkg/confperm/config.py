"""Run configuration: defaults < environment < config file < command-line flags."""

import json
import logging
import os
from pathlib import Path
from typing import Any, Literal, Mapping

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .data import Stratify, TableSchema, Task
from .errors import ConfigError
from .learners import LearnerSpec

logger = logging.getLogger(__name__)

ENV_PREFIX = "CONFPERM_"
# Environment variables mapped onto config keys.
ENV_KEYS = {"THREADS": "threads", "SEED": "seed", "OUT": "out"}


class GenerateConfig(BaseModel):
    """Keys under ``generate.*`` for ``confperm generate``."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["classification", "regression", "correlation", "design"] = "classification"
    n: int = Field(600, ge=4)
    correlation: float = Field(0.8, ge=-1.0, le=1.0, description="Cor(Y, C) of a symmetric joint.")
    beta: float = 1.0
    theta: float = 1.0
    rho: float = Field(0.5, gt=-1.0, lt=1.0)
    p: int = Field(10, ge=1)
    error: Literal["gaussian", "exponential"] = "gaussian"
    c_prob: float = Field(0.5, gt=0.0, lt=1.0)
    effect_cy: float = 1.0
    bernoulli_p: float = Field(0.5, gt=0.0, lt=1.0)
    beta_xc: float = 1.0
    beta_yc: float = 1.0
    beta_xy: float = 0.0
    experiment: int = Field(1, ge=1, le=4)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # Input table
    data: str | None = None
    sep: str = ","
    feature_cols: list[str] = Field(default_factory=list)
    response_col: str | None = None
    confounder_cols: list[str] = Field(default_factory=list)
    id_col: str | None = None
    task: Task = "classification"
    bins: dict[str, int | list[float]] = Field(default_factory=dict)

    # Inference
    metric: Literal["auc", "accuracy", "mse", "mae", "pearson", "ccc"] = "auc"
    b: int | None = Field(None, ge=1, description="Permutations; defaults to the test-set size.")
    b_s: int | None = Field(None, ge=20, description="Outer draws of the exact confounding test; off when unset.")
    seed: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)
    test_fraction: float = Field(0.5, gt=0.0, lt=1.0)
    stratify: Stratify = "joint"
    correction: Literal["gaussian", "empirical", "analytic_auc"] = "gaussian"
    reference: Literal["standard", "analytic_auc"] = "standard"
    target_joint: str | None = None
    out: str = "confperm-out"
    learner: LearnerSpec = LearnerSpec()

    # Partial association
    x_col: str | None = None
    y_col: str | None = None
    c_col: str | None = None
    mode: Literal["closed_form", "enumeration", "monte_carlo", "all"] = "all"

    # Simulation studies
    study: Literal["experiments", "correlation", "asymptotics", "baseline"] = "experiments"
    experiments: list[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    n_datasets: int = Field(200, ge=10)
    scale_factor: float = Field(1.0, gt=0.0, le=1.0)
    alpha_grid: list[float] | None = None
    n_sweeps: int = Field(200, ge=0)
    full_scale: bool = False
    test_sizes: list[int] = Field(default_factory=lambda: [15, 30, 100])
    scenario_n: int = Field(10_000, ge=100)
    match_development: bool = False

    generate: GenerateConfig = GenerateConfig()

    @field_validator("feature_cols", "confounder_cols", mode="before")
    @classmethod
    def _split_commas(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [v.strip() for v in value.split(",") if v.strip()]
        return value

    @field_validator("experiments", "test_sizes", mode="before")
    @classmethod
    def _split_ints(cls, value: Any) -> Any:
        if isinstance(value, (int, str)) and not isinstance(value, bool):
            return [int(v) for v in str(value).split(",") if v.strip()]
        return value

    def table_schema(self) -> TableSchema:
        if not self.data:
            raise ConfigError("No input table given", field="data")
        if not self.response_col:
            raise ConfigError("response_col is required", field="response_col")
        try:
            return TableSchema(
                feature_cols=self.feature_cols,
                response_col=self.response_col,
                confounder_cols=self.confounder_cols,
                task=self.task,
                id_col=self.id_col,
                bins=self.bins,
                sep=self.sep,
            )
        except ValidationError as e:
            raise config_error(e) from e


def config_error(error: ValidationError) -> ConfigError:
    first = error.errors()[0]
    field = ".".join(str(part) for part in first.get("loc", ()))
    return ConfigError(f"Invalid configuration: {field}: {first.get('msg')}", field=field or None)


def parse_value(raw: str) -> Any:
    """JSON literal when possible, otherwise the stripped string."""
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "'\"":
            return raw[1:-1]
        return raw


def set_dotted(target: dict, key: str, value: Any) -> None:
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"Empty config key in {key!r}")
    node = target
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Key {key!r} nests under a scalar", field=key)
        node = child
    node[parts[-1]] = value


def merge(base: dict, update: Mapping) -> dict:
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            merge(base[key], value)
        else:
            base[key] = value
    return base


def parse_config_text(text: str) -> dict:
    """``key = value`` lines with dotted keys, or a JSON object."""
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config JSON is malformed: {e}", field="config") from e
        if not isinstance(data, dict):
            raise ConfigError("Config JSON must be an object", field="config")
        return data

    data: dict = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split(" #", 1)[0].strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"Config line {number} is not 'key = value': {line!r}", field="config")
        key, raw = line.split("=", 1)
        set_dotted(data, key, parse_value(raw))
    return data


def load_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}", field="config") from e
    return parse_config_text(text)


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}", field="set")
    key, raw = item.split("=", 1)
    return key.strip(), parse_value(raw)


def env_values(environ: Mapping[str, str]) -> dict:
    data: dict = {}
    for name, key in ENV_KEYS.items():
        raw = environ.get(ENV_PREFIX + name)
        if raw:
            data[key] = parse_value(raw)
    return data


def resolve_config(
    config_path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """Build the run configuration; later sources win."""
    data = env_values(os.environ if environ is None else environ)
    if config_path:
        merge(data, load_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is not None:
            set_dotted(data, key, value)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise config_error(e) from e
    logger.debug("Resolved config: %s", config.model_dump(mode="json"))
    return config
