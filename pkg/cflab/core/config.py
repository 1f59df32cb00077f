import logging
import math
import os
from pathlib import Path
from typing import Literal, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from cflab.core.errors import ConfigError

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "CFLAB_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"

LossKind = Literal["BCE", "MCL", "UIB", "BPR", "CML", "SML", "CCL", "SSM", "BC", "DirectAU", "MAWU"]
MarginMode = Literal["zero", "inverse_popularity", "uib_fashion", "bc_fashion", "learned"]

LOSS_KINDS = ("BCE", "MCL", "UIB", "BPR", "CML", "SML", "CCL", "SSM", "BC", "DirectAU", "MAWU")
MARGIN_MODES = ("zero", "inverse_popularity", "uib_fashion", "bc_fashion", "learned")
EVAL_METRICS = tuple(f"{m}@{n}" for m in ("recall", "ndcg") for n in (10, 20, 50))
WEIGHT_DECAY_GRID = (0.0, 1e-2, 1e-4, 1e-6, 1e-8)
MARGIN_INIT_CEILING = math.pi / 4

_KIND_ALIASES = {k.lower(): k for k in LOSS_KINDS}
_KIND_ALIASES["dau"] = "DirectAU"


def load_config(path: str = "config.yaml") -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ValueError(f"Error parsing config file: {exc}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"Config file {path} must hold a mapping, got {type(data).__name__}")
    return data


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: LossKind = "MAWU"
    tau: float = Field(0.1, gt=0)
    margin_const: float = 0.5
    ccl_weight: float = 1.0
    mcl_params: tuple[float, float, float, float] = (1.0, 1.0, 0.0, 0.0)
    uib_alpha: float = 1.0
    gamma: float = Field(1.0, ge=0)
    gamma1: float = Field(0.5, ge=0)
    gamma2: float = Field(0.5, ge=0)
    sml_lambda: float = 0.01
    margin_mode: MarginMode = "learned"
    # effective per-side margin of learned margin tables at init (radians for MAWU/BC)
    margin_init: float = Field(0.05, gt=0, le=MARGIN_INIT_CEILING)

    @field_validator("kind", mode="before")
    @classmethod
    def _canonical_kind(cls, value):
        if isinstance(value, str):
            return _KIND_ALIASES.get(value.lower(), value)
        return value

    @field_validator("mcl_params")
    @classmethod
    def _positive_temperatures(cls, value):
        alpha, beta, _, _ = value
        if alpha <= 0 or beta <= 0:
            raise ValueError(f"MCL alpha and beta must be > 0, got alpha={alpha}, beta={beta}")
        return value

    @model_validator(mode="after")
    def _cml_margin(self):
        if self.kind == "CML" and self.margin_const < 0:
            raise ValueError(f"CML margin must be >= 0, got {self.margin_const}")
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dim: int = Field(64, gt=0)
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(2048, gt=0)
    num_negatives: int = Field(30, gt=0)
    max_epochs: int = Field(1000, gt=0)
    patience: int = Field(10, ge=1)
    eval_metric: str = "ndcg@20"
    weight_decay: float = Field(0.0, ge=0)
    encoder: Literal["MF", "LightGCN"] = "MF"
    layers: int = Field(2, ge=0)
    loss: LossConfig = Field(default_factory=LossConfig)
    seed: int = 0
    negative_mode: Literal["auto", "uniform", "in_batch"] = "auto"
    adam_mode: Literal["lazy", "dense"] = "lazy"
    record_timing: bool = False
    progress: bool = True
    eval_batch_users: int = Field(1024, gt=0)

    @field_validator("eval_metric")
    @classmethod
    def _known_metric(cls, value: str):
        value = value.lower()
        if value not in EVAL_METRICS:
            raise ValueError(f"eval_metric must be one of {EVAL_METRICS}, got {value}")
        return value

    @field_validator("encoder", mode="before")
    @classmethod
    def _canonical_encoder(cls, value):
        if isinstance(value, str):
            return {"mf": "MF", "lightgcn": "LightGCN"}.get(value.lower(), value)
        return value

    @model_validator(mode="after")
    def _warn_off_grid(self):
        if not any(abs(self.weight_decay - wd) <= 1e-15 for wd in WEIGHT_DECAY_GRID):
            logger.warning(f"weight_decay={self.weight_decay} is outside the tuning grid {WEIGHT_DECAY_GRID}")
        return self


class DatasetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: Optional[str] = None
    synthetic: Optional[str] = None
    k_core: int = Field(10, ge=1)
    split_ratio: tuple[int, int, int] = (7, 1, 2)
    split_seed: int = 0

    @field_validator("path")
    @classmethod
    def _path_exists(cls, value):
        if value is not None and not os.path.exists(value):
            raise ValueError(f"dataset path does not exist: {value}")
        return value

    @field_validator("split_ratio")
    @classmethod
    def _positive_ratio(cls, value):
        if any(part < 0 for part in value) or sum(value) <= 0:
            raise ValueError(f"split_ratio must be nonnegative with a positive sum, got {value}")
        return value


class LoggingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    level: str = "INFO"
    use_colors: bool = True


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    output_dir: str = "default"
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    def train_config(self, seed: int) -> TrainConfig:
        """TrainConfig for one seed, carrying the experiment's loss section."""
        return self.train.model_copy(update={"loss": self.loss, "seed": seed})


_SECTIONS = {
    "dataset": DatasetConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "logging": LoggingConfig,
}


def _route_flat_keys(raw: dict) -> dict:
    """Move top-level keys of a flat document into the section declaring them."""
    routed: dict = {}
    for key, value in raw.items():
        if key in _SECTIONS or key in ("output_dir", "seeds"):
            if isinstance(value, dict) and key in _SECTIONS:
                routed.setdefault(key, {}).update(value)
            else:
                routed[key] = value
            continue
        for section, model in _SECTIONS.items():
            if key in model.model_fields and key != "loss":
                routed.setdefault(section, {})[key] = value
                break
        else:
            raise ConfigError(f"Unknown config key: {key}")
    return routed


def parse_override(pair: str) -> tuple[list[str], object]:
    if "=" not in pair:
        raise ConfigError(f"Override must look like section.key=value, got '{pair}'")
    key, _, text = pair.partition("=")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"Cannot parse override value '{text}': {exc}")
    return key.strip().split("."), value


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Apply dotted-key overrides ({"train.lr": 0.01}) on top of a raw config dict."""
    merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for dotted, value in overrides.items():
        if value is None:
            continue
        path = dotted.split(".") if isinstance(dotted, str) else list(dotted)
        node = merged
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Override path {dotted} crosses a non-section value")
        node[path[-1]] = value
    return merged


def build_experiment_config(raw: Optional[dict] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Validate a raw config document (sectioned or flat) plus flag overrides."""
    routed = _route_flat_keys(raw or {})
    routed = apply_overrides(routed, overrides or {})
    try:
        return ExperimentConfig.model_validate(routed)
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration:\n{exc}")


def output_root() -> Path:
    load_dotenv()
    return Path(os.getenv(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


def resolve_output_dir(config_value: Optional[str], flag_value: Optional[str] = None) -> Path:
    """Flags win; otherwise relative config paths live under the output root."""
    if flag_value:
        return Path(flag_value)
    path = Path(config_value or "default")
    if path.is_absolute():
        return path
    return output_root() / path
