"""Configuration utilities for the goskill toolkit."""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from goskill.errors import ConfigError

ABLATION_PRESETS: Dict[str, Dict[str, bool]] = {
    "full": {},
    "no-rg": {"reached_goal": False},
    "no-vq": {"vq": False},
    "ae": {"action_encoded": True},
    "no-focal": {"focal": False},
    "no-resample": {"resample": False},
}

FULL_BUDGET = (30_000, 70_000, 70_000)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class EnvConfig(_Section):
    horizon: int = Field(100, ge=1)
    dt: float = Field(0.1, gt=0.0)
    damping: float = Field(0.9, gt=0.0, le=1.0)
    goal_radius: float = Field(0.1, gt=0.0)
    press_speed: float = Field(0.25, gt=0.0)
    progress_scale: float = 20.0
    waypoint_bonus: float = 30.0
    time_penalty: float = Field(0.1, ge=0.0)
    train_tasks: List[int] = Field(default_factory=lambda: list(range(8)))
    heldout_tasks: List[int] = Field(default_factory=lambda: [8, 9])


class DataConfig(_Section):
    preset: Literal["near-optimal", "sub-optimal"] = "near-optimal"
    quality_mix: Tuple[float, float, float] = (0.4, 0.3, 0.3)
    episodes_per_task: int = Field(60, ge=0)
    medium_noise: float = Field(0.3, ge=0.0)
    medium_truncation: float = Field(0.3, ge=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _fractions_sum_to_one(self) -> "DataConfig":
        if any(f < 0.0 for f in self.quality_mix) or abs(sum(self.quality_mix) - 1.0) > 1e-9:
            raise ValueError(f"quality_mix must be non-negative and sum to 1, got {self.quality_mix}")
        return self


class SkillConfig(_Section):
    horizon: int = Field(10, ge=1)
    codebook_size: int = Field(16, ge=1)
    latent_dim: int = Field(64, ge=1)
    encoder_hidden: List[int] = Field(default_factory=lambda: [128])
    commitment: float = Field(0.25, ge=0.0)
    dead_code_steps: int = Field(500, ge=1)
    churn_interval: int = Field(200, ge=1)
    churn_probe: int = Field(256, ge=1)


class NetworkConfig(_Section):
    n_layers: int = Field(4, ge=1)
    n_heads: int = Field(4, ge=1)
    width: int = Field(128, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "NetworkConfig":
        if self.width % self.n_heads:
            raise ValueError(f"width {self.width} is not divisible by n_heads {self.n_heads}")
        return self


class OptimConfig(_Section):
    lr: float = Field(3e-4, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    clip_norm: float = Field(1.0, ge=0.0)


class PolicyConfig(_Section):
    gamma: float = Field(2.0, ge=0.0)
    context_length: int = Field(20, ge=1)
    prompt_length: int = Field(10, ge=1)
    batch_per_task: int = Field(8, ge=1)
    return_scale: float = Field(0.01, gt=0.0)


class ScheduleConfig(_Section):
    extraction_iters: int = Field(1800, ge=0)
    enhancement_iters: int = Field(4200, ge=0)
    policy_iters: int = Field(4200, ge=0)
    batch_per_task: int = Field(8, ge=1)
    batch_per_class: int = Field(4, ge=1)
    parallel: bool = False
    log_interval: int = Field(100, ge=1)


class AblationConfig(_Section):
    reached_goal: bool = True
    vq: bool = True
    action_encoded: bool = False
    focal: bool = True
    resample: bool = True

    @property
    def label(self) -> str:
        for name, switches in ABLATION_PRESETS.items():
            if name != "full" and all(getattr(self, k) == v for k, v in switches.items()):
                return name
        return "full"


class EvaluationConfig(_Section):
    episodes: int = Field(20, ge=1)
    seeds: int = Field(3, ge=1)
    seed: int = 1000


class FinetuneConfig(_Section):
    tasks: List[int] = Field(default_factory=lambda: [8, 9])
    iterations: int = Field(500, ge=0)


class BaselineConfig(_Section):
    iterations: int = Field(6000, ge=0)
    batch_per_task: int = Field(8, ge=1)
    context_length: int = Field(20, ge=1)
    prompt_length: int = Field(10, ge=1)


class PathsConfig(_Section):
    run_root: str = "runs"
    dataset_dir: str = "data/near-optimal"


class RunConfig(_Section):
    """Every hyperparameter, ablation switch and seed governing a run."""

    seed: int = 0
    env: EnvConfig = Field(default_factory=EnvConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    skill: SkillConfig = Field(default_factory=SkillConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    finetune: FinetuneConfig = Field(default_factory=FinetuneConfig)
    baseline: BaselineConfig = Field(default_factory=BaselineConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    def flatten(self) -> Dict[str, Any]:
        return flatten_dict(self.model_dump(mode="json"))

    def to_key_value(self) -> str:
        return "".join(f"{key}={json.dumps(value)}\n" for key, value in sorted(self.flatten().items()))

    def with_overrides(self, assignments: Iterable[str]) -> "RunConfig":
        data = self.model_dump(mode="json")
        for assignment in assignments:
            key, value = parse_assignment(assignment)
            set_dotted(data, key, value)
        return build_run_config(data)

    def with_ablation(self, name: str) -> "RunConfig":
        if name not in ABLATION_PRESETS:
            raise ConfigError(f"unknown ablation '{name}', expected one of {sorted(ABLATION_PRESETS)}")
        data = self.model_dump(mode="json")
        data["ablation"] = AblationConfig(**ABLATION_PRESETS[name]).model_dump()
        return build_run_config(data)


# ----------------------------------------------------------------------
def flatten_dict(data: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_dict(value, prefix=f"{path}."))
        else:
            flat[path] = value
    return flat


def parse_assignment(assignment: str) -> Tuple[str, Any]:
    """Parse ``section.key=value``; the value is JSON when it parses as JSON."""
    if "=" not in assignment:
        raise ConfigError(f"override '{assignment}' is not of the form key=value")
    key, raw = assignment.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override '{assignment}' has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw.strip()
    return key, value


def set_dotted(data: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    current = data
    for part in parts[:-1]:
        if not isinstance(current.get(part), dict):
            raise ConfigError(f"unknown configuration section in '{key}'")
        current = current[part]
    current[parts[-1]] = value


def build_run_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_run_config(path: Path | str) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    with path.open("r", encoding="utf-8") as handle:
        return build_run_config(json.load(handle))


class Settings:
    """Loads and stores project configuration values."""

    def __init__(self, config_path: Optional[Path | str] = None):
        load_dotenv()
        self._config_path = Path(
            config_path or os.environ.get("GOSKILL_CONFIG", "config/settings.json")
        )
        self._data = self._load()

    def _load(self) -> Dict[str, Any]:
        if self._config_path.exists():
            with self._config_path.open("r", encoding="utf-8") as handle:
                return json.load(handle)
        # Persist default configuration for convenience
        defaults = RunConfig().model_dump(mode="json")
        try:
            self._config_path.parent.mkdir(parents=True, exist_ok=True)
            with self._config_path.open("w", encoding="utf-8") as handle:
                json.dump(defaults, handle, indent=2)
        except OSError:
            pass
        return copy.deepcopy(defaults)

    @property
    def path(self) -> Path:
        return self._config_path

    @property
    def run_config(self) -> RunConfig:
        config = build_run_config(self._data)
        run_root = os.environ.get("GOSKILL_RUN_ROOT")
        if run_root:
            config = config.with_overrides([f"paths.run_root={json.dumps(run_root)}"])
        return config

    @property
    def paths(self) -> PathsConfig:
        return self.run_config.paths

    @property
    def ablation(self) -> AblationConfig:
        return self.run_config.ablation

    def get(self, key: str, default: Any | None = None) -> Any:
        """Retrieve dotted configuration keys, e.g., `skill.horizon`."""
        parts = key.split(".")
        current: Any = self._data
        for part in parts:
            if isinstance(current, dict) and part in current:
                current = current[part]
            else:
                return default
        return current


__all__ = [
    "ABLATION_PRESETS",
    "FULL_BUDGET",
    "EnvConfig",
    "DataConfig",
    "SkillConfig",
    "NetworkConfig",
    "OptimConfig",
    "PolicyConfig",
    "ScheduleConfig",
    "AblationConfig",
    "EvaluationConfig",
    "FinetuneConfig",
    "BaselineConfig",
    "PathsConfig",
    "RunConfig",
    "Settings",
    "build_run_config",
    "load_run_config",
    "parse_assignment",
    "flatten_dict",
]
