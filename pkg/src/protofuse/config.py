"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from .data_model import MissingMode, MissingnessSpec
from .errors import ConfigError, LoadError
from .tasks import Task


class FillStrategy(str, Enum):
    SGI = "sgi"
    MEAN_FILL = "mean_fill"


@dataclass(frozen=True)
class TrainConfig:
    task: Task = Task.SURVIVAL
    seed: int = 0
    batch_size: int = 8
    learning_rate: float = 1e-4
    epochs: int = 40
    phase1_epochs: int = 15
    lambda_reg: float = 0.1
    lambda_cycle: float = 10.0
    # weight of the paired translation term; 0 leaves only cycle + adversarial
    lambda_paired: float = 10.0
    top_k: int = 3
    accumulation: int = 4
    # 0 means "length of phase 2 in optimizer steps"
    schedule_total_steps: int = 0
    missing_mode: str = ""
    missing_rate: float = 0.0
    fill_strategy: FillStrategy = FillStrategy.SGI
    multimodal: bool = True
    model_dim: int = 32
    n_iterations: int = 2
    max_train_missing_rate: float = 0.5
    patience: int = 10
    freeze_tolerance: float = 0.01
    freeze_window: int = 3

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "fill_strategy", FillStrategy(self.fill_strategy))
        positive = ("batch_size", "epochs", "accumulation", "model_dim", "n_iterations", "patience", "freeze_window")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0 or self.lambda_cycle <= 0 or self.lambda_reg < 0 or self.lambda_paired < 0:
            raise ConfigError("learning_rate and lambda_cycle must be > 0, lambda_reg and lambda_paired >= 0")
        if not 0 <= self.phase1_epochs <= self.epochs:
            raise ConfigError(f"phase1_epochs must lie in [0, epochs={self.epochs}]")
        if not 0 <= self.top_k <= 6:
            raise ConfigError("top_k must lie in [0, 6]")
        if self.schedule_total_steps < 0:
            raise ConfigError("schedule_total_steps must be >= 0")
        if self.missing_mode:
            MissingnessSpec(MissingMode(self.missing_mode), self.missing_rate)
        if not 0 <= self.max_train_missing_rate <= 1:
            raise ConfigError("max_train_missing_rate must lie in [0, 1]")

    @property
    def phase2_epochs(self) -> int:
        return self.epochs - self.phase1_epochs

    @property
    def training_missingness(self) -> Optional[MissingnessSpec]:
        if not self.missing_mode or self.missing_rate == 0:
            return None
        return MissingnessSpec(MissingMode(self.missing_mode), self.missing_rate, self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return {k: (v.value if isinstance(v, Enum) else v) for k, v in dataclasses.asdict(self).items()}

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **overrides) -> "TrainConfig":
        return dataclasses.replace(self, **overrides)


_ALIASES = {"K": "top_k", "B": "batch_size", "A": "accumulation", "lr": "learning_rate"}
_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def coerce_value(key: str, text: Any) -> Any:
    key = _ALIASES.get(key, key)
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    if not isinstance(text, str):
        return text
    default = getattr(TrainConfig(), key)
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, Enum):
            return type(default)(text.strip())
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    return text.strip()


def parse_config_text(text: str) -> Dict[str, Any]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[_ALIASES.get(key, key)] = coerce_value(key, value)
    return values


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> TrainConfig:
    """Defaults, then the config file, then ``overrides`` (e.g. CLI flags)."""
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise LoadError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text()))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[_ALIASES.get(k, k)] = coerce_value(k, v)
    return TrainConfig(**values)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
