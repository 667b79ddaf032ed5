"""Training configuration and its ``key = value`` file format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    dataset_dir: str = "data"
    teacher: str = "rule"
    student_lr: float = 0.002
    batch_size: int = 24
    agent_lr: float = 0.01
    pretrain_epochs: int = 20
    train_epochs: int = 100
    p: int = 4
    steps_per_episode: int = 8
    crop: int = 64
    seed: int = 0
    baseline_enabled: bool = True
    log_path: str = "train_log.csv"
    out_dir: str = "run"
    # which sources the teacher fuses during self-learning: original | degraded
    teacher_input: str = "original"

    def __post_init__(self):
        if self.crop < 16 or self.crop % 16:
            raise ConfigError(f"crop must be a multiple of 16 and >= 16, got {self.crop}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.p < 0:
            raise ConfigError(f"p must be >= 0, got {self.p}")
        for name in ("pretrain_epochs", "train_epochs", "steps_per_episode"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.student_lr <= 0 or self.agent_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.teacher_input not in ("original", "degraded"):
            raise ConfigError(f"teacher_input must be 'original' or 'degraded', got {self.teacher_input!r}")

    def with_overrides(self, **overrides) -> "TrainConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def dump(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def coerce(key: str, text: str):
    kind = _TYPES.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if kind == "bool":
            return parse_bool(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    return text


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = coerce(key, value)
    return values


def load_config(path=None, **overrides) -> TrainConfig:
    """Defaults, then the file (if any), then non-``None`` overrides."""
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                values = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)
