"""Training configuration and its flat ``key = value`` text form."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from hamam.errors import ConfigError

# Defaults for the first block of fields reproduce the published setup:
# batch 8, 6 epochs, 5 folds, LR 1e-5 / 1e-4 with 10% warmup, dropout 0.5
# with 5 samples, class weights 1 / 1 / 0.1.


@dataclass
class TrainConfig:
    epochs: int = 6
    batch_size: int = 8
    backbone_max_lr: float = 1e-5
    head_max_lr: float = 1e-4
    warmup_fraction: float = 0.1
    dropout_rate: float = 0.5
    dropout_samples: int = 5
    class_weights: tuple[float, float, float] = (1.0, 1.0, 0.1)
    fold_count: int = 5
    seed: int = 0
    neutral_threshold: float | None = None
    head_variant: str = "hamam"
    pooling: str = "mean_max"
    entity_masking: bool = True
    optimizer: str = "adamw"
    weight_decay: float = 0.01
    grad_clip: float | None = 1.0
    # toy backbone
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    max_length: int = 128
    pretrain_epochs: int = 120
    pretrain_lr: float = 1e-3
    head_init_std: float = 0.02
    eval_batch_size: int = 64

    def __post_init__(self):
        self.class_weights = tuple(float(w) for w in self.class_weights)
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.epochs >= 1, "epochs must be >= 1")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.backbone_max_lr >= 0 and self.head_max_lr >= 0, "learning rates must be >= 0")
        need(0.0 < self.warmup_fraction < 1.0, "warmup_fraction must lie in (0, 1)")
        need(0.0 <= self.dropout_rate < 1.0, "dropout_rate must lie in [0, 1)")
        need(self.dropout_samples >= 1, "dropout_samples must be >= 1")
        need(len(self.class_weights) == 3, "class_weights needs three values")
        need(all(w > 0 for w in self.class_weights), "class_weights must be > 0")
        need(self.fold_count >= 2, "fold_count must be >= 2")
        need(
            self.neutral_threshold is None or 0.0 <= self.neutral_threshold <= 1.0,
            "neutral_threshold must lie in [0, 1]",
        )
        need(self.head_variant in ("hamam", "pooled_sentiment"), f"unknown head_variant {self.head_variant!r}")
        need(self.pooling in ("mean", "max", "mean_max"), f"unknown pooling {self.pooling!r}")
        need(self.optimizer in ("adamw", "sgd"), f"unknown optimizer {self.optimizer!r}")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(self.grad_clip is None or self.grad_clip > 0, "grad_clip must be > 0 or none")
        need(self.hidden_size % self.num_heads == 0, "hidden_size must be divisible by num_heads")
        need(self.pretrain_epochs >= 0, "pretrain_epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_weights"] = list(self.class_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_dict().items())

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _field_types() -> dict[str, str]:
    return {f.name: str(f.type) for f in fields(TrainConfig)}


def parse_value(key: str, text: str):
    types = _field_types()
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    kind = types[key]
    text = text.strip()
    try:
        if "None" in kind and text.lower() in ("none", "null", ""):
            return None
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
        if kind == "bool":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind.startswith("tuple"):
            return tuple(float(x) for x in text.replace("(", "").replace(")", "").split(","))
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r}") from None


def parse_config_text(text: str) -> dict:
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, value)
    return values


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> TrainConfig:
    """Defaults, then the file, then ``overrides`` (already-typed values)."""
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update(overrides or {})
    return TrainConfig.from_dict(values)
