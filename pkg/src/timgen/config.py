"""Flat ``key = value`` configuration files and the training configuration."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path

from .encoding import EncoderConfig


class ConfigError(ValueError):
    pass


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(raw: str, typ, key: str):
    try:
        if typ is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typing.get_origin(typ) is tuple:
            (inner, *_rest) = typing.get_args(typ)
            return tuple(inner(x.strip()) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def from_mapping(cls, values: typing.Mapping[str, str]):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {k: _convert(v, hints[k], k) for k, v in values.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, cls):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return from_mapping(cls, parse_key_values(text, str(path)))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    return str(v)


def format_config(obj) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(obj, f.name))}\n"
                   for f in dataclasses.fields(obj) if f.init)


@dataclass(frozen=True)
class TrainConfig:
    # loss and optimisation
    lambda_score: float = 1.0
    lambda_class: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    weight_decay: float = 0.0  # decoupled (AdamW-style) when > 0
    latent_samples: int = 1
    train_frac: float = 0.8
    val_frac: float = 0.1
    # data shape
    n_classes: int = 4
    t_max: int = 32
    # input encoding
    d_action: int = 8
    d_device: int = 4
    d_platform: int = 4
    d_geo: int = 4
    geo_vocab: int = 64
    d_abs: int = 8
    d_gap: int = 4
    gap_buckets: int = 32
    d_text: int = 16
    d_img: int = 16
    d_video: int = 16
    d_audio: int = 16
    # architecture
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    d_latent: int = 16
    decoder_hidden: int = 64
    sigma_floor: float = 1e-6
    positional: str = "none"
    modality_in_input: bool = True
    variant: str = "temporal"

    def __post_init__(self):
        if self.lambda_score < 0 or self.lambda_class < 0:
            raise ConfigError("lambda_score and lambda_class must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.variant not in ("temporal", "static"):
            raise ConfigError(f"variant must be temporal or static, got {self.variant!r}")
        if self.positional not in ("none", "extra"):
            raise ConfigError(f"positional must be none or extra, got {self.positional!r}")
        if self.n_classes < 1 or self.latent_samples < 1:
            raise ConfigError("n_classes and latent_samples must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if not (0 < self.train_frac and 0 <= self.val_frac and self.train_frac + self.val_frac <= 1):
            raise ConfigError("bad split fractions")
        self.encoder_config()

    def encoder_config(self) -> EncoderConfig:
        try:
            return EncoderConfig(
                d_action=self.d_action, d_device=self.d_device, d_platform=self.d_platform, d_geo=self.d_geo,
                geo_vocab=self.geo_vocab, d_abs=self.d_abs, d_gap=self.d_gap, gap_buckets=self.gap_buckets,
                d_text=self.d_text, d_img=self.d_img, d_video=self.d_video, d_audio=self.d_audio,
                t_max=self.t_max,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)
