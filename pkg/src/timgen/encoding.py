"""Interaction records and the input encoding layer.

Each interaction becomes

    x_t = [e_action | e_dev | e_plat | e_geo | e_abs | e_gap | e_cycle | text | img | video | audio]

Index lookups and fixed sinusoidal features are computed once per sequence
(:func:`featurize_sequence`); the trainable tables are applied by
:class:`EncodingParams` so batches stay inside the autograd graph.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .numerics import DTYPE
from .providers import MODALITIES

SECONDS_PER_DAY = 86400


class OrderingError(ValueError):
    """Timestamps out of order."""


class OutOfVocabularyError(ValueError):
    pass


class SequenceLengthError(ValueError):
    pass


class ActionType(enum.IntEnum):
    CLICK = 0
    VIEW = 1
    PURCHASE = 2
    LIKE = 3
    COMMENT = 4

    @classmethod
    def parse(cls, name: str) -> "ActionType":
        return cls[name.upper()]


class Device(enum.IntEnum):
    PC = 0
    MOBILE = 1
    TABLET = 2

    @classmethod
    def parse(cls, name: str) -> "Device":
        return cls[name.upper()]


class Platform(enum.IntEnum):
    WEB = 0
    IOS = 1
    ANDROID = 2
    MINIAPP = 3

    @classmethod
    def parse(cls, name: str) -> "Platform":
        return cls[name.upper()]


@dataclass(frozen=True)
class Context:
    device: Device
    platform: Platform
    geo: int


@dataclass
class Interaction:
    user_id: str
    item_id: str
    action: ActionType
    context: Context
    timestamp: int
    modalities: dict[str, Optional[np.ndarray]]
    score: float = 0.0
    label: int = 0

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown:
            raise ValueError(f"unknown modalities: {sorted(unknown)}")
        if not any(self.modalities.get(m) is not None for m in MODALITIES):
            raise ValueError(f"interaction {self.user_id}/{self.item_id} has no modality present")

    def present(self) -> tuple[bool, ...]:
        return tuple(self.modalities.get(m) is not None for m in MODALITIES)


@dataclass(frozen=True)
class EncoderConfig:
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
    t_max: int = 32
    time_base: float = 10000.0
    d_cycle: int = field(default=2, init=False)

    def __post_init__(self):
        for name in ("d_action", "d_device", "d_platform", "d_geo", "geo_vocab", "d_abs", "d_gap",
                     "gap_buckets", "d_text", "d_img", "d_video", "d_audio", "t_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_abs % 2:
            raise ValueError("d_abs must be even")

    @property
    def modality_dims(self) -> dict[str, int]:
        return {"text": self.d_text, "img": self.d_img, "video": self.d_video, "audio": self.d_audio}

    @property
    def d_candidate(self) -> int:
        return sum(self.modality_dims.values())

    @property
    def input_dim(self) -> int:
        return (self.d_action + self.d_device + self.d_platform + self.d_geo
                + self.d_abs + self.d_gap + self.d_cycle + self.d_candidate)

    @property
    def omega(self) -> np.ndarray:
        k = np.arange(self.d_abs // 2, dtype=np.float64)
        return self.time_base ** (-2.0 * k / self.d_abs)


def _uniform_table(rows: int, cols: int, generator: torch.Generator) -> nn.Parameter:
    bound = 1.0 / math.sqrt(cols)
    return nn.Parameter((torch.rand(rows, cols, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound)


class EncodingParams(nn.Module):
    """Trainable lookup tables for action, context and time-gap features."""

    def __init__(self, cfg: EncoderConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        g = generator or torch.Generator().manual_seed(0)
        self.cfg = cfg
        self.E_action = _uniform_table(len(ActionType), cfg.d_action, g)
        self.E_dev = _uniform_table(len(Device), cfg.d_device, g)
        self.E_plat = _uniform_table(len(Platform), cfg.d_platform, g)
        self.E_geo = _uniform_table(cfg.geo_vocab, cfg.d_geo, g)
        self.E_gap = _uniform_table(cfg.gap_buckets, cfg.d_gap, g)

    def forward(self, batch: "SequenceBatch", zero_modalities: bool = False) -> torch.Tensor:
        """Unified features, shape ``(B, t_max, D)``."""
        mm = batch.modal_block()
        if zero_modalities:
            mm = torch.zeros_like(mm)
        x = torch.cat([
            self.E_action[batch.action],
            self.E_dev[batch.device],
            self.E_plat[batch.platform],
            self.E_geo[batch.geo],
            batch.abs_time,
            self.E_gap[batch.gap_bucket],
            batch.cycle,
            mm,
        ], dim=-1)
        assert x.shape[-1] == self.cfg.input_dim
        return x


def embed_action(a: ActionType, params: EncodingParams) -> torch.Tensor:
    return params.E_action[int(ActionType(a))]


def _geo_index(geo: int, cfg: EncoderConfig) -> int:
    if not 0 <= geo < cfg.geo_vocab:
        raise OutOfVocabularyError(f"geo id {geo} outside vocabulary of size {cfg.geo_vocab}")
    return int(geo)


def encode_context(c: Context, params: EncodingParams) -> torch.Tensor:
    geo = _geo_index(c.geo, params.cfg)
    return torch.cat([params.E_dev[int(c.device)], params.E_plat[int(c.platform)], params.E_geo[geo]])


def _abs_time_np(timestamp: int, cfg: EncoderConfig) -> np.ndarray:
    angles = cfg.omega * (timestamp / SECONDS_PER_DAY)
    out = np.empty(cfg.d_abs)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def encode_abs_time(timestamp: int, cfg: EncoderConfig) -> torch.Tensor:
    """Interleaved (sin, cos) of omega_k * days-since-epoch."""
    if timestamp < 0:
        raise ValueError("timestamp must be >= 0")
    return torch.from_numpy(_abs_time_np(timestamp, cfg))


def gap_bucket(t_now: int, t_prev: int, cfg: EncoderConfig) -> int:
    if t_now < t_prev:
        raise OrderingError(f"timestamp {t_now} precedes previous timestamp {t_prev}")
    log_gap = math.log1p(t_now - t_prev)
    return min(int(math.floor(log_gap)), cfg.gap_buckets - 1)


def encode_time_gap(t_now: int, t_prev: int, params: EncodingParams, cfg: EncoderConfig) -> torch.Tensor:
    return params.E_gap[gap_bucket(t_now, t_prev, cfg)]


def day_of_week(timestamp: int) -> int:
    """0..6 with epoch day 0 (a Thursday) mapped to 4."""
    return (int(timestamp) // SECONDS_PER_DAY + 4) % 7


def _cycle_np(timestamp: int) -> np.ndarray:
    angle = 2.0 * math.pi * day_of_week(timestamp) / 7.0
    return np.array([math.sin(angle), math.cos(angle)])


def encode_cycle(timestamp: int) -> torch.Tensor:
    return torch.from_numpy(_cycle_np(timestamp))


@dataclass
class SequenceFeatures:
    """Parameter-free per-step features of one user sequence (length T)."""

    user_id: str
    item_ids: list[str]
    timestamps: np.ndarray
    action: np.ndarray
    device: np.ndarray
    platform: np.ndarray
    geo: np.ndarray
    gap_bucket: np.ndarray
    abs_time: np.ndarray
    cycle: np.ndarray
    modal: dict[str, np.ndarray]
    present: np.ndarray  # (T, 4) bool, modality order as MODALITIES
    scores: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.item_ids)

    def prefix(self, t: int) -> "SequenceFeatures":
        return SequenceFeatures(
            self.user_id, self.item_ids[:t], self.timestamps[:t], self.action[:t], self.device[:t],
            self.platform[:t], self.geo[:t], self.gap_bucket[:t], self.abs_time[:t], self.cycle[:t],
            {m: v[:t] for m, v in self.modal.items()}, self.present[:t], self.scores[:t], self.labels[:t],
        )

    def candidate(self, t: int) -> np.ndarray:
        """Zero-filled modality block of step t (the item features x*)."""
        return np.concatenate([self.modal[m][t] for m in MODALITIES])


def _modality_vector(x: Interaction, m: str, dim: int) -> Optional[np.ndarray]:
    v = x.modalities.get(m)
    if v is None:
        return None
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (dim,):
        raise ValueError(f"{m} embedding of {x.item_id} has shape {v.shape}, expected ({dim},)")
    return v


def featurize_sequence(history: Sequence[Interaction], cfg: EncoderConfig) -> SequenceFeatures:
    T = len(history)
    if T == 0:
        raise ValueError("empty interaction sequence")
    if T > cfg.t_max:
        raise SequenceLengthError(f"sequence length {T} exceeds t_max={cfg.t_max}")
    dims = cfg.modality_dims
    modal = {m: np.zeros((T, d)) for m, d in dims.items()}
    present = np.zeros((T, len(MODALITIES)), dtype=bool)
    prev = history[0].timestamp
    buckets = np.empty(T, dtype=np.int64)
    for t, x in enumerate(history):
        buckets[t] = gap_bucket(x.timestamp, prev, cfg)
        prev = x.timestamp
        for j, m in enumerate(MODALITIES):
            v = _modality_vector(x, m, dims[m])
            if v is not None:
                modal[m][t] = v
                present[t, j] = True
    return SequenceFeatures(
        user_id=history[0].user_id,
        item_ids=[x.item_id for x in history],
        timestamps=np.array([x.timestamp for x in history], dtype=np.int64),
        action=np.array([int(x.action) for x in history], dtype=np.int64),
        device=np.array([int(x.context.device) for x in history], dtype=np.int64),
        platform=np.array([int(x.context.platform) for x in history], dtype=np.int64),
        geo=np.array([_geo_index(x.context.geo, cfg) for x in history], dtype=np.int64),
        gap_bucket=buckets,
        abs_time=np.stack([_abs_time_np(x.timestamp, cfg) for x in history]),
        cycle=np.stack([_cycle_np(x.timestamp) for x in history]),
        modal=modal,
        present=present,
        scores=np.array([x.score for x in history], dtype=np.float64),
        labels=np.array([x.label for x in history], dtype=np.int64),
    )


@dataclass
class SequenceBatch:
    """Sequences padded to ``t_max`` and stacked into tensors."""

    features: list[SequenceFeatures]
    lengths: torch.Tensor
    action: torch.Tensor
    device: torch.Tensor
    platform: torch.Tensor
    geo: torch.Tensor
    gap_bucket: torch.Tensor
    abs_time: torch.Tensor
    cycle: torch.Tensor
    modal: dict[str, torch.Tensor]
    present: torch.Tensor

    def modal_block(self) -> torch.Tensor:
        return torch.cat([self.modal[m] for m in MODALITIES], dim=-1)

    def __len__(self) -> int:
        return len(self.features)


def collate(features: Sequence[SequenceFeatures], t_max: int) -> SequenceBatch:
    B = len(features)

    def pad(name, trailing=(), dtype=np.float64):
        out = np.zeros((B, t_max) + trailing, dtype=dtype)
        for b, f in enumerate(features):
            out[b, : len(f)] = getattr(f, name)
        return torch.from_numpy(out)

    modal = {}
    for m in MODALITIES:
        d = features[0].modal[m].shape[1]
        arr = np.zeros((B, t_max, d))
        for b, f in enumerate(features):
            arr[b, : len(f)] = f.modal[m]
        modal[m] = torch.from_numpy(arr)
    d_abs = features[0].abs_time.shape[1]
    return SequenceBatch(
        features=list(features),
        lengths=torch.tensor([len(f) for f in features], dtype=torch.int64),
        action=pad("action", dtype=np.int64),
        device=pad("device", dtype=np.int64),
        platform=pad("platform", dtype=np.int64),
        geo=pad("geo", dtype=np.int64),
        gap_bucket=pad("gap_bucket", dtype=np.int64),
        abs_time=pad("abs_time", (d_abs,)),
        cycle=pad("cycle", (2,)),
        modal=modal,
        present=pad("present", (len(MODALITIES),), dtype=bool),
    )


@dataclass
class EncodedSequence:
    x: torch.Tensor  # (T, D)
    present: torch.Tensor  # (T, 4) bool


def encode_sequence(history: Sequence[Interaction], params: EncodingParams, cfg: Optional[EncoderConfig] = None) -> EncodedSequence:
    """Row t is the encoding of interaction t given the timestamp of t-1."""
    cfg = cfg or params.cfg
    for a, b in zip(history, history[1:]):
        if b.timestamp < a.timestamp:
            raise OrderingError(f"interactions not sorted by timestamp ({a.timestamp} > {b.timestamp})")
    feats = featurize_sequence(history, cfg)
    batch = collate([feats], cfg.t_max)
    T = len(feats)
    return EncodedSequence(params(batch)[0, :T], batch.present[0, :T])


def encode_interaction(x: Interaction, prev_timestamp: Optional[int], params: EncodingParams,
                       cfg: Optional[EncoderConfig] = None) -> torch.Tensor:
    cfg = cfg or params.cfg
    prev = x.timestamp if prev_timestamp is None else prev_timestamp
    feats = featurize_sequence([x], cfg)
    feats.gap_bucket[0] = gap_bucket(x.timestamp, prev, cfg)
    out = params(collate([feats], cfg.t_max))[0, 0]
    if out.shape[0] != cfg.input_dim:
        raise AssertionError("encoding width does not match configured D")
    return out
