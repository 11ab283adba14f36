"""Synthetic interaction data with regime-switching interest drift.

Each user holds a latent interest class that switches at rate ``drift_rate``
per step. Items are drawn mostly from the current class, their modality
embeddings lean toward a class centroid in the class's salient modality, and
engagement (hence the score label) grows with how fresh the current regime is
and whether the item matches it. Everything is a pure function of the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataio import write_dataset, write_truth
from .encoding import ActionType, Context, Device, Interaction, Platform, day_of_week
from .labels import EngagementSignals, LabelWeights, ecommerce_score, movie_score_validate, video_score
from .numerics import derive_seed
from .providers import MODALITIES, MockProvider, write_table


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    n_users: int = 200
    seq_len_min: int = 32
    seq_len_max: int = 32
    n_classes: int = 4
    drift_rate: float = 0.1
    label_noise: float = 0.1
    seed: int = 42
    scenario: str = "ecommerce"
    items_per_class: int = 500
    focus: float = 0.85
    item_noise: float = 4.0
    salient_class: int = 0
    salient_modality: str = "audio"
    missing_rate: float = 0.1
    intensity_floor: float = 0.2
    intensity_decay: float = 6.0
    start_time: int = 1704067200
    gap_median_hours: float = 6.0
    gap_sigma: float = 1.0
    weekend_multiplier: float = 2.0
    geo_vocab: int = 64
    d_text: int = 16
    d_img: int = 16
    d_video: int = 16
    d_audio: int = 16
    ecommerce_weights: tuple[float, ...] = (1.0, 2.0, 3.0, 2.0)
    video_weights: tuple[float, ...] = (3.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.drift_rate <= 1.0:
            raise ScenarioError(f"drift_rate must lie in [0, 1], got {self.drift_rate}")
        if self.n_classes < 2:
            raise ScenarioError("n_classes must be >= 2")
        if self.seq_len_min < 2 or self.seq_len_max < self.seq_len_min:
            raise ScenarioError("need 2 <= seq_len_min <= seq_len_max")
        if self.n_users < 1 or self.items_per_class < 1:
            raise ScenarioError("n_users and items_per_class must be >= 1")
        if self.scenario not in ("ecommerce", "video", "movie"):
            raise ScenarioError(f"unknown scenario {self.scenario!r}")
        if self.salient_class >= self.n_classes:
            raise ScenarioError(f"salient_class {self.salient_class} >= n_classes {self.n_classes}")
        if self.salient_modality not in MODALITIES:
            raise ScenarioError(f"salient_modality must be one of {MODALITIES}, got {self.salient_modality!r}")
        if not 0.0 <= self.focus <= 1.0 or not 0.0 <= self.missing_rate < 1.0:
            raise ScenarioError("focus must lie in [0, 1] and missing_rate in [0, 1)")
        if self.label_noise < 0 or self.item_noise < 0:
            raise ScenarioError("noise levels must be >= 0")
        if len(self.ecommerce_weights) != 4 or len(self.video_weights) != 4:
            raise ScenarioError("label weight tuples need 4 entries")
        try:
            self.label_weights()
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None

    @property
    def modality_dims(self) -> dict[str, int]:
        return {"text": self.d_text, "img": self.d_img, "video": self.d_video, "audio": self.d_audio}

    def label_weights(self) -> LabelWeights:
        return LabelWeights(tuple(self.ecommerce_weights), tuple(self.video_weights))

    @property
    def twin_class(self) -> int:
        """The class that ``salient_class`` mimics outside its salient modality (-1 when disabled)."""
        return -1 if self.salient_class < 0 else (self.salient_class + 1) % self.n_classes


@dataclass
class Item:
    item_id: str
    cls: int
    embeddings: dict[str, Optional[np.ndarray]]


@dataclass
class GeneratedData:
    interactions: list[Interaction]
    truth: list[tuple[str, int, int, float]]  # user_id, step, true class, intensity
    items: list[Item]
    changepoint_stat: Optional[float] = None
    n_changepoints: int = 0
    class_histogram: dict[int, int] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "users": len({t[0] for t in self.truth}),
            "interactions": len(self.interactions),
            "items": len(self.items),
            "changepoints": self.n_changepoints,
            "changepoint_welch_t": self.changepoint_stat,
            "class_histogram": self.class_histogram,
        }


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def build_catalog(spec: ScenarioSpec) -> list[Item]:
    """Items with unit-norm embeddings pulled toward their class centroid.

    The salient class shares its twin's centroid in every modality except
    the salient one, so only that modality separates the two.
    """
    rng = np.random.default_rng(derive_seed(spec.seed, "catalog"))
    dims = spec.modality_dims
    centroids = {(c, m): _unit(rng.standard_normal(dims[m])) for c in range(spec.n_classes) for m in MODALITIES}
    if spec.salient_class >= 0:
        for m in MODALITIES:
            if m != spec.salient_modality:
                centroids[(spec.salient_class, m)] = centroids[(spec.twin_class, m)]
    mock = MockProvider(spec.seed, dims)
    items = []
    for c in range(spec.n_classes):
        for i in range(spec.items_per_class):
            item_id = f"i{c}_{i:04d}"
            keep = rng.random(len(MODALITIES)) >= spec.missing_rate
            if c == spec.salient_class:
                keep[MODALITIES.index(spec.salient_modality)] = True
            if not keep.any():
                keep[int(rng.integers(len(MODALITIES)))] = True
            emb: dict[str, Optional[np.ndarray]] = {}
            for j, m in enumerate(MODALITIES):
                emb[m] = _unit(centroids[(c, m)] + spec.item_noise * mock.get(item_id, m)) if keep[j] else None
            items.append(Item(item_id, c, emb))
    return items


def _engagement(rng: np.random.Generator, affinity: float) -> EngagementSignals:
    # Funnel driven by one noisy engagement level: deeper actions need more of it.
    level = affinity + 0.1 * rng.standard_normal()
    length = 600.0
    completion = min(max(level, 0.0), 1.2)
    return EngagementSignals(
        clicked=level > 0.2, carted=level > 0.45, purchased=level > 0.7, commented=level > 0.6,
        liked=level > 0.5, shared=level > 0.8, watch_time=completion * length, video_length=length,
    )


def _action(s: EngagementSignals) -> ActionType:
    if s.purchased:
        return ActionType.PURCHASE
    if s.commented:
        return ActionType.COMMENT
    if s.liked:
        return ActionType.LIKE
    if s.clicked:
        return ActionType.CLICK
    return ActionType.VIEW


def _score(spec: ScenarioSpec, rng: np.random.Generator, s: EngagementSignals, affinity: float) -> float:
    weights = spec.label_weights()
    if spec.scenario == "ecommerce":
        return ecommerce_score(s, weights) + spec.label_noise * rng.standard_normal()
    if spec.scenario == "video":
        return video_score(s, weights) + spec.label_noise * rng.standard_normal()
    raw = 1.0 + 9.0 * affinity + spec.label_noise * 10.0 * rng.standard_normal()
    return movie_score_validate(int(min(max(round(raw), 1), 10)))


def _simulate_user(spec: ScenarioSpec, u: int, by_class: list[list[Item]]):
    rng = np.random.default_rng(derive_seed(spec.seed, "user", u))
    user_id = f"u{u:05d}"
    T = int(rng.integers(spec.seq_len_min, spec.seq_len_max + 1))
    device = Device(int(rng.integers(len(Device))))
    platform = Platform(int(rng.integers(len(Platform))))
    geo = int(rng.integers(spec.geo_vocab))
    ts = spec.start_time + int(rng.integers(0, 30 * 86400))
    mu_gap = math.log(spec.gap_median_hours * 3600.0)

    cls = int(rng.integers(spec.n_classes))
    age = 0
    interactions, truth, changes = [], [], []
    for step in range(T):
        if step > 0:
            if rng.random() < spec.drift_rate:
                new_cls = int(rng.integers(spec.n_classes))
                if new_cls != cls:
                    changes.append(step)
                    age = 0
                cls = new_cls
            gap = rng.lognormal(mu_gap, spec.gap_sigma)
            if day_of_week(ts) >= 5:
                gap /= spec.weekend_multiplier
            ts += max(int(gap), 1)
        intensity = spec.intensity_floor + (1.0 - spec.intensity_floor) * math.exp(-age / spec.intensity_decay)
        item_cls = cls if rng.random() < spec.focus else int(rng.integers(spec.n_classes))
        pool = by_class[item_cls]
        item = pool[int(rng.integers(len(pool)))]
        affinity = intensity if item_cls == cls else 0.1 * intensity
        signals = _engagement(rng, affinity)
        score = _score(spec, rng, signals, affinity)
        device_now = device if rng.random() < 0.8 else Device(int(rng.integers(len(Device))))
        interactions.append(Interaction(
            user_id=user_id, item_id=item.item_id, action=_action(signals),
            context=Context(device_now, platform, geo), timestamp=ts,
            modalities={m: (None if v is None else v.copy()) for m, v in item.embeddings.items()},
            score=float(score), label=item.cls,
        ))
        truth.append((user_id, step, cls, intensity))
        age += 1
    return interactions, truth, changes


def _welch_t(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = np.asarray(a), np.asarray(b)
    se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    return float((a.mean() - b.mean()) / se) if se > 0 else 0.0


def generate(spec: ScenarioSpec) -> GeneratedData:
    items = build_catalog(spec)
    by_class = [[it for it in items if it.cls == c] for c in range(spec.n_classes)]
    interactions, truth, post, pre = [], [], [], []
    for u in range(spec.n_users):
        xs, tr, changes = _simulate_user(spec, u, by_class)
        interactions.extend(xs)
        truth.extend(tr)
        for step in changes:
            post.append(xs[step].score)
            pre.append(xs[step - 1].score)
    hist: dict[int, int] = {}
    for x in interactions:
        hist[x.label] = hist.get(x.label, 0) + 1
    stat = _welch_t(post, pre) if len(post) >= 2 else None
    # Fresh regimes engage more strongly than stale ones; verify the drift is
    # visible in the labels whenever there are enough switches to tell.
    if 0 < spec.drift_rate <= 0.5 and len(post) >= 20 and (stat is None or stat < 2.0):
        raise ScenarioError(f"post-change scores do not differ from pre-change scores (Welch t={stat})")
    return GeneratedData(interactions, truth, items, stat, len(post), dict(sorted(hist.items())))


def generate_dataset(spec: ScenarioSpec, out_dir) -> GeneratedData:
    """Write ``interactions.jsonl``, ``truth.tsv`` and ``items.tsv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate(spec)
    write_dataset(out / "interactions.jsonl", data.interactions)
    write_truth(out / "truth.tsv", data.truth)
    write_table(out / "items.tsv", [(it.item_id, m, v) for it in data.items
                                    for m, v in it.embeddings.items() if v is not None])
    return data


def drift_recovery_score(predictions: Sequence[int], truths: Sequence[int]) -> float:
    """Fraction of evaluation steps whose predicted class equals the user's current true class."""
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions for {len(truths)} ground-truth steps")
    if len(predictions) == 0:
        raise ValueError("empty evaluation set")
    hits = sum(int(p) == int(t) for p, t in zip(predictions, truths))
    return hits / len(predictions)
