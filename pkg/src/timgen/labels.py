"""Score and class supervision built from engagement signals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class EngagementSignals:
    clicked: bool = False
    carted: bool = False
    purchased: bool = False
    commented: bool = False
    liked: bool = False
    shared: bool = False
    watch_time: float = 0.0
    video_length: float = 1.0

    @property
    def completion(self) -> float:
        if self.video_length <= 0:
            raise LabelError("video length must be positive")
        return min(max(self.watch_time / self.video_length, 0.0), 1.0)


@dataclass(frozen=True)
class LabelWeights:
    ecommerce: tuple[float, float, float, float] = (1.0, 2.0, 3.0, 2.0)  # click, cart, purchase, comment
    video: tuple[float, float, float, float] = (3.0, 1.0, 1.0, 1.0)  # completion, like, comment, share

    def __post_init__(self):
        if any(w <= 0 for w in self.ecommerce + self.video):
            raise LabelError("label weights must be positive")


def ecommerce_score(s: EngagementSignals, w: LabelWeights) -> float:
    a, b, g, d = w.ecommerce
    return a * s.clicked + b * s.carted + g * s.purchased + d * s.commented


def video_score(s: EngagementSignals, w: LabelWeights) -> float:
    v1, v2, v3, v4 = w.video
    return v1 * s.completion + v2 * s.liked + v3 * s.commented + v4 * s.shared


def movie_score_validate(r) -> float:
    if isinstance(r, bool) or int(r) != r or not 1 <= r <= 10:
        raise LabelError(f"movie rating must be an integer in 1..10, got {r!r}")
    return float(r)


def one_hot_class(c: int, k: int) -> np.ndarray:
    if not 0 <= c < k:
        raise LabelError(f"class {c} outside 0..{k - 1}")
    out = np.zeros(k)
    out[c] = 1.0
    return out
