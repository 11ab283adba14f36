"""End-to-end comparison of autograd gradients against central differences."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .config import TrainConfig
from .encoding import ActionType, Context, Device, Interaction, Platform, featurize_sequence
from .model import TIMGen
from .numerics import Rng, derive_seed, finite_diff_gradient, relative_error
from .providers import MODALITIES
from .training import batch_loss

TINY_CONFIG = TrainConfig(
    d_model=8, n_heads=1, n_layers=1, d_ff=8, d_latent=4, decoder_hidden=6, n_classes=3, t_max=4,
    d_action=2, d_device=2, d_platform=2, d_geo=2, geo_vocab=4, d_abs=4, d_gap=2, gap_buckets=16,
    d_text=3, d_img=3, d_video=3, d_audio=3, batch_size=1, epochs=1,
)
TINY_MODALITIES = ("text", "img")


def tiny_history(seed: int, cfg: TrainConfig = TINY_CONFIG, length: int = 4,
                 modalities: Sequence[str] = TINY_MODALITIES) -> list[Interaction]:
    rng = np.random.default_rng(derive_seed(seed, "gradcheck-history"))
    ts = 1_700_000_000
    out = []
    for t in range(length):
        ts += int(rng.integers(60, 5 * 86400))
        emb = {m: (rng.standard_normal(getattr(cfg, f"d_{m}")) if m in modalities else None) for m in MODALITIES}
        out.append(Interaction(
            user_id="g0", item_id=f"g{t}", action=ActionType(int(rng.integers(5))),
            context=Context(Device(int(rng.integers(3))), Platform(int(rng.integers(4))),
                            int(rng.integers(cfg.geo_vocab))),
            timestamp=ts, modalities=emb, score=float(rng.normal(2.0, 1.0)),
            label=int(rng.integers(cfg.n_classes)),
        ))
    return out


def parameter_gradients(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.nn.Parameter],
                        h: float = 1e-5) -> list[tuple[np.ndarray, np.ndarray]]:
    """(analytic, finite-difference) gradient pairs for every tensor in ``params``."""
    for p in params:
        p.grad = None
    loss_fn().backward()
    pairs = []
    for p in params:
        analytic = p.grad.detach().numpy().copy() if p.grad is not None else np.zeros(p.shape)
        data = p.data

        def f(vec, data=data):
            data.copy_(torch.from_numpy(vec.reshape(data.shape)))
            with torch.no_grad():
                return float(loss_fn())

        original = data.numpy().copy()
        try:
            numeric = finite_diff_gradient(f, original.ravel(), h).reshape(original.shape)
        finally:
            data.copy_(torch.from_numpy(original))
        pairs.append((analytic, numeric))
    return pairs


def _group(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "fusion" and parts[1] == "branches":
        return ".".join(parts[:3])
    if parts[0] == "interest" and parts[1] == "blocks":
        return ".".join(parts[:4])
    return ".".join(parts[:2])


@dataclass
class GradcheckResult:
    seed: int
    tolerance: float
    per_parameter: "OrderedDict[str, float]" = field(default_factory=OrderedDict)

    @property
    def per_group(self) -> "OrderedDict[str, float]":
        out: OrderedDict[str, float] = OrderedDict()
        for name, err in self.per_parameter.items():
            g = _group(name)
            out[g] = max(out.get(g, 0.0), err)
        return out

    @property
    def max_error(self) -> float:
        return max(self.per_parameter.values())

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def worst(self, n: int = 5) -> list[tuple[str, float]]:
        return sorted(self.per_parameter.items(), key=lambda kv: -kv[1])[:n]


def run_gradcheck(seed: int = 0, tolerance: float = 1e-4, h: float = 1e-5,
                  cfg: Optional[TrainConfig] = None) -> GradcheckResult:
    cfg = (cfg or TINY_CONFIG).replace(seed=seed)
    model = TIMGen(cfg)
    feats = [featurize_sequence(tiny_history(seed, cfg, length=cfg.t_max), cfg.encoder_config())]
    eps_seed = derive_seed(seed, "gradcheck-eps")

    def loss_fn():
        return batch_loss(model, feats, Rng(eps_seed))[0]

    names, params = zip(*model.named_parameters())
    result = GradcheckResult(seed, tolerance)
    for name, (analytic, numeric) in zip(names, parameter_gradients(loss_fn, params, h)):
        result.per_parameter[name] = float(relative_error(analytic, numeric).max())
    return result
