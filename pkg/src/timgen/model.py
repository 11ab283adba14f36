"""The full pipeline: encode -> interest states -> fusion -> VAE head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .config import TrainConfig
from .encoding import EncodingParams, SequenceBatch, SequenceFeatures, collate
from .fusion import ModalityFusion
from .generation import GeneratedOutput, VaeHead, decode, encode_latent, reparameterize
from .numerics import DTYPE
from .temporal import CausalTransformer, init_linear, prefix_mean_pool


class StaticPooling(nn.Module):
    """Order-invariant replacement for the temporal layer: mean of projected rows."""

    def __init__(self, d_in: int, d_model: int, generator: torch.Generator):
        super().__init__()
        self.input_proj = init_linear(d_in, d_model, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return prefix_mean_pool(self.input_proj(x))


@dataclass(frozen=True)
class CandidateItem:
    item_id: str
    features: np.ndarray
    class_label: int = 0
    score_label: float = 0.0


@dataclass
class Examples:
    """Supervised (cutoff, target) pairs of a batch, flattened to N rows."""

    batch_index: torch.Tensor
    cutoff: torch.Tensor
    target: torch.Tensor
    candidate: torch.Tensor  # (N, d_cand)
    score: torch.Tensor
    label: torch.Tensor
    user_ids: list[str]

    def __len__(self) -> int:
        return len(self.user_ids)


def example_pairs(length: int) -> list[tuple[int, int]]:
    """Row ``c`` predicts row ``c + 1``; a single-step history predicts itself."""
    if length == 1:
        return [(0, 0)]
    return [(c, c + 1) for c in range(length - 1)]


def build_examples(features: Sequence[SequenceFeatures]) -> Examples:
    b_idx, cut, tgt, cand, score, label, users = [], [], [], [], [], [], []
    for b, f in enumerate(features):
        for c, t in example_pairs(len(f)):
            b_idx.append(b)
            cut.append(c)
            tgt.append(t)
            cand.append(f.candidate(t))
            score.append(f.scores[t])
            label.append(f.labels[t])
            users.append(f.user_id)
    return Examples(
        batch_index=torch.tensor(b_idx, dtype=torch.int64),
        cutoff=torch.tensor(cut, dtype=torch.int64),
        target=torch.tensor(tgt, dtype=torch.int64),
        candidate=torch.from_numpy(np.stack(cand)),
        score=torch.tensor(score, dtype=DTYPE),
        label=torch.tensor(label, dtype=torch.int64),
        user_ids=users,
    )


@dataclass
class PipelineOutput:
    z: torch.Tensor  # (B, T, d_model) interest states at every cutoff
    alpha: torch.Tensor  # (B, T, 4)
    z_final: torch.Tensor  # (B, T, d_model)


@dataclass
class HeadOutput:
    mu: torch.Tensor
    sigma: torch.Tensor
    latent: torch.Tensor
    output: GeneratedOutput
    alpha: torch.Tensor


class TIMGen(nn.Module):
    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        g = torch.Generator().manual_seed(cfg.seed)
        enc = cfg.encoder_config()
        self.encoder = EncodingParams(enc, g)
        if cfg.variant == "temporal":
            self.interest = CausalTransformer(enc.input_dim, cfg.d_model, cfg.n_heads, cfg.n_layers, cfg.d_ff,
                                              cfg.positional, g)
        else:
            self.interest = StaticPooling(enc.input_dim, cfg.d_model, g)
        self.fusion = ModalityFusion(enc.modality_dims, cfg.d_model, g, pooled=cfg.variant == "static")
        self.head = VaeHead(cfg.d_model, cfg.d_latent, enc.d_candidate, cfg.n_classes, cfg.decoder_hidden,
                            cfg.sigma_floor, g)

    def collate(self, features: Sequence[SequenceFeatures]) -> SequenceBatch:
        return collate(features, self.cfg.t_max)

    def pipeline(self, batch: SequenceBatch) -> PipelineOutput:
        x = self.encoder(batch, zero_modalities=not self.cfg.modality_in_input)
        z = self.interest(x)
        fused = self.fusion(z, batch.modal, batch.present)
        return PipelineOutput(z=z, alpha=fused.alpha, z_final=fused.z_final)

    def generate(self, pipe: PipelineOutput, ex: Examples, eps: Optional[torch.Tensor] = None) -> HeadOutput:
        """Decode every example; ``eps`` of shape ``(N, d_latent)`` or None for eps = 0."""
        z_final = pipe.z_final[ex.batch_index, ex.cutoff]
        mu, sigma = encode_latent(z_final, self.head)
        latent = reparameterize(mu, sigma, eps=eps)
        out = decode(latent, ex.candidate, self.head)
        return HeadOutput(mu, sigma, latent, out, pipe.alpha[ex.batch_index, ex.cutoff])
