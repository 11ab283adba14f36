"""Per-modality attention and learnable weighted fusion.

For each modality m the projected features of the steps where m is present
form their own sequence; causal self-attention over it gives h_m at each
cutoff (the output row of the latest present step). Modalities are then
weighted by alpha_m = softmax_m(w_m . h_m), restricted to the modalities
available at that cutoff, and the fused vector is concatenated with the
temporal state and mapped by W. With ``pooled`` the attention is replaced by
an order-invariant mean over present steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import torch
from torch import nn

from .numerics import DTYPE, masked_softmax
from .providers import MODALITIES
from .temporal import causal_mask, init_linear, scaled_dot_attention


class ModalityBranch(nn.Module):
    def __init__(self, d_in: int, d_model: int, generator: torch.Generator):
        super().__init__()
        self.proj = init_linear(d_in, d_model, generator)
        self.W_Q = init_linear(d_model, d_model, generator, bias=False)
        self.W_K = init_linear(d_model, d_model, generator, bias=False)
        self.W_V = init_linear(d_model, d_model, generator, bias=False)
        bound = 1.0 / math.sqrt(d_model)
        self.w = nn.Parameter((torch.rand(d_model, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound)

    def attend(self, projected: torch.Tensor, present: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Causal self-attention over projected rows ``(..., T, d_model)``."""
        return scaled_dot_attention(self.W_Q(projected), self.W_K(projected), self.W_V(projected),
                                    causal=True, key_mask=present)


def _prefix_mean(v: torch.Tensor, present: torch.Tensor) -> torch.Tensor:
    """Mean of the present rows 0..t at every cutoff t (zeros before the first)."""
    T = v.shape[-2]
    weights = (causal_mask(T) & present.unsqueeze(-2)).to(v.dtype)
    return (weights @ v) / weights.sum(dim=-1, keepdim=True).clamp(min=1.0)


class ModalityFusion(nn.Module):
    def __init__(self, modality_dims: Mapping[str, int], d_model: int, generator: Optional[torch.Generator] = None,
                 pooled: bool = False):
        super().__init__()
        self.pooled = pooled
        g = generator or torch.Generator().manual_seed(0)
        self.d_model = d_model
        self.branches = nn.ModuleDict({m: ModalityBranch(modality_dims[m], d_model, g) for m in MODALITIES})
        self.W = init_linear(2 * d_model, d_model, g, bias=False)

    @property
    def scorer(self) -> torch.Tensor:
        """Stacked w_m, shape ``(4, d_model)``."""
        return torch.stack([self.branches[m].w for m in MODALITIES])

    def contexts(self, modal: Mapping[str, torch.Tensor], present: torch.Tensor):
        """h_m at every cutoff.

        ``modal[m]`` is ``(B, T, d_m)`` and ``present`` is ``(B, T, 4)``.
        Returns ``h`` of shape ``(B, T, 4, d_model)`` (zeros where absent) and
        the availability mask ``(B, T, 4)``: modality m is available at cutoff
        t when it was present at some step <= t.
        """
        B, T, _ = present.shape
        branches = [self.branches[m] for m in MODALITIES]
        projected = [br.proj(modal[m]) for br, m in zip(branches, MODALITIES)]
        # all modalities share d_model, so one batched attention call covers them
        V = torch.stack([br.W_V(p) for br, p in zip(branches, projected)], dim=1)  # (B, M, T, d)
        key_mask = present.transpose(1, 2)
        if self.pooled:
            # order-free context for the static baseline
            out = _prefix_mean(V, key_mask)
        else:
            Q = torch.stack([br.W_Q(p) for br, p in zip(branches, projected)], dim=1)
            K = torch.stack([br.W_K(p) for br, p in zip(branches, projected)], dim=1)
            out = scaled_dot_attention(Q, K, V, causal=True, key_mask=key_mask)
        steps = torch.arange(T).view(1, 1, T).expand(B, len(MODALITIES), T)
        last = torch.where(key_mask, steps, torch.full_like(steps, -1)).cummax(dim=2).values
        avail = last >= 0
        idx = last.clamp(min=0).unsqueeze(-1).expand(-1, -1, -1, self.d_model)
        h = torch.gather(out, 2, idx)
        h = torch.where(avail.unsqueeze(-1), h, torch.zeros_like(h))
        return h.transpose(1, 2), avail.transpose(1, 2)

    def scores(self, h: torch.Tensor) -> torch.Tensor:
        return (h * self.scorer).sum(dim=-1)

    def forward(self, z: torch.Tensor, modal: Mapping[str, torch.Tensor], present: torch.Tensor) -> "FusedInterest":
        h, avail = self.contexts(modal, present)
        alpha = alpha_from_scores(self.scores(h), avail)
        z_multi = fuse_multi(h, alpha)
        return FusedInterest(z_multi=z_multi, alpha=alpha, z_final=self.W(torch.cat([z, z_multi], dim=-1)))


@dataclass
class FusedInterest:
    z_multi: torch.Tensor
    alpha: torch.Tensor
    z_final: torch.Tensor


def alpha_from_scores(scores: torch.Tensor, available: torch.Tensor) -> torch.Tensor:
    """Softmax over available modalities; unavailable ones get exactly 0."""
    if not bool(available.any(dim=-1).all()):
        raise ValueError("no modality present")
    return masked_softmax(scores, available, dim=-1)


def modality_context(seq_m: torch.Tensor, branch: ModalityBranch) -> torch.Tensor:
    """h_m for one modality from its projected rows ``(t, d_model)``: the last attention output."""
    if seq_m.shape[0] == 0:
        raise ValueError("modality has no present steps")
    return branch.attend(seq_m)[-1]


def modality_weights(h: Mapping[str, Optional[torch.Tensor]], fusion: ModalityFusion) -> torch.Tensor:
    """alpha over MODALITIES order from a map of per-modality contexts (None = absent)."""
    available = torch.tensor([h.get(m) is not None for m in MODALITIES])
    if not bool(available.any()):
        raise ValueError("no modality present")
    stacked = torch.stack([h[m] if h.get(m) is not None else torch.zeros(fusion.d_model, dtype=DTYPE)
                           for m in MODALITIES])
    return alpha_from_scores(fusion.scores(stacked), available)


def fuse_multi(h, alpha: torch.Tensor) -> torch.Tensor:
    """Convex combination sum_m alpha_m h_m.

    ``h`` is either ``(..., M, d)`` aligned with ``alpha`` ``(..., M)`` or a
    map over MODALITIES (absent entries may be None when their weight is 0).
    """
    if isinstance(h, Mapping):
        ref = next(v for v in h.values() if v is not None)
        h = torch.stack([h[m] if h.get(m) is not None else torch.zeros_like(ref) for m in MODALITIES])
    weighted = alpha.unsqueeze(-1) * h
    total = weighted.select(-2, 0)
    for j in range(1, weighted.shape[-2]):
        total = total + weighted.select(-2, j)
    return total


def fuse_final(z: torch.Tensor, z_multi: torch.Tensor, fusion: ModalityFusion) -> torch.Tensor:
    if z.shape[-1] != fusion.d_model or z_multi.shape[-1] != fusion.d_model:
        raise ValueError(f"expected vectors of dim {fusion.d_model}, got {z.shape[-1]} and {z_multi.shape[-1]}")
    return fusion.W(torch.cat([z, z_multi], dim=-1))
