"""Causal Transformer producing per-step interest states z_1..z_T."""

from __future__ import annotations

import math
from typing import Optional

import torch
from torch import nn

from .numerics import DTYPE, masked_softmax


def init_linear(fan_in: int, fan_out: int, generator: torch.Generator, bias: bool = True) -> nn.Linear:
    """Linear map with weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) and zero bias."""
    layer = nn.Linear(fan_in, fan_out, bias=bias, dtype=DTYPE)
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        layer.weight.copy_((torch.rand(fan_out, fan_in, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound)
        if bias:
            layer.bias.zero_()
    return layer


def causal_mask(n: int) -> torch.Tensor:
    return torch.ones(n, n, dtype=torch.bool).tril()


def scaled_dot_attention(Q: torch.Tensor, K: torch.Tensor, V: torch.Tensor, causal: bool = True,
                         key_mask: Optional[torch.Tensor] = None, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k)) V over the last two dimensions.

    ``key_mask`` (``(..., n)`` bool) hides keys in addition to the causal
    mask. A query row with no visible key falls back to attending to itself;
    callers must not read such rows.
    """
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2] or (causal and Q.shape[-2] != K.shape[-2]):
        raise ValueError(f"shape mismatch: Q{tuple(Q.shape)} K{tuple(K.shape)} V{tuple(V.shape)}")
    d_k = Q.shape[-1]
    if d_k < 1:
        raise ValueError("d_k must be >= 1")
    n_q, n_k = Q.shape[-2], K.shape[-2]
    logits = Q @ K.transpose(-1, -2) / math.sqrt(d_k)
    mask = None
    if causal:
        mask = causal_mask(n_k)
    if key_mask is not None:
        km = key_mask.unsqueeze(-2)
        mask = km if mask is None else (mask & km)
    if mask is not None:
        mask = mask.expand(logits.shape)
        if n_q == n_k:
            empty = ~mask.any(dim=-1, keepdim=True)
            mask = mask | (empty & torch.eye(n_q, dtype=torch.bool))
    weights = masked_softmax(logits, mask, dim=-1)
    out = weights @ V
    return (out, weights) if return_weights else out


def sinusoid_positions(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=DTYPE).unsqueeze(1)
    k = torch.arange((d + 1) // 2, dtype=DTYPE)
    angles = pos * (10000.0 ** (-2.0 * k / d))
    out = torch.zeros(n, d, dtype=DTYPE)
    out[:, 0::2] = torch.sin(angles)[:, : (d + 1) // 2]
    out[:, 1::2] = torch.cos(angles)[:, : d // 2]
    return out


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, generator: torch.Generator):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.q = init_linear(d_model, d_model, generator)
        self.k = init_linear(d_model, d_model, generator)
        self.v = init_linear(d_model, d_model, generator)
        self.out = init_linear(d_model, d_model, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, _ = x.shape

        def heads(t):
            return t.view(B, T, self.n_heads, self.d_k).transpose(1, 2)

        ctx = scaled_dot_attention(heads(self.q(x)), heads(self.k(x)), heads(self.v(x)), causal=True)
        return self.out(ctx.transpose(1, 2).reshape(B, T, self.n_heads * self.d_k))


class Block(nn.Module):
    """Pre-norm attention and feed-forward sublayers, each with a residual."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, generator: torch.Generator):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model, dtype=DTYPE)
        self.attn = MultiHeadSelfAttention(d_model, n_heads, generator)
        self.ln2 = nn.LayerNorm(d_model, dtype=DTYPE)
        self.ff1 = init_linear(d_model, d_ff, generator)
        self.ff2 = init_linear(d_ff, d_model, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff2(torch.nn.functional.gelu(self.ff1(self.ln2(x))))


class CausalTransformer(nn.Module):
    def __init__(self, d_in: int, d_model: int = 32, n_heads: int = 2, n_layers: int = 2, d_ff: int = 64,
                 positional: str = "none", generator: Optional[torch.Generator] = None):
        super().__init__()
        if positional not in ("none", "extra"):
            raise ValueError(f"positional must be 'none' or 'extra', got {positional!r}")
        g = generator or torch.Generator().manual_seed(0)
        self.d_model = d_model
        self.positional = positional
        self.input_proj = init_linear(d_in, d_model, g)
        self.blocks = nn.ModuleList([Block(d_model, n_heads, d_ff, g) for _ in range(n_layers)])
        self.ln_f = nn.LayerNorm(d_model, dtype=DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``(B, T, D) -> (B, T, d_model)``; row t sees rows <= t only."""
        h = self.input_proj(x)
        if self.positional == "extra":
            h = h + sinusoid_positions(h.shape[1], self.d_model)
        for block in self.blocks:
            h = block(h)
        return self.ln_f(h)


def transformer_forward(X: torch.Tensor, model: CausalTransformer, t_max: int) -> torch.Tensor:
    """Interest states for one sequence ``X`` of shape ``(T, D)``.

    The input is zero-padded to ``t_max`` so every call runs the same kernels
    on the same shapes; with the causal mask this makes row t bit-identical
    no matter how many later rows exist.
    """
    T = X.shape[0]
    if T == 0:
        raise ValueError("empty sequence")
    if T > t_max:
        raise ValueError(f"sequence length {T} exceeds t_max={t_max}")
    padded = torch.zeros(1, t_max, X.shape[1], dtype=DTYPE)
    padded[0, :T] = X
    return model(padded)[0, :T]


def last_state(states: torch.Tensor) -> torch.Tensor:
    if states.shape[0] < 1:
        raise ValueError("no interest states")
    return states[-1]


def prefix_mean_pool(p: torch.Tensor, present: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean of the (present) rows 0..t for every cutoff t, invariant to row order.

    Each column is sorted before summation so any permutation of the rows
    yields a bit-identical sum; masked-out rows contribute exact zeros. A
    cutoff with no present row yields zeros.
    """
    B, T, d = p.shape
    visible = causal_mask(T).view(1, T, T, 1)
    if present is not None:
        visible = visible & present.view(B, 1, T, 1)
    expanded = torch.where(visible, p.unsqueeze(1), torch.zeros((), dtype=p.dtype))
    total = expanded.sort(dim=2).values.sum(dim=2)
    counts = visible.sum(dim=2).to(p.dtype)
    return total / counts.clamp(min=1.0)
