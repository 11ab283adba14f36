"""Float64 numerical kernel shared by every layer of the model.

Dense tensors are ``torch.float64`` throughout and reverse-mode gradients come
from torch autograd. This module adds the handful of primitives whose exact
behaviour the rest of the package depends on: an overflow-safe softmax with
masking, a symmetric softplus, the closed-form diagonal-Gaussian KL, a seeded
Gaussian stream, and a central finite-difference oracle used to audit autograd.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Callable, Sequence

import numpy as np
import torch

DTYPE = torch.float64

torch.set_default_dtype(DTYPE)


class NumericalError(FloatingPointError):
    """Raised when a computation produces NaN or infinity."""


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _ordered_sum(x: torch.Tensor, dim: int) -> torch.Tensor:
    # Left-to-right accumulation: adding an exact zero never perturbs the
    # running sum, so masked entries leave the result bit-identical to the
    # sum over the unmasked subset.
    parts = x.unbind(dim)
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return total


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor | None = None, dim: int = -1) -> torch.Tensor:
    """Softmax along ``dim`` restricted to entries where ``mask`` is true.

    Masked entries receive weight exactly 0. Every slice along ``dim`` must
    have at least one unmasked entry.
    """
    scores = as_tensor(scores)
    if scores.numel() == 0 or scores.shape[dim] == 0:
        raise ValueError("softmax of an empty vector")
    if mask is None:
        shift = scores.amax(dim=dim, keepdim=True)
        e = torch.exp(scores - shift)
    else:
        mask = mask.to(torch.bool).expand_as(scores)
        if not bool(mask.any(dim=dim).all()):
            raise ValueError("softmax slice with every entry masked")
        neg_inf = torch.full_like(scores, -math.inf)
        shift = torch.where(mask, scores, neg_inf).amax(dim=dim, keepdim=True).detach()
        # where() on the input keeps masked logits out of exp(); masked
        # positions then contribute exact zeros and zero gradient.
        safe = torch.where(mask, scores - shift, torch.zeros_like(scores))
        e = torch.where(mask, torch.exp(safe), torch.zeros_like(scores))
    return e / _ordered_sum(e, dim).unsqueeze(dim)


def softmax(v, dim: int = -1) -> torch.Tensor:
    """Overflow-safe softmax (max-subtracted)."""
    return masked_softmax(as_tensor(v), None, dim)


class _Softplus(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        # max(x, 0) + log1p(exp(-|x|)) is the symmetric form; it never
        # overflows and stays strictly positive for finite x.
        return torch.clamp(x, min=0.0) + torch.log1p(torch.exp(-torch.abs(x)))

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * torch.sigmoid(x)


def softplus(x) -> torch.Tensor:
    """ln(1 + e^x), stable for any finite input."""
    return _Softplus.apply(as_tensor(x))


def kl_diag_gaussian(mu, sigma) -> torch.Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)) in closed form.

    Reduces over the last dimension, so batched ``(..., d)`` inputs give a
    ``(...)`` result.
    """
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    if mu.shape != sigma.shape:
        raise ValueError(f"mu shape {tuple(mu.shape)} != sigma shape {tuple(sigma.shape)}")
    if bool((sigma <= 0).any()):
        raise ValueError("sigma must be strictly positive")
    var = sigma * sigma
    return 0.5 * (var + mu * mu - 1.0 - torch.log(var)).sum(dim=-1)


def derive_seed(seed: int, *keys) -> int:
    """Stable 63-bit seed derived from a parent seed and arbitrary keys."""
    text = ":".join([str(int(seed))] + [str(k) for k in keys])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << 63) - 1)


class Rng:
    """Seeded random stream.

    Uniform draws come from PCG64; Gaussian draws use the Box-Muller
    transform on pairs of uniforms, so the normal stream is a fixed function
    of the uniform stream. ``counter`` counts uniforms consumed.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.counter = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, n: int) -> np.ndarray:
        out = self._gen.random(n)
        self.counter += n
        return out

    def normal(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("sample count must be >= 1")
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1], keeps log finite
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]

    def integers(self, low: int, high: int, size=None):
        self.counter += 1 if size is None else int(np.prod(size))
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += n
        return self._gen.permutation(n)

    def spawn(self, *keys) -> "Rng":
        return Rng(derive_seed(self.seed, *keys))


def sample_standard_normal(rng: Rng, n: int) -> torch.Tensor:
    if n < 1:
        raise ValueError("sample count must be >= 1")
    return torch.from_numpy(rng.normal(n))


def finite_diff_gradient(f: Callable[[np.ndarray], float], p: Sequence[float], h: float = 1e-5) -> np.ndarray:
    """Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every i."""
    if h <= 0:
        raise ValueError("step h must be positive")
    p = np.array(p, dtype=np.float64)
    grad = np.empty_like(p)
    for i in range(p.size):
        orig = p.flat[i]
        p.flat[i] = orig + h
        up = float(f(p))
        p.flat[i] = orig - h
        down = float(f(p))
        p.flat[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericalError(f"non-finite function value at coordinate {i}")
        grad.flat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(a, b) -> np.ndarray:
    """|a - b| / max(1, |a|, |b|), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def check_finite(t: torch.Tensor, what: str) -> None:
    if not bool(torch.isfinite(t).all()):
        raise NumericalError(f"non-finite values in {what}")
