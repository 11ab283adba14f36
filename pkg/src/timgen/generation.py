"""VAE generation head: latent encoding, reparameterized sampling, decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .numerics import DTYPE, Rng, kl_diag_gaussian, sample_standard_normal, softmax, softplus
from .temporal import init_linear


@dataclass
class GeneratedOutput:
    content: torch.Tensor
    score: torch.Tensor
    class_logits: torch.Tensor
    class_probs: torch.Tensor


class VaeHead(nn.Module):
    def __init__(self, d_model: int, d_latent: int, d_candidate: int, n_classes: int, hidden: int = 64,
                 sigma_floor: float = 1e-6, generator: Optional[torch.Generator] = None):
        super().__init__()
        g = generator or torch.Generator().manual_seed(0)
        self.d_latent = d_latent
        self.d_candidate = d_candidate
        self.sigma_floor = sigma_floor
        self.mu = init_linear(d_model, d_latent, g)
        self.sigma = init_linear(d_model, d_latent, g)
        self.hidden = init_linear(d_latent + d_candidate, hidden, g)
        self.content = init_linear(hidden, d_candidate, g)
        self.score = init_linear(hidden, 1, g)
        self.classes = init_linear(hidden, n_classes, g)


def encode_latent(z_final: torch.Tensor, head: VaeHead) -> tuple[torch.Tensor, torch.Tensor]:
    """mu = W_mu z + b_mu; sigma = softplus(W_sigma z + b_sigma), floored."""
    mu = head.mu(z_final)
    sigma = torch.clamp(softplus(head.sigma(z_final)), min=head.sigma_floor)
    return mu, sigma


def reparameterize(mu: torch.Tensor, sigma: torch.Tensor, rng: Optional[Rng] = None,
                   eps: Optional[torch.Tensor] = None) -> torch.Tensor:
    """mu + sigma * eps. With neither ``rng`` nor ``eps`` this is inference mode (eps = 0)."""
    if eps is None:
        if rng is None:
            return mu
        eps = sample_standard_normal(rng, mu.numel()).view(mu.shape)
    return mu + sigma * eps


def decode(latent: torch.Tensor, candidate: torch.Tensor, head: VaeHead) -> GeneratedOutput:
    if latent.shape[-1] != head.d_latent or candidate.shape[-1] != head.d_candidate:
        raise ValueError(f"decoder expects latent dim {head.d_latent} and candidate dim {head.d_candidate}, "
                         f"got {latent.shape[-1]} and {candidate.shape[-1]}")
    hidden = torch.tanh(head.hidden(torch.cat([latent, candidate.to(DTYPE)], dim=-1)))
    logits = head.classes(hidden)
    return GeneratedOutput(
        content=head.content(hidden),
        score=head.score(hidden).squeeze(-1),
        class_logits=logits,
        class_probs=softmax(logits, dim=-1),
    )


def reconstruction_error(content: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    diff = content - target
    return (diff * diff).sum(dim=-1)


def vae_loss(output: GeneratedOutput, target_content: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Negative ELBO: squared reconstruction error plus KL to the standard normal."""
    return reconstruction_error(output.content, target_content) + kl_diag_gaussian(mu, sigma)
