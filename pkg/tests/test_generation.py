import math

import pytest
import torch

from timgen.generation import (
    GeneratedOutput,
    VaeHead,
    decode,
    encode_latent,
    reparameterize,
    vae_loss,
)
from timgen.numerics import Rng

LN2 = 0.6931471805599453


@pytest.fixture()
def head():
    return VaeHead(5, 3, 4, 2, hidden=6, generator=torch.Generator().manual_seed(0))


def test_zero_weights_give_prior_like_latent(head):
    with torch.no_grad():
        for layer in (head.mu, head.sigma):
            layer.weight.zero_()
            layer.bias.zero_()
    mu, sigma = encode_latent(torch.randn(5, dtype=torch.float64), head)
    assert mu.tolist() == [0.0, 0.0, 0.0]
    assert sigma.tolist() == pytest.approx([LN2] * 3, abs=1e-15)


def test_reparameterize_modes():
    mu = torch.tensor([0.5, -1.0], dtype=torch.float64)
    sigma = torch.tensor([2.0, 3.0], dtype=torch.float64)
    assert torch.equal(reparameterize(mu, sigma), mu)
    assert torch.equal(reparameterize(mu, sigma, eps=torch.zeros(2, dtype=torch.float64)), mu)
    tiny = torch.full((2,), 1e-300, dtype=torch.float64)
    assert torch.allclose(reparameterize(mu, tiny, Rng(1)), mu, atol=1e-290)
    assert torch.equal(reparameterize(mu, sigma, Rng(4)), reparameterize(mu, sigma, Rng(4)))


def test_gradient_flows_through_mu_and_sigma():
    mu = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    sigma = torch.ones(3, dtype=torch.float64, requires_grad=True)
    eps = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64)
    reparameterize(mu, sigma, eps=eps).sum().backward()
    assert mu.grad.tolist() == [1.0, 1.0, 1.0]
    assert sigma.grad.tolist() == eps.tolist()


def test_decode_is_pure_and_checks_dims(head):
    latent = torch.randn(3, dtype=torch.float64)
    cand = torch.randn(4, dtype=torch.float64)
    a, b = decode(latent, cand, head), decode(latent, cand, head)
    assert torch.equal(a.content, b.content) and torch.equal(a.class_probs, b.class_probs)
    assert abs(a.class_probs.sum().item() - 1.0) < 1e-12
    with pytest.raises(ValueError):
        decode(latent, cand[:3], head)


def _output(content):
    z = torch.zeros(1, dtype=torch.float64)
    return GeneratedOutput(content, z, z, z)


def test_vae_loss_cases():
    x = torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)
    mu, sigma = torch.zeros(2, dtype=torch.float64), torch.ones(2, dtype=torch.float64)
    assert vae_loss(_output(x.clone()), x, mu, sigma).item() == 0.0
    off = x.clone()
    off[1] += 2.0
    assert vae_loss(_output(off), x, mu, sigma).item() == 4.0
    assert vae_loss(_output(x), x, mu + 1, sigma).item() == pytest.approx(1.0)
    assert math.isfinite(vae_loss(_output(x), x, mu, sigma * 3).item())
