import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from timgen.numerics import (
    NumericalError,
    Rng,
    finite_diff_gradient,
    kl_diag_gaussian,
    masked_softmax,
    relative_error,
    sample_standard_normal,
    softmax,
    softplus,
)

# Frozen from a 40-digit mpmath evaluation of the defining formulas.
SOFTMAX_LN2 = (0.6666666666666666, 0.3333333333333333)
KL_SQRT2 = 0.1534264097200273
LN2 = 0.6931471805599453

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


def test_softmax_examples():
    assert torch.allclose(softmax([1.0, 1.0, 1.0]), torch.full((3,), 1 / 3), atol=1e-15)
    assert softmax([5.0]).tolist() == [1.0]
    out = softmax([math.log(2), 0.0])
    assert out[0].item() == pytest.approx(SOFTMAX_LN2[0], abs=1e-15)
    assert out[1].item() == pytest.approx(SOFTMAX_LN2[1], abs=1e-15)


def test_softmax_rejects_empty():
    with pytest.raises(ValueError):
        softmax([])


@given(st.lists(finite, min_size=1, max_size=12), finite)
def test_softmax_simplex_and_shift(v, c):
    p = softmax(v)
    assert bool((p >= 0).all())
    assert abs(p.sum().item() - 1.0) < 1e-12
    shifted = softmax([x + c for x in v])
    assert torch.max(torch.abs(p - shifted)).item() < 1e-12


def test_softmax_wide_spread():
    p = softmax([-500.0, 0.0, 500.0, 499.0])
    assert torch.isfinite(p).all()
    assert abs(p.sum().item() - 1.0) < 1e-12


def test_masked_softmax_matches_subset_exactly():
    scores = torch.tensor([0.3, -1.2, 2.5, 0.7])
    mask = torch.tensor([True, False, True, True])
    full = masked_softmax(scores, mask)
    sub = masked_softmax(scores[mask])
    assert full[1].item() == 0.0
    assert torch.equal(full[mask], sub)


def test_softplus_examples():
    assert softplus(0.0).item() == pytest.approx(LN2, abs=1e-15)
    small = softplus(-40.0).item()
    assert 0 < small < 1e-17
    assert softplus(40.0).item() == pytest.approx(40.0, abs=1e-15)
    assert math.isfinite(softplus(1e4).item())


@given(st.floats(min_value=-700, max_value=700))
def test_softplus_positive(x):
    assert softplus(x).item() > 0


def test_softplus_gradient_is_sigmoid():
    x = torch.tensor([-3.0, 0.0, 2.0, 50.0], requires_grad=True)
    softplus(x).sum().backward()
    assert torch.allclose(x.grad, torch.sigmoid(x.detach()), atol=1e-15)


def test_kl_examples():
    assert kl_diag_gaussian([0.0], [1.0]).item() == 0.0
    assert kl_diag_gaussian([1.0], [1.0]).item() == pytest.approx(0.5, abs=1e-15)
    assert kl_diag_gaussian([0.0], [math.sqrt(2)]).item() == pytest.approx(KL_SQRT2, abs=1e-12)


def test_kl_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        kl_diag_gaussian([0.0, 0.0], [1.0, 0.0])


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.05, 5)), min_size=1, max_size=8))
def test_kl_nonnegative(pairs):
    mu, sigma = zip(*pairs)
    assert kl_diag_gaussian(list(mu), list(sigma)).item() >= -1e-12


@pytest.mark.parametrize("delta", [1e-3, -1e-3, 0.1])
@pytest.mark.parametrize("which", ["mu", "sigma"])
def test_kl_strictly_positive_off_prior(delta, which):
    mu = np.zeros(3)
    sigma = np.ones(3)
    if which == "mu":
        mu[1] += delta
    else:
        sigma[1] += delta
    assert kl_diag_gaussian(mu, sigma).item() > 0


def test_normal_stream_determinism():
    a = sample_standard_normal(Rng(7), 16)
    b = sample_standard_normal(Rng(7), 16)
    assert torch.equal(a, b)
    assert not torch.equal(sample_standard_normal(Rng(1), 16), sample_standard_normal(Rng(2), 16))


def test_normal_moments():
    x = sample_standard_normal(Rng(123), 100_000)
    assert abs(x.mean().item()) <= 0.02
    assert abs(x.var().item() - 1.0) <= 0.05


def test_normal_rejects_zero():
    with pytest.raises(ValueError):
        sample_standard_normal(Rng(0), 0)


def test_rng_counter_advances():
    r = Rng(3)
    r.normal(5)
    assert r.counter == 6


def test_finite_diff_examples():
    g = finite_diff_gradient(lambda p: p[0] ** 2, [3.0], 1e-5)
    assert g[0] == pytest.approx(6.0, abs=1e-6)
    g = finite_diff_gradient(lambda p: 4.2, [1.0, -2.0], 1e-5)
    assert np.all(np.abs(g) <= 1e-9)
    g = finite_diff_gradient(lambda p: float(np.sum(p)), [1.0, 2.0, 3.0], 1e-5)
    assert np.allclose(g, 1.0, atol=1e-9)


def test_finite_diff_propagates_nonfinite():
    with pytest.raises(NumericalError):
        finite_diff_gradient(lambda p: math.inf, [0.0])


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_gradient(lambda p: 0.0, [0.0], 0.0)


def test_relative_error_formula():
    assert relative_error(1e-3, 2e-3) == pytest.approx(1e-3)
    assert relative_error(100.0, 101.0) == pytest.approx(1 / 101)


@settings(max_examples=25)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=5))
def test_autograd_softmax_matches_finite_differences(v):
    w = np.linspace(-1, 1, len(v))

    def f(p):
        return float((softmax(p) * torch.from_numpy(w)).sum())

    x = torch.tensor(v, requires_grad=True)
    (softmax(x) * torch.from_numpy(w)).sum().backward()
    numeric = finite_diff_gradient(f, v, 1e-5)
    assert relative_error(x.grad.numpy(), numeric).max() < 1e-8
