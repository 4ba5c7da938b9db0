import numpy as np
import pytest
from scipy import stats

from privcdr.disentangle import DisentangledBundle
from privcdr.numeric import Parameter, Tape, Tensor, reduce_sum
from privcdr.privacy import PrivacyConfig, laplace_cdf, obfuscate, sample_laplace


def bundle(rng, m=50, d=8, leaf=False):
    make = (lambda name: Parameter(rng.standard_normal((m, d)), name)) if leaf else \
        (lambda name: Tensor(rng.standard_normal((m, d))))
    return DisentangledBundle("A", make("s"), make("c"), make("sa"), make("ca"))


def test_zero_scale_zero_noise():
    assert not sample_laplace((3, 4), 0.0, 1).any()


def test_negative_scale_rejected():
    with pytest.raises(ValueError):
        sample_laplace((2,), -0.1, 0)
    with pytest.raises(ValueError):
        PrivacyConfig(lam=-1.0)
    with pytest.raises(ValueError):
        PrivacyConfig(mu=0.5)


def test_small_scale_moments():
    x = sample_laplace(10**6, 0.01, 0)
    assert abs(x.mean()) < 1e-4
    assert abs(np.abs(x).mean() - 0.01) < 0.01 * 0.01


def test_unit_scale_variance():
    x = sample_laplace(10**6, 1.0, 1)
    assert abs(x.var() - 2.0) < 0.02 * 2.0


def test_ks_against_laplace_cdf():
    x = sample_laplace(10**5, 0.3, 2)
    assert stats.kstest(x, lambda v: laplace_cdf(v, 0.3)).pvalue > 0.01
    # second route: scipy's own Laplace distribution
    assert stats.kstest(x, stats.laplace(scale=0.3).cdf).pvalue > 0.01


def test_cdf_matches_scipy():
    grid = np.linspace(-3, 3, 61)
    assert np.allclose(laplace_cdf(grid, 0.7), stats.laplace(scale=0.7).cdf(grid), atol=1e-12)


def test_obfuscate_zero_is_identity():
    b = bundle(np.random.default_rng(0))
    q = obfuscate(b, PrivacyConfig(lam=0.0), 0, 0)
    for name in ("common", "specific", "common_aug", "specific_aug"):
        assert np.array_equal(getattr(q, name).data, getattr(b, name).data)
    assert q.lambda_used == 0.0


def test_obfuscate_off_passes_through():
    b = bundle(np.random.default_rng(0))
    q = obfuscate(b, PrivacyConfig(lam=None), 0)
    assert q.common is b.common and q.lambda_used is None


def test_obfuscate_noise_scale():
    b = bundle(np.random.default_rng(1), m=500, d=64)
    q = obfuscate(b, PrivacyConfig(lam=0.01), 3, 1)
    for name in ("common", "specific", "common_aug", "specific_aug"):
        diff = getattr(q, name).data - getattr(b, name).data
        assert abs(np.abs(diff).mean() - 0.01) < 0.01 * 0.01


def test_noise_independent_across_matrices():
    b = bundle(np.random.default_rng(2), m=1000, d=100)
    q = obfuscate(b, PrivacyConfig(lam=1.0), 5)
    ns = (q.specific.data - b.specific.data).ravel()
    nc = (q.common.data - b.common.data).ravel()
    assert abs(np.corrcoef(ns, nc)[0, 1]) < 0.01


def test_noise_fresh_per_stream():
    b = bundle(np.random.default_rng(3))
    cfg = PrivacyConfig(lam=0.1)
    q1, q2, q3 = obfuscate(b, cfg, 0, 1), obfuscate(b, cfg, 0, 2), obfuscate(b, cfg, 0, 1)
    assert not np.array_equal(q1.common.data, q2.common.data)
    assert np.array_equal(q1.common.data, q3.common.data)


def test_gradient_passes_unchanged():
    b = bundle(np.random.default_rng(4), leaf=True)
    with Tape() as tape:
        q = obfuscate(b, PrivacyConfig(lam=0.5), 0)
        loss = reduce_sum(q.common)
    tape.backward(loss)
    assert np.array_equal(b.common.grad, np.ones_like(b.common.data))
    assert b.specific.grad is None or not b.specific.grad.any()
