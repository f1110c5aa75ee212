import numpy as np
import pytest

from pairmn.errors import InvalidInput
from pairmn.model import (LogNormalParams, MixedDirichletParams, PairMnParams,
                          lognormal_moments_mc, mixed_dirichlet_to_pairmn, multinomial_cov,
                          pairmn_moments, sample_overdispersed_dirichlet,
                          sample_pairmn_lognormal, sample_pairmn_mixed_dirichlet)
from pairmn.numkit import RngStream

PI1 = np.array([0.4, 0.3, 0.2, 0.1])
PI2 = np.array([0.3, 0.3, 0.25, 0.15])
ELL = np.array([0.25, 0.25, 0.3, 0.2])


def _md(rho=0.4, conc=False):
    if conc:
        return MixedDirichletParams.from_means(PI1, PI2, ELL, rho, 4.0, 9.0, 2.0, True)
    return MixedDirichletParams.from_means(PI1, PI2, ELL, rho, 0.2, 0.1, 0.3)


def _cov_pair(a, b):
    ca, cb = a - a.mean(0), b - b.mean(0)
    return ca.T @ cb / (len(a) - 1)


@pytest.mark.parametrize("conc", [False, True])
def test_mixed_dirichlet_closed_form_moments(conc):
    p = _md(conc=conc)
    mom = mixed_dirichlet_to_pairmn(p)
    m = 200_000
    _, _, (p1, p2) = sample_pairmn_mixed_dirichlet(p, (1, 1), RngStream(1), n=m, return_latent=True)
    assert np.allclose(p1.mean(0), mom.pi1, atol=4 * np.sqrt(np.diag(mom.sigma1).max() / m))
    assert np.allclose(p2.mean(0), mom.pi2, atol=4 * np.sqrt(np.diag(mom.sigma2).max() / m))
    # fourth moments are bounded by 1, so 5/sqrt(m) is a safe MC bound
    tol = 5 / np.sqrt(m)
    assert np.allclose(_cov_pair(p1, p1), mom.sigma1, atol=tol * 0.3)
    assert np.allclose(_cov_pair(p2, p2), mom.sigma2, atol=tol * 0.3)
    assert np.allclose(_cov_pair(p1, p2), mom.sigma12, atol=tol * 0.3)


def test_count_moments_monte_carlo():
    p = _md()
    mom = mixed_dirichlet_to_pairmn(p)
    n1, n2, m = 30, 50, 100_000
    x1, x2 = sample_pairmn_mixed_dirichlet(p, (n1, n2), RngStream(2), n=m)
    mean1, var1, mean2, var2, cross = pairmn_moments(mom, n1, n2)
    assert np.allclose(x1.mean(0), mean1, atol=4 * np.sqrt(np.diag(var1).max() / m))
    assert np.allclose(x2.mean(0), mean2, atol=4 * np.sqrt(np.diag(var2).max() / m))
    for emp, exact, scale in ((_cov_pair(x1, x1), var1, var1), (_cov_pair(x2, x2), var2, var2),
                              (_cov_pair(x1, x2), cross, np.maximum(var1, var2))):
        assert np.abs(emp - exact).max() < 0.05 * np.abs(np.diag(scale)).max()


def test_moments_rows_sum_to_zero():
    mom = mixed_dirichlet_to_pairmn(_md())
    for s in (mom.sigma1, mom.sigma2, mom.sigma12):
        assert np.allclose(s.sum(axis=0), 0, atol=1e-14)
        assert np.allclose(s.sum(axis=1), 0, atol=1e-14)


def test_overdispersed_dirichlet_vertex_and_zeros():
    rng = RngStream(3)
    v = sample_overdispersed_dirichlet([0.5, 0.0, 0.5], 1.0, rng, size=1000)
    assert np.all(v.sum(1) == 1) and np.all(np.isin(v, [0.0, 1.0]))
    assert np.all(v[:, 1] == 0)
    w = sample_overdispersed_dirichlet([0.5, 0.0, 0.5], 0.3, rng, size=1000)
    assert np.all(w[:, 1] == 0)
    assert np.allclose(w.sum(1), 1)
    with pytest.raises(InvalidInput):
        sample_overdispersed_dirichlet([0.5, 0.5], 1.5, rng)


def test_overdispersed_dirichlet_variance():
    a = np.array([0.2, 0.3, 0.5])
    draws = sample_overdispersed_dirichlet(a, 0.25, RngStream(6), size=200_000)
    assert np.allclose(np.cov(draws.T), 0.25 * multinomial_cov(a), atol=2e-3)


def test_parameter_validation():
    with pytest.raises(InvalidInput):
        MixedDirichletParams.from_means(PI1, PI2, np.array([0.7, 0.1, 0.1, 0.1]), 0.9, 0.1, 0.1, 0.1)
    with pytest.raises(InvalidInput):
        MixedDirichletParams(PI1, PI2, ELL, 3.0, 0.1, 0.1, 0.2)  # variance theta > 1
    assert MixedDirichletParams(PI1, PI2, ELL, 3.0, 5.0, 1.0, 0.2, True).variance_thetas() == (0.25, 1 / 6, 0.5)
    with pytest.raises(InvalidInput):
        PairMnParams(PI1, PI2, np.eye(4), np.zeros((4, 4)), np.zeros((4, 4)))
    with pytest.raises(InvalidInput):
        PairMnParams(PI1 * 1.01, PI2, np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4)))
    with pytest.raises(InvalidInput):
        LogNormalParams(np.zeros(3), np.zeros(3), np.ones(3), -np.ones(3), 0.1)
    with pytest.raises(InvalidInput):
        pairmn_moments(mixed_dirichlet_to_pairmn(_md()), 0, 5)


def test_lognormal_sampler_and_moments():
    p = LogNormalParams(np.array([1.0, 0.0, 0.5]), np.array([1.0, 0.0, 0.5]),
                        np.ones(3), np.ones(3), 0.6)
    x1, x2 = sample_pairmn_lognormal(p, ([100, 200], [150, 50]), RngStream(9))
    assert x1.shape == (2, 3)
    assert list(x1.sum(1)) == [100, 200] and list(x2.sum(1)) == [150, 50]
    mom = lognormal_moments_mc(p, RngStream(10), draws=50_000)
    assert np.allclose(mom.pi1, mom.pi2, atol=0.01)
    # positive latent correlation shows up on the diagonal of Sigma12
    assert np.all(np.diag(mom.sigma12) > 0)


def test_samplers_are_seeded():
    p = _md()
    a = sample_pairmn_mixed_dirichlet(p, (100, 100), RngStream(5), n=20)
    b = sample_pairmn_mixed_dirichlet(p, (100, 100), RngStream(5), n=20)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
