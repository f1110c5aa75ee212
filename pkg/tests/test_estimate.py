import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairmn.errors import DegenerateInput, InsufficientSamples, InvalidInput
from pairmn.estimate import (PairedCounts, dm_theta_moment, group_blocks, lemma1_covariance,
                             pooled_pi, unpaired_covariance)
from pairmn.model import MixedDirichletParams, sample_pairmn_mixed_dirichlet
from pairmn.numkit import RngStream

from oracles import oracle_sigma


def _data(seed, n=15, d=4, total=60):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(d), size=n)
    x1 = np.array([rng.multinomial(rng.integers(total // 2, total), pp) for pp in p])
    x2 = np.array([rng.multinomial(rng.integers(total // 2, total), pp) for pp in p])
    return x1, x2


@pytest.mark.parametrize("seed", range(5))
def test_matches_loop_oracle(seed):
    x1, x2 = _data(seed)
    est = lemma1_covariance(PairedCounts(x1, x2))
    ref, s12 = oracle_sigma(x1, x2)
    assert np.allclose(est.sigma_hat, ref, rtol=1e-10, atol=1e-15)
    assert np.allclose(est.sigma12, s12, rtol=1e-10, atol=1e-15)


int_rows = st.integers(3, 12).flatmap(
    lambda n: st.integers(2, 6).flatmap(
        lambda d: st.tuples(
            st.lists(st.lists(st.integers(0, 40), min_size=d, max_size=d), min_size=n, max_size=n),
            st.lists(st.lists(st.integers(0, 40), min_size=d, max_size=d), min_size=n, max_size=n))))


def _usable(x1, x2):
    x1, x2 = np.array(x1), np.array(x2)
    if np.any(x1.sum(1) == 0) or np.any(x2.sum(1) == 0):
        return None
    if x1.sum() == len(x1) or x2.sum() == len(x2):
        return None
    return x1, x2


@settings(max_examples=150, deadline=None)
@given(int_rows)
def test_symmetric_and_annihilates_ones(xs):
    xs = _usable(*xs)
    if xs is None:
        return
    est = lemma1_covariance(PairedCounts(*xs))
    s = est.sigma_hat
    scale = max(np.abs(s).max(), 1e-300)
    assert np.array_equal(s, s.T)
    assert np.abs(s @ np.ones(s.shape[0])).max() <= 1e-12 * max(scale, 1.0)


@settings(max_examples=60, deadline=None)
@given(int_rows, st.randoms(use_true_random=False))
def test_invariant_to_subject_order_and_condition_swap(xs, rnd):
    xs = _usable(*xs)
    if xs is None:
        return
    x1, x2 = xs
    perm = list(range(len(x1)))
    rnd.shuffle(perm)
    a = lemma1_covariance(PairedCounts(x1, x2)).sigma_hat
    b = lemma1_covariance(PairedCounts(x1[perm], x2[perm])).sigma_hat
    c = lemma1_covariance(PairedCounts(x2, x1)).sigma_hat
    assert np.allclose(a, b, rtol=1e-9, atol=1e-15)
    assert np.allclose(a, c, rtol=1e-9, atol=1e-15)


def test_unpaired_drops_cross_term():
    x1, x2 = _data(7)
    paired = lemma1_covariance(PairedCounts(x1, x2))
    unpaired = unpaired_covariance(x1, x2)
    cross = float(np.dot(x1.sum(1), x2.sum(1))) / (x1.sum() * x2.sum())
    s12 = paired.sigma12
    assert np.allclose(unpaired.sigma_hat - cross * (s12 + s12.T), paired.sigma_hat)
    # groups of different sizes are allowed
    assert unpaired_covariance(x1[:10], x2).sigma_hat.shape == (4, 4)


def test_group_blocks_errors():
    with pytest.raises(InsufficientSamples):
        group_blocks([[1, 2]])
    with pytest.raises(DegenerateInput):
        group_blocks([[1, 2], [0, 0]])
    with pytest.raises(DegenerateInput):
        group_blocks([[1, 0], [0, 1]])
    with pytest.raises(InvalidInput):
        group_blocks([[1.5, 2], [1, 1]])
    with pytest.raises(InvalidInput):
        PairedCounts([[1, 2]], [[1, 2, 3]])
    with pytest.raises(DegenerateInput):
        pooled_pi([[0, 0]])


def test_equal_totals_reduce_nc():
    # with equal totals N_c is exactly N
    x = np.array([[3, 7], [5, 5], [6, 4]])
    b = group_blocks(x)
    assert b.n_c == pytest.approx(10.0, rel=1e-14)


def test_dm_theta_moment_recovers_overdispersion():
    # Dirichlet(c * pi) has overdispersion 1 / (c + 1)
    p = MixedDirichletParams([0.3, 0.3, 0.4], [0.3, 0.3, 0.4], [0.3, 0.3, 0.4], 9.0, 9.0, 1.0, 0.0, True)
    x1, _ = sample_pairmn_mixed_dirichlet(p, (200, 200), RngStream(8), n=4000)
    assert dm_theta_moment(x1) == pytest.approx(0.1, abs=0.01)
    # multinomial data has theta near zero; the estimate is clamped at 0
    rng = np.random.default_rng(0)
    x = rng.multinomial(200, [0.3, 0.3, 0.4], size=3000)
    assert 0.0 <= dm_theta_moment(x) < 0.005
