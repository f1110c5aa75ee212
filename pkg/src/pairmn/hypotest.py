"""Tests of equal composition and p-value combination rules."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import numkit
from .errors import DegenerateInput, InsufficientSamples, InsufficientTests, InvalidInput, ZeroRank
from .estimate import PairedCounts, as_count_matrix, dm_theta_moment, lemma1_covariance

__all__ = [
    "TestResult",
    "LogSingularityWarning",
    "paired_f_test",
    "unpaired_dm_test",
    "fisher_combine",
    "second_smallest_combine",
    "bh_fdr",
]


class LogSingularityWarning(RuntimeWarning):
    """A p-value of exactly 0 entered Fisher's combination."""


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test of equal composition.

    ``df2`` is None for chi-square tests.
    """

    __test__ = False  # not a pytest class

    statistic: float
    df1: int
    df2: int | None
    p_value: float
    effective_n: int
    effective_d: int
    truncated_eigs: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def paired_f_test(pc, rel_tol: float = numkit.DEFAULT_REL_TOL) -> TestResult:
    """F-test of ``pi1 == pi2`` for paired multinomial counts.

    Subjects with a zero total in either condition and categories that are
    empty in every sample of both conditions are dropped first. With ``n``
    subjects and ``d`` categories left, the statistic is
    ``(n - d + 1) / ((n - 1)(d - 1)) * diff^T Sigma^+ diff`` where
    ``Sigma^+`` is the truncated pseudoinverse (rank at most ``d - 1``) of
    the paired covariance estimate, and the p-value is the upper tail of
    ``F(d - 1, n - d + 1)``.

    Raises
    ------
    InsufficientSamples
        If ``n <= d`` after dropping.
    DegenerateInput
        If fewer than two categories remain or the covariance estimate has
        no positive eigenvalue while the proportions differ. With identical
        pooled proportions the statistic is 0 and ``p = 1``.
    """
    if not isinstance(pc, PairedCounts):
        pc = PairedCounts(*pc)
    x1, x2 = pc.counts1, pc.counts2
    rows = (x1.sum(axis=1) > 0) & (x2.sum(axis=1) > 0)
    x1, x2 = x1[rows], x2[rows]
    cols = (x1.sum(axis=0) + x2.sum(axis=0)) > 0
    x1, x2 = x1[:, cols], x2[:, cols]
    n, d = x1.shape
    if d < 2:
        raise DegenerateInput(f"only {d} nonempty categor{'y' if d == 1 else 'ies'}")
    if n <= d:
        raise InsufficientSamples(f"need more subjects than categories (n={n}, d={d})")
    cov = lemma1_covariance(PairedCounts(x1, x2))
    diff = cov.diff
    df1, df2 = d - 1, n - d + 1
    try:
        pinv, rank = numkit.pinv_truncated(cov.sigma_hat, d - 1, rel_tol, return_rank=True)
    except ZeroRank as exc:
        if not np.any(diff):
            # zero difference: the quadratic form vanishes for any inverse
            return TestResult(0.0, df1, df2, 1.0, n, d, d)
        raise DegenerateInput("covariance estimate has no positive eigenvalue") from exc
    quad = float(diff @ pinv @ diff)
    stat = max((n - d + 1) / ((n - 1) * (d - 1)) * quad, 0.0)
    return TestResult(stat, df1, df2, numkit.f_sf(stat, df1, df2), n, d, d - rank)


def unpaired_dm_test(group1, group2) -> TestResult:
    """Two-sample chi-square test of equal composition under a
    Dirichlet-multinomial model.

    ``sum_k (pi1_k - pi2_k)^2 / (C1 pi1_k + C2 pi2_k)`` referred to
    ``chi2(d - 1)``, where
    ``C_t = (theta_t (sum N_it^2 - N_t) + N_t) / N_t^2`` and ``theta_t`` comes
    from :func:`~pairmn.estimate.dm_theta_moment`. Rows with zero total are
    dropped within each group; categories with a zero denominator are
    dropped and the degrees of freedom reduced.
    """
    groups = []
    for name, g in (("group1", group1), ("group2", group2)):
        x = as_count_matrix(g, name)
        x = x[x.sum(axis=1) > 0]
        if x.shape[0] < 2:
            raise InsufficientSamples(f"{name} has fewer than 2 nonempty samples")
        groups.append(x)
    if groups[0].shape[1] != groups[1].shape[1]:
        raise InvalidInput("groups differ in the number of categories")
    pis, cs = [], []
    for x in groups:
        totals = x.sum(axis=1)
        n_dot = totals.sum()
        theta = dm_theta_moment(x)
        pis.append(x.sum(axis=0) / n_dot)
        cs.append((theta * (np.dot(totals, totals) - n_dot) + n_dot) / n_dot ** 2)
    den = cs[0] * pis[0] + cs[1] * pis[1]
    keep = den > 0
    d = int(keep.sum())
    if d < 2:
        raise DegenerateInput("fewer than 2 categories carry counts")
    diff = (pis[0] - pis[1])[keep]
    stat = float(np.sum(diff * diff / den[keep]))
    n_eff = groups[0].shape[0] + groups[1].shape[0]
    return TestResult(stat, d - 1, None, numkit.chisq_sf(stat, d - 1), n_eff, d, 0)


def _pvector(pvals) -> np.ndarray:
    p = np.asarray(pvals, dtype=float).ravel()
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise InvalidInput("p-values must lie in [0, 1]")
    return p


def fisher_combine(pvals) -> float:
    """Fisher's combination: upper tail of ``chi2(2K)`` at ``-2 sum log p``.

    A p-value of exactly 0 makes the statistic infinite; the result is then
    0 and a :class:`LogSingularityWarning` is issued.
    """
    p = _pvector(pvals)
    if p.size < 1:
        raise InsufficientTests("need at least one p-value")
    if np.any(p == 0):
        warnings.warn("p-value of 0 in Fisher combination", LogSingularityWarning, stacklevel=2)
        return 0.0
    stat = -2.0 * float(np.sum(np.log(p)))
    return numkit.chisq_sf(stat, 2 * p.size)


def second_smallest_combine(pvals, K: int | None = None) -> float:
    """Combination based on the second smallest of K p-values.

    ``1 - [1 + (K - 1) p2] (1 - p2)^(K - 1)``, the probability that at least
    two of K independent uniforms fall at or below ``p2``.
    """
    p = _pvector(pvals)
    if K is None:
        K = p.size
    if K < 2 or p.size < 2:
        raise InsufficientTests("the second smallest p-value needs K >= 2")
    if K < p.size:
        raise InvalidInput("K is smaller than the number of p-values")
    p2 = float(np.partition(p, 1)[1])
    if p2 >= 1.0:
        return 1.0
    if p2 <= 0.0:
        return 0.0
    log_tail = math.log1p((K - 1) * p2) + (K - 1) * math.log1p(-p2)
    return min(max(-math.expm1(log_tail), 0.0), 1.0)


def bh_fdr(pvals, q: float = 0.05):
    """Benjamini-Hochberg step-up procedure.

    Returns
    -------
    rejected : ndarray of bool
    adjusted : ndarray of float
        BH-adjusted p-values, monotone in the raw p-values and capped at 1.
    """
    if not 0 < q < 1:
        raise InvalidInput("q must lie in (0, 1)")
    p = _pvector(pvals)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    ranks = np.arange(1, m + 1)
    below = np.nonzero(ranked <= q * ranks / m)[0]
    rejected = np.zeros(m, dtype=bool)
    if below.size:
        rejected[order[: below[-1] + 1]] = True
    adj_sorted = np.minimum.accumulate((ranked * m / ranks)[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(adj_sorted, 1.0)
    return rejected, adjusted
