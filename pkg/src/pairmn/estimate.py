"""Moment estimators for paired and unpaired multivariate count data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, InsufficientSamples, InvalidInput

__all__ = [
    "PairedCounts",
    "GroupBlocks",
    "CovEstimate",
    "as_count_matrix",
    "pooled_pi",
    "group_blocks",
    "lemma1_covariance",
    "unpaired_covariance",
    "dm_theta_moment",
]


def as_count_matrix(counts, name: str = "counts") -> np.ndarray:
    """Validate an n x d matrix of nonnegative integer counts (kept as float)."""
    x = np.asarray(counts, dtype=float)
    if x.ndim != 2 or x.shape[1] < 1:
        raise InvalidInput(f"{name} must be an n x d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)) or np.any(x < 0) or np.any(x != np.round(x)):
        raise InvalidInput(f"{name} must hold nonnegative integers")
    return x


@dataclass(frozen=True, eq=False)
class PairedCounts:
    """Two n x d count matrices, row i holding subject i under each condition."""

    counts1: np.ndarray
    counts2: np.ndarray
    subject_ids: tuple = field(default=None)

    def __post_init__(self):
        x1 = as_count_matrix(self.counts1, "counts1")
        x2 = as_count_matrix(self.counts2, "counts2")
        if x1.shape != x2.shape:
            raise InvalidInput(f"counts1 {x1.shape} and counts2 {x2.shape} differ in shape")
        object.__setattr__(self, "counts1", x1)
        object.__setattr__(self, "counts2", x2)
        ids = self.subject_ids
        if ids is None:
            ids = tuple(range(x1.shape[0]))
        elif len(ids) != x1.shape[0]:
            raise InvalidInput("subject_ids length does not match the counts")
        object.__setattr__(self, "subject_ids", tuple(ids))

    @property
    def n(self) -> int:
        return self.counts1.shape[0]

    @property
    def d(self) -> int:
        return self.counts1.shape[1]

    @property
    def totals1(self) -> np.ndarray:
        return self.counts1.sum(axis=1)

    @property
    def totals2(self) -> np.ndarray:
        return self.counts2.sum(axis=1)


def pooled_pi(counts) -> np.ndarray:
    """Pooled proportions ``sum_i X_i / sum_i N_i``."""
    x = as_count_matrix(counts)
    total = x.sum()
    if total <= 0:
        raise DegenerateInput("pooled proportions need a positive total count")
    return x.sum(axis=0) / total


@dataclass(frozen=True, eq=False)
class GroupBlocks:
    """Per-condition building blocks of the covariance estimator."""

    pi: np.ndarray          # pooled proportions
    pi_rows: np.ndarray     # X_i / N_i
    totals: np.ndarray      # N_i
    n_dot: float            # sum N_i
    n_c: float              # (N_dot^2 - sum N_i^2) / ((n - 1) N_dot)
    sum_sq: float           # sum N_i^2
    s: np.ndarray
    g: np.ndarray


def group_blocks(counts) -> GroupBlocks:
    """Compute ``S``, ``G``, ``N_dot`` and ``N_c`` for one condition.

    Every row must have a positive total; at least two rows are needed.
    """
    x = as_count_matrix(counts)
    n = x.shape[0]
    if n < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {n}")
    totals = x.sum(axis=1)
    if np.any(totals <= 0):
        raise DegenerateInput("rows with zero total must be removed before estimation")
    n_dot = float(totals.sum())
    if n_dot == n:
        raise DegenerateInput("every total equals 1; the G divisor N_dot - n is zero")
    sum_sq = float(np.dot(totals, totals))
    n_c = (n_dot * n_dot - sum_sq) / ((n - 1) * n_dot)
    pi_rows = x / totals[:, None]
    pi = x.sum(axis=0) / n_dot
    dev = pi_rows - pi
    s = (dev.T * totals) @ dev / (n - 1)
    g = (np.diag(x.sum(axis=0)) - (pi_rows.T * totals) @ pi_rows) / (n_dot - n)
    return GroupBlocks(pi, pi_rows, totals, n_dot, n_c, sum_sq,
                       0.5 * (s + s.T), 0.5 * (g + g.T))


def _condition_term(b: GroupBlocks) -> np.ndarray:
    first = (b.s + (b.n_c - 1.0) * b.g) / (b.n_c * b.n_dot)
    second = (b.sum_sq - b.n_dot) / (b.n_c * b.n_dot ** 2) * (b.s - b.g)
    return first + second


@dataclass(frozen=True, eq=False)
class CovEstimate:
    """Estimated covariance of ``pi1_hat - pi2_hat`` and its pieces."""

    sigma_hat: np.ndarray
    blocks: tuple            # (GroupBlocks, GroupBlocks)
    sigma12: np.ndarray
    paired: bool

    @property
    def s(self):
        return self.blocks[0].s, self.blocks[1].s

    @property
    def g(self):
        return self.blocks[0].g, self.blocks[1].g

    @property
    def n_dot(self):
        return self.blocks[0].n_dot, self.blocks[1].n_dot

    @property
    def n_c(self):
        return self.blocks[0].n_c, self.blocks[1].n_c

    @property
    def diff(self) -> np.ndarray:
        return self.blocks[0].pi - self.blocks[1].pi


def lemma1_covariance(pc: PairedCounts) -> CovEstimate:
    """Consistent estimator of ``Var(pi1_hat - pi2_hat)`` for paired counts.

    Parameters
    ----------
    pc : PairedCounts
        Every subject must have a positive total in both conditions.

    Returns
    -------
    CovEstimate
        ``sigma_hat`` is exactly symmetric; its rows and columns sum to zero
        up to rounding.
    """
    if not isinstance(pc, PairedCounts):
        pc = PairedCounts(*pc)
    b1 = group_blocks(pc.counts1)
    b2 = group_blocks(pc.counts2)
    n = pc.n
    w = (b1.totals + b2.totals) / (b1.n_c + b2.n_c)
    dev1 = b1.pi_rows - b1.pi
    dev2 = b2.pi_rows - b2.pi
    sigma12 = (dev1.T * w) @ dev2 / (n - 1)
    cross = float(np.dot(b1.totals, b2.totals)) / (b1.n_dot * b2.n_dot)
    sigma_hat = _condition_term(b1) + _condition_term(b2) - cross * (sigma12 + sigma12.T)
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)
    return CovEstimate(sigma_hat, (b1, b2), sigma12, True)


def unpaired_covariance(group1, group2) -> CovEstimate:
    """Covariance estimate for two independent groups of possibly unequal size.

    Same per-condition terms as :func:`lemma1_covariance` without the
    cross-covariance correction.
    """
    b1 = group_blocks(group1)
    b2 = group_blocks(group2)
    if b1.pi.size != b2.pi.size:
        raise InvalidInput("groups differ in the number of categories")
    sigma_hat = _condition_term(b1) + _condition_term(b2)
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)
    d = b1.pi.size
    return CovEstimate(sigma_hat, (b1, b2), np.zeros((d, d)), False)


def dm_theta_moment(counts) -> float:
    """Moment estimate of the Dirichlet-multinomial overdispersion.

    ``trace(S - G) / trace(S + (N_c - 1) G)``, clamped to ``[0, 1 - 1e-9]``.
    Under a DM model the numerator and denominator have expectations
    ``N_c theta tr(D)`` and ``N_c tr(D)`` with ``D = diag(pi) - pi pi^T``.
    """
    b = group_blocks(counts)
    den = float(np.trace(b.s + (b.n_c - 1.0) * b.g))
    if not den > 0:
        raise DegenerateInput("no within-sample variation to estimate overdispersion")
    theta = float(np.trace(b.s - b.g)) / den
    return min(max(theta, 0.0), 1.0 - 1e-9)
