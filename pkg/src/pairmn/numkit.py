"""Numerical kernels: symmetric eigensystems, truncated pseudoinverses,
F / chi-square distribution functions and seeded random samplers.

The distribution functions are evaluated through the regularized incomplete
beta and gamma functions with continued-fraction expansions (modified Lentz),
so the package has no runtime dependency on a special-function library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, ZeroRank

__all__ = [
    "EigenDecomp",
    "RngStream",
    "as_symmetric",
    "sym_eig",
    "pinv_truncated",
    "betainc",
    "gammainc",
    "gammaincc",
    "f_cdf",
    "f_sf",
    "chisq_cdf",
    "chisq_sf",
    "dirichlet",
    "multinomial",
    "categorical",
    "poisson",
    "binomial",
    "mvnormal_pair",
]

DEFAULT_REL_TOL = 1e-12

_EPS = np.finfo(float).eps
_TINY = 1e-300
_MAX_ITER = 100_000


# ---------------------------------------------------------------------------
# Symmetric linear algebra
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EigenDecomp:
    """Eigenvalues in descending order and matching orthonormal columns."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def as_symmetric(a, atol: float = 1e-8) -> np.ndarray:
    """Validate a square finite matrix and return its exactly symmetric part.

    Asymmetry larger than ``atol * max|a|`` is rejected rather than hidden.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInput(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("matrix has non-finite entries")
    scale = max(float(np.max(np.abs(a))), 1.0)
    if np.max(np.abs(a - a.T)) > atol * scale:
        raise InvalidInput("matrix is not symmetric")
    return 0.5 * (a + a.T)


def sym_eig(a) -> EigenDecomp:
    """Eigendecomposition of a real symmetric matrix, values descending."""
    a = as_symmetric(a)
    values, vectors = np.linalg.eigh(a)
    return EigenDecomp(values[::-1].copy(), vectors[:, ::-1].copy())


def pinv_truncated(a, rank_cap: int | None = None, rel_tol: float = DEFAULT_REL_TOL,
                   *, return_rank: bool = False):
    """Moore-Penrose pseudoinverse of a symmetric matrix after truncation.

    Eigenvalues that are negative or at most ``rel_tol * lambda_max`` are
    treated as zero, and at most ``rank_cap`` of the remaining (largest
    first) are inverted.

    Parameters
    ----------
    a : array_like, shape (d, d)
        Symmetric matrix.
    rank_cap : int, optional
        Maximum number of eigenvalues to invert. Defaults to ``d``.
    rel_tol : float
        Relative eigenvalue floor.
    return_rank : bool
        Also return the number of retained eigenvalues.

    Returns
    -------
    ndarray or (ndarray, int)

    Raises
    ------
    ZeroRank
        If no eigenvalue survives truncation.
    """
    if rel_tol <= 0:
        raise InvalidInput("rel_tol must be positive")
    eig = sym_eig(a)
    dim = eig.values.size
    if rank_cap is None:
        rank_cap = dim
    if rank_cap < 0:
        raise InvalidInput("rank_cap must be nonnegative")
    lam_max = eig.values[0]
    keep = (eig.values > 0) & (eig.values > rel_tol * lam_max)
    keep &= np.arange(dim) < rank_cap
    rank = int(keep.sum())
    if rank == 0:
        raise ZeroRank("all eigenvalues truncated")
    u = eig.vectors[:, keep]
    inv = (u / eig.values[keep]) @ u.T
    inv = 0.5 * (inv + inv.T)
    if return_rank:
        return inv, rank
    return inv


# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    # continued fraction for I_x(a, b), modified Lentz
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 4 * _EPS:
            return h
    raise ArithmeticError(f"betainc continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise InvalidInput("betainc requires a, b > 0")
    if not math.isfinite(x):
        raise InvalidInput("betainc requires finite x")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def _gamma_series(a: float, x: float) -> float:
    ap = a
    total = delta = 1.0 / a
    for _ in range(_MAX_ITER):
        ap += 1.0
        delta *= x / ap
        total += delta
        if abs(delta) < abs(total) * _EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ArithmeticError("gammainc series did not converge")


def _gamma_cf(a: float, x: float) -> float:
    # continued fraction for Q(a, x), modified Lentz
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 4 * _EPS:
            return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    raise ArithmeticError("gammaincc continued fraction did not converge")


def gammainc(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise InvalidInput("gammainc requires a > 0")
    if not math.isfinite(x):
        raise InvalidInput("gammainc requires finite x")
    if x <= 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise InvalidInput("gammaincc requires a > 0")
    if not math.isfinite(x):
        raise InvalidInput("gammaincc requires finite x")
    if x <= 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def _check_df(*dfs) -> None:
    for df in dfs:
        if not df > 0:
            raise InvalidInput(f"degrees of freedom must be positive, got {df}")


def f_cdf(x: float, d1: float, d2: float) -> float:
    """CDF of the F distribution with (d1, d2) degrees of freedom."""
    _check_df(d1, d2)
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInput("x must be finite")
    if x <= 0.0:
        return 0.0
    return betainc(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))


def f_sf(x: float, d1: float, d2: float) -> float:
    """Upper tail 1 - F(x) of the F distribution, computed without cancellation."""
    _check_df(d1, d2)
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInput("x must be finite")
    if x <= 0.0:
        return 1.0
    return betainc(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * x))


def chisq_cdf(x: float, k: float) -> float:
    """CDF of the chi-square distribution with k degrees of freedom."""
    _check_df(k)
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInput("x must be finite")
    return gammainc(0.5 * k, 0.5 * x) if x > 0 else 0.0


def chisq_sf(x: float, k: float) -> float:
    """Upper tail of the chi-square distribution."""
    _check_df(k)
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInput("x must be finite")
    return gammaincc(0.5 * k, 0.5 * x) if x > 0 else 1.0


# ---------------------------------------------------------------------------
# Random streams and samplers
# ---------------------------------------------------------------------------

@dataclass
class RngStream:
    """Seeded PCG64 stream; substreams are keyed by integer tuples.

    The seed and the stream key are hashed together by
    ``numpy.random.SeedSequence``, so ``RngStream(7).substream(3)`` and
    ``RngStream(7, (3,))`` produce the same draws on every platform.
    A stream is owned by one task at a time; derive substreams instead of
    sharing.
    """

    seed: int
    stream: tuple = ()
    algorithm: str = field(default="PCG64", init=False)

    def __post_init__(self):
        seed = int(self.seed)
        if not 0 <= seed < 2 ** 64:
            raise InvalidInput("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.stream = tuple(int(s) for s in self.stream)
        seq = np.random.SeedSequence(entropy=seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def substream(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(key))


def _gen(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise InvalidInput(f"expected an RngStream, got {type(rng).__name__}")


def _simplex(p, name: str = "p", tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim < 1 or p.shape[-1] < 1:
        raise InvalidInput(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidInput(f"{name} must be finite and nonnegative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
        raise InvalidInput(f"{name} must sum to 1")
    return p / p.sum(axis=-1, keepdims=True)


def dirichlet(concentration, rng, size=None) -> np.ndarray:
    """Dirichlet draws with the given concentration vector."""
    alpha = np.asarray(concentration, dtype=float)
    if alpha.ndim != 1 or alpha.size < 1:
        raise InvalidInput("concentration must be a non-empty vector")
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise InvalidInput("concentration entries must be finite and positive")
    if alpha.size == 1:
        shape = () if size is None else tuple(np.atleast_1d(size))
        return np.ones(shape + (1,))
    return _gen(rng).dirichlet(alpha, size=size)


def multinomial(n, p, rng, size=None) -> np.ndarray:
    """Multinomial counts; ``n`` and rows of ``p`` broadcast together."""
    n_arr = np.asarray(n)
    if np.any(n_arr < 0) or not np.all(np.equal(np.mod(n_arr, 1), 0)):
        raise InvalidInput("multinomial totals must be nonnegative integers")
    p = _simplex(p)
    return _gen(rng).multinomial(n_arr.astype(np.int64), p, size=size)


def categorical(p, rng, size=None):
    """Indices drawn with probabilities ``p``."""
    p = _simplex(p)
    if p.ndim != 1:
        raise InvalidInput("categorical takes a single probability vector")
    return _gen(rng).choice(p.size, p=p, size=size)


def poisson(mean, rng, size=None):
    mean = np.asarray(mean, dtype=float)
    if not np.all(np.isfinite(mean)) or np.any(mean < 0):
        raise InvalidInput("poisson mean must be finite and nonnegative")
    return _gen(rng).poisson(mean, size=size)


def binomial(n, p, rng, size=None):
    n_arr = np.asarray(n)
    p_arr = np.asarray(p, dtype=float)
    if np.any(n_arr < 0) or not np.all(np.equal(np.mod(n_arr, 1), 0)):
        raise InvalidInput("binomial n must be a nonnegative integer")
    if np.any(~np.isfinite(p_arr)) or np.any((p_arr < 0) | (p_arr > 1)):
        raise InvalidInput("binomial p must lie in [0, 1]")
    return _gen(rng).binomial(n_arr.astype(np.int64), p_arr, size=size)


def mvnormal_pair(mean, cov, rng, size=None) -> np.ndarray:
    """Bivariate normal draws.

    ``mean`` has shape ``(..., 2)`` and ``cov`` shape ``(..., 2, 2)``; the
    batch shapes broadcast. Output shape is ``size + batch + (2,)``.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if mean.shape[-1:] != (2,) or cov.shape[-2:] != (2, 2):
        raise InvalidInput("mvnormal_pair expects mean (...,2) and cov (...,2,2)")
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise InvalidInput("mvnormal_pair parameters must be finite")
    c11, c12, c21, c22 = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 0], cov[..., 1, 1]
    scale = np.maximum(np.maximum(np.abs(c11), np.abs(c22)), 1.0)
    if (np.any(np.abs(c12 - c21) > 1e-12 * scale) or np.any(c11 < 0) or np.any(c22 < 0)
            or np.any(c11 * c22 - c12 * c12 < -1e-12 * scale * scale)):
        raise InvalidInput("covariance must be symmetric positive semidefinite")
    a = np.sqrt(c11)
    b = np.divide(c12, a, out=np.zeros(np.broadcast(c12, a).shape), where=a > 0)
    c = np.sqrt(np.maximum(c22 - b * b, 0.0))
    batch = np.broadcast_shapes(mean.shape[:-1], cov.shape[:-2])
    lead = () if size is None else tuple(np.atleast_1d(size))
    e = _gen(rng).standard_normal(lead + batch + (2,))
    z1 = mean[..., 0] + a * e[..., 0]
    z2 = mean[..., 1] + b * e[..., 0] + c * e[..., 1]
    return np.stack([z1, z2], axis=-1)
