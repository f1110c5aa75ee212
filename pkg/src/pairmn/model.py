"""Paired-multinomial model: moment parameters, moment maps and two
constructive latent-composition generators (mixed Dirichlet, log-normal).

Each subject contributes two count vectors ``X1 ~ Mult(N1, P1)`` and
``X2 ~ Mult(N2, P2)`` whose latent compositions ``(P1, P2)`` are only
described by their first and second moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import InvalidInput

__all__ = [
    "PairMnParams",
    "MixedDirichletParams",
    "LogNormalParams",
    "multinomial_cov",
    "pairmn_moments",
    "mixed_dirichlet_to_pairmn",
    "sample_overdispersed_dirichlet",
    "sample_pairmn_mixed_dirichlet",
    "sample_pairmn_lognormal",
    "lognormal_moments_mc",
]


def multinomial_cov(p) -> np.ndarray:
    """``diag(p) - p p^T``."""
    p = np.asarray(p, dtype=float)
    return np.diag(p) - np.outer(p, p)


def _check_simplex(v, name, tol=1e-12):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise InvalidInput(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise InvalidInput(f"{name} must be nonnegative")
    if abs(v.sum() - 1.0) > tol:
        raise InvalidInput(f"{name} must sum to 1 (got {v.sum():.17g})")
    return v


@dataclass(frozen=True, eq=False)
class PairMnParams:
    """Moment parameters (pi1, pi2, Sigma1, Sigma2, Sigma12)."""

    pi1: np.ndarray
    pi2: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    sigma12: np.ndarray

    def __post_init__(self):
        pi1 = _check_simplex(self.pi1, "pi1")
        pi2 = _check_simplex(self.pi2, "pi2")
        d = pi1.size
        if pi2.size != d:
            raise InvalidInput("pi1 and pi2 differ in length")
        object.__setattr__(self, "pi1", pi1)
        object.__setattr__(self, "pi2", pi2)
        for name in ("sigma1", "sigma2", "sigma12"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (d, d) or not np.all(np.isfinite(m)):
                raise InvalidInput(f"{name} must be a finite {d}x{d} matrix")
            if np.max(np.abs(m.sum(axis=0))) > 1e-10 or np.max(np.abs(m.sum(axis=1))) > 1e-10:
                raise InvalidInput(f"{name} rows and columns must sum to 0")
            object.__setattr__(self, name, m)
        for name in ("sigma1", "sigma2"):
            m = getattr(self, name)
            if np.max(np.abs(m - m.T)) > 1e-12:
                raise InvalidInput(f"{name} must be symmetric")
            if np.linalg.eigvalsh(m)[0] < -1e-10:
                raise InvalidInput(f"{name} must be positive semidefinite")

    @property
    def dim(self) -> int:
        return self.pi1.size


@dataclass(frozen=True, eq=False)
class MixedDirichletParams:
    """Latent compositions ``P_t = (1 - rho) P'_t + rho P''``.

    ``P'_t ~ Dir(alpha_t, theta_a_t)`` and ``P'' ~ Dir(ell, theta_ell)``.
    By default a theta is the variance fraction: the draw has mean ``a`` and
    covariance ``theta * (diag(a) - a a^T)``, with ``theta`` in (0, 1].
    With ``theta_as_concentration=True`` every theta is instead the total
    concentration ``c`` of ``Dirichlet(c * a)``, i.e. variance fraction
    ``1 / (c + 1)``.
    """

    alpha1: np.ndarray
    alpha2: np.ndarray
    ell: np.ndarray
    theta_a1: float
    theta_a2: float
    theta_ell: float
    rho: float
    theta_as_concentration: bool = False

    def __post_init__(self):
        a1 = _check_simplex(self.alpha1, "alpha1", 1e-9)
        a2 = _check_simplex(self.alpha2, "alpha2", 1e-9)
        ell = _check_simplex(self.ell, "ell", 1e-9)
        if not a1.size == a2.size == ell.size:
            raise InvalidInput("alpha1, alpha2 and ell differ in length")
        object.__setattr__(self, "alpha1", a1 / a1.sum())
        object.__setattr__(self, "alpha2", a2 / a2.sum())
        object.__setattr__(self, "ell", ell / ell.sum())
        for name in ("theta_a1", "theta_a2", "theta_ell"):
            th = float(getattr(self, name))
            if self.theta_as_concentration:
                if not (np.isfinite(th) and th > 0):
                    raise InvalidInput(f"{name} must be a positive concentration")
            elif not 0 < th <= 1:
                raise InvalidInput(f"{name} must lie in (0, 1]")
            object.__setattr__(self, name, th)
        if not 0 <= float(self.rho) < 1:
            raise InvalidInput("rho must lie in [0, 1)")

    @classmethod
    def from_means(cls, pi1, pi2, ell, rho, theta_a1, theta_a2, theta_ell,
                   theta_as_concentration=False):
        """Solve ``pi_t = (1 - rho) alpha_t + rho ell`` for the alphas."""
        ell = np.asarray(ell, dtype=float)
        alphas = []
        for pi in (pi1, pi2):
            a = (np.asarray(pi, dtype=float) - rho * ell) / (1.0 - rho)
            if np.any(a < -1e-12):
                raise InvalidInput(f"rho={rho} leaves a negative alpha entry for these means")
            alphas.append(np.clip(a, 0.0, None))
        return cls(alphas[0], alphas[1], ell, theta_a1, theta_a2, theta_ell, rho,
                   theta_as_concentration)

    def variance_thetas(self) -> tuple[float, float, float]:
        """(theta_a1, theta_a2, theta_ell) as variance fractions."""
        ths = (self.theta_a1, self.theta_a2, self.theta_ell)
        if self.theta_as_concentration:
            return tuple(1.0 / (c + 1.0) for c in ths)
        return ths

    @property
    def dim(self) -> int:
        return self.ell.size


@dataclass(frozen=True, eq=False)
class LogNormalParams:
    """``P_t = softmax(Z_t)`` with coordinate-wise correlated normal pairs."""

    mu1: np.ndarray
    mu2: np.ndarray
    sigma_sd1: np.ndarray
    sigma_sd2: np.ndarray
    rho: float

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, k), dtype=float)
                for k in ("mu1", "mu2", "sigma_sd1", "sigma_sd2")]
        d = arrs[0].size
        if any(a.ndim != 1 or a.size != d for a in arrs) or d < 1:
            raise InvalidInput("log-normal parameter vectors must share one length")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise InvalidInput("log-normal parameters must be finite")
        if np.any(arrs[2] <= 0) or np.any(arrs[3] <= 0):
            raise InvalidInput("sigma entries must be positive")
        if not -1 < float(self.rho) < 1:
            raise InvalidInput("rho must lie in (-1, 1)")
        for k, a in zip(("mu1", "mu2", "sigma_sd1", "sigma_sd2"), arrs):
            object.__setattr__(self, k, a)

    @property
    def dim(self) -> int:
        return self.mu1.size


def pairmn_moments(params: PairMnParams, n1, n2):
    """Mean and covariance of ``(X1, X2)`` given totals ``(n1, n2)``.

    Returns
    -------
    mean1, var1, mean2, var2, cross : ndarray
        ``E X_t = N_t pi_t``,
        ``Var X_t = N_t (diag(pi_t) - pi_t pi_t^T) + N_t (N_t - 1) Sigma_t``,
        ``Cov(X1, X2) = N1 N2 Sigma12``.
    """
    if not isinstance(params, PairMnParams):
        raise InvalidInput("params must be PairMnParams")
    if n1 < 1 or n2 < 1:
        raise InvalidInput("totals must be at least 1")
    out = []
    for n, pi, sig in ((n1, params.pi1, params.sigma1), (n2, params.pi2, params.sigma2)):
        out.append(n * pi)
        out.append(n * multinomial_cov(pi) + n * (n - 1) * sig)
    mean1, var1, mean2, var2 = out
    return mean1, var1, mean2, var2, n1 * n2 * params.sigma12


def mixed_dirichlet_to_pairmn(p: MixedDirichletParams) -> PairMnParams:
    """Closed-form PairMN moments of the mixed-Dirichlet generator."""
    th1, th2, th_ell = p.variance_thetas()
    rho = p.rho
    shared = rho ** 2 * th_ell * multinomial_cov(p.ell)
    sigmas = []
    pis = []
    for a, th in ((p.alpha1, th1), (p.alpha2, th2)):
        pis.append((1 - rho) * a + rho * p.ell)
        sigmas.append((1 - rho) ** 2 * th * multinomial_cov(a) + shared)
    return PairMnParams(pis[0], pis[1], sigmas[0], sigmas[1], shared.copy())


def sample_overdispersed_dirichlet(alpha, theta, rng, size=None) -> np.ndarray:
    """Draw compositions with mean ``alpha`` and covariance
    ``theta * (diag(alpha) - alpha alpha^T)``.

    This is ``Dirichlet(alpha * (1 - theta) / theta)``; ``theta = 1`` is the
    degenerate limit, a one-hot vertex chosen with probabilities ``alpha``.
    Zero entries of ``alpha`` stay exactly zero.
    """
    alpha = _check_simplex(alpha, "alpha", 1e-9)
    alpha = alpha / alpha.sum()
    theta = float(theta)
    if not 0 < theta <= 1:
        raise InvalidInput("theta must lie in (0, 1]")
    lead = () if size is None else tuple(np.atleast_1d(size))
    d = alpha.size
    if theta == 1.0:
        idx = numkit.categorical(alpha, rng, size=lead if lead else None)
        return np.eye(d)[idx]
    support = alpha > 0
    out = np.zeros(lead + (d,))
    conc = alpha[support] * (1.0 - theta) / theta
    out[..., support] = numkit.dirichlet(conc, rng, size=lead if lead else None)
    return out


def _as_totals(totals, n=None):
    n1, n2 = totals
    n1 = np.atleast_1d(np.asarray(n1, dtype=np.int64))
    n2 = np.atleast_1d(np.asarray(n2, dtype=np.int64))
    if n is not None:
        n1 = np.broadcast_to(n1, (n,))
        n2 = np.broadcast_to(n2, (n,))
    if n1.shape != n2.shape or n1.ndim != 1:
        raise InvalidInput("totals must be two equal-length vectors")
    if np.any(n1 < 0) or np.any(n2 < 0):
        raise InvalidInput("totals must be nonnegative")
    return n1, n2


def sample_pairmn_mixed_dirichlet(p: MixedDirichletParams, totals, rng, n=None,
                                  return_latent=False):
    """Paired counts from the mixed-Dirichlet generator.

    Parameters
    ----------
    p : MixedDirichletParams
    totals : (N1, N2)
        Per-subject totals, each a scalar or a length-n vector.
    rng : RngStream
    n : int, optional
        Number of subjects when ``totals`` are scalars.
    return_latent : bool
        Also return the latent compositions ``(P1, P2)``.

    Returns
    -------
    X1, X2 : ndarray of int, shape (n, d)
    """
    n1, n2 = _as_totals(totals, n)
    m = n1.size
    th1, th2, th_ell = p.variance_thetas()
    shared = sample_overdispersed_dirichlet(p.ell, th_ell, rng, size=m)
    p1 = (1 - p.rho) * sample_overdispersed_dirichlet(p.alpha1, th1, rng, size=m) + p.rho * shared
    p2 = (1 - p.rho) * sample_overdispersed_dirichlet(p.alpha2, th2, rng, size=m) + p.rho * shared
    x1 = numkit.multinomial(n1, p1, rng)
    x2 = numkit.multinomial(n2, p2, rng)
    if return_latent:
        return x1, x2, (p1, p2)
    return x1, x2


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _lognormal_latent(p: LogNormalParams, rng, m):
    mean = np.stack([p.mu1, p.mu2], axis=-1)
    s1, s2 = p.sigma_sd1, p.sigma_sd2
    cov = np.empty((p.dim, 2, 2))
    cov[:, 0, 0] = s1 * s1
    cov[:, 1, 1] = s2 * s2
    cov[:, 0, 1] = cov[:, 1, 0] = p.rho * s1 * s2
    z = numkit.mvnormal_pair(mean, cov, rng, size=m)
    return _softmax(z[..., 0]), _softmax(z[..., 1])


def sample_pairmn_lognormal(p: LogNormalParams, totals, rng, n=None, return_latent=False):
    """Paired counts whose latent compositions are softmax-normalized
    correlated normal vectors. Same calling convention as
    :func:`sample_pairmn_mixed_dirichlet`."""
    n1, n2 = _as_totals(totals, n)
    p1, p2 = _lognormal_latent(p, rng, n1.size)
    x1 = numkit.multinomial(n1, p1, rng)
    x2 = numkit.multinomial(n2, p2, rng)
    if return_latent:
        return x1, x2, (p1, p2)
    return x1, x2


def lognormal_moments_mc(p: LogNormalParams, rng, draws: int = 100_000) -> PairMnParams:
    """Monte Carlo estimate of the PairMN moments of the log-normal generator.

    No closed form exists, so this is the only route to them.
    """
    p1, p2 = _lognormal_latent(p, rng, draws)
    pi1, pi2 = p1.mean(axis=0), p2.mean(axis=0)
    c1, c2 = p1 - pi1, p2 - pi2
    s1 = c1.T @ c1 / (draws - 1)
    s2 = c2.T @ c2 / (draws - 1)
    s12 = c1.T @ c2 / (draws - 1)
    return PairMnParams(pi1 / pi1.sum(), pi2 / pi2.sum(), 0.5 * (s1 + s1.T), 0.5 * (s2 + s2.T), s12)
