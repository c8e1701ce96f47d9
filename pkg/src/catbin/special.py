"""Scalar distribution primitives used by the CAVI engines.

Standard normal and logistic cdfs, moments and entropies of unit-variance
normals truncated to the positive or negative half line, the Polya-Gamma
mean, and Gaussian entropy / KL divergence.
"""

import enum
import math
from typing import NamedTuple

import numpy as np
from scipy import linalg as sla
from scipy import special as sps

from catbin import linalg

LOG_2PI = math.log(2.0 * math.pi)
HALF_LOG_2PIE = 0.5 * (LOG_2PI + 1.0)

# beyond this |mu| the Mills ratio comes from its continued fraction
_CF_SWITCH = 6.0
_CF_TERMS = 120
_PG_SERIES_CUTOFF = 1e-4


class TruncSide(enum.Enum):
    """Truncation region: PLUS is [0, inf) (bit = 1), MINUS is (-inf, 0) (bit = 0)."""

    PLUS = "plus"
    MINUS = "minus"


class NormalEval(NamedTuple):
    pdf: float
    cdf: float


class TruncMoments(NamedTuple):
    mean: float
    variance: float
    entropy: float


def _check_finite(x, name="x"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    return x


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - 0.5 * LOG_2PI)


def norm_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - 0.5 * LOG_2PI


def std_normal(x) -> NormalEval:
    """Standard normal pdf and cdf at ``x`` (scalar or array)."""
    x = _check_finite(x)
    pdf, cdf = norm_pdf(x), sps.ndtr(x)
    if x.ndim == 0:
        return NormalEval(float(pdf), float(cdf))
    return NormalEval(pdf, cdf)


def logistic_cdf(x):
    return sps.expit(x)


def _cf_tail(t):
    """Return ``(f0, 1/f1)`` of the Mills-ratio continued fraction at ``t > 0``.

    (1 - Phi(t)) / phi(t) = 1 / f0 with f0 = t + 1/f1, f1 = t + 2/f2, ...
    """
    f = np.array(t, dtype=float, copy=True)
    for j in range(_CF_TERMS, 1, -1):
        f = t + j / f
    inv_f1 = 1.0 / f
    return t + inv_f1, inv_f1


def _plus_shift(mu):
    """Mean shift delta and mean (mu + delta) of N+(mu, 1), computed stably."""
    mu = np.asarray(mu, dtype=float)
    delta = np.empty_like(mu)
    mean = np.empty_like(mu)
    far = mu < -_CF_SWITCH
    near = ~far
    if np.any(near):
        m = mu[near]
        delta[near] = np.exp(norm_logpdf(m) - sps.log_ndtr(m))
        mean[near] = m + delta[near]
    if np.any(far):
        # phi(mu)/Phi(mu) = f0(t) with t = -mu, and mu + f0 = 1/f1
        f0, inv_f1 = _cf_tail(-mu[far])
        delta[far] = f0
        mean[far] = inv_f1
    return delta, mean


def truncnorm_shift(mu, plus) -> np.ndarray:
    """Mills-ratio perturbation: E[T] - mu for T ~ N+/-(mu, 1).

    ``plus`` is a boolean array (broadcast against ``mu``); True selects the
    positive half line.
    """
    mu = np.asarray(mu, dtype=float)
    plus = np.broadcast_to(np.asarray(plus, dtype=bool), mu.shape)
    signed = np.where(plus, mu, -mu)
    delta, _ = _plus_shift(signed)
    return np.where(plus, delta, -delta)


def truncnorm_moments(mu, plus):
    """Vectorized ``(mean, variance, entropy)`` of N+/-(mu, 1)."""
    mu = np.asarray(mu, dtype=float)
    plus = np.broadcast_to(np.asarray(plus, dtype=bool), mu.shape)
    # N-(mu,1) is the reflection of N+(-mu,1)
    s = np.where(plus, mu, -mu)
    delta, mean_s = _plus_shift(s)
    variance = 1.0 - delta * mean_s
    entropy = HALF_LOG_2PIE + sps.log_ndtr(s) - 0.5 * s * delta
    mean = np.where(plus, mean_s, -mean_s)
    return mean, variance, entropy


def truncnorm_unit(mu: float, side: TruncSide) -> TruncMoments:
    """Moments of a unit-variance normal with location ``mu`` truncated to ``side``."""
    mu = float(_check_finite(mu, "mu"))
    mean, var, ent = truncnorm_moments(mu, side is TruncSide.PLUS)
    return TruncMoments(float(mean), float(var), float(ent))


def pg_mean(b, c):
    """Mean of a Polya-Gamma PG(b, c) variable, (b / 2c) tanh(c / 2)."""
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ValueError("b must be positive")
    c = np.abs(np.asarray(c, dtype=float))
    small = c < _PG_SERIES_CUTOFF
    safe_c = np.where(small, 1.0, c)
    out = np.where(small, 0.25 - c * c / 48.0, np.tanh(0.5 * safe_c) / (2.0 * safe_c))
    out = b * out
    return float(out) if out.ndim == 0 else out


def gaussian_entropy(Sigma) -> float:
    """Differential entropy of N(., Sigma)."""
    L = linalg.cholesky(np.atleast_2d(Sigma))
    d = L.shape[0]
    return 0.5 * (d * (LOG_2PI + 1.0) + linalg.logdet(L))


def gaussian_kl(mu_q, Sigma_q, mu_p, Sigma_p) -> float:
    """KL( N(mu_q, Sigma_q) || N(mu_p, Sigma_p) )."""
    mu_q = np.atleast_1d(np.asarray(mu_q, dtype=float))
    mu_p = np.atleast_1d(np.asarray(mu_p, dtype=float))
    Lq = linalg.cholesky(np.atleast_2d(Sigma_q))
    Lp = linalg.cholesky(np.atleast_2d(Sigma_p))
    d = mu_q.shape[0]
    if Lq.shape[0] != d or Lp.shape[0] != d or mu_p.shape[0] != d:
        raise ValueError("dimension mismatch")
    if np.array_equal(mu_q, mu_p) and np.array_equal(Lq, Lp):
        return 0.0
    diff = mu_q - mu_p
    maha = float(diff @ linalg.chol_solve(Lp, diff))
    # tr(Sp^-1 Sq) = ||Lp^-1 Lq||_F^2
    W = sla.solve_triangular(Lp, Lq, lower=True)
    trace = float(np.sum(W * W))
    kl = 0.5 * (linalg.logdet(Lp) - linalg.logdet(Lq) - d + maha + trace)
    return max(kl, 0.0)
