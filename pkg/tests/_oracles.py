"""Independent numerical oracles shared by several test modules."""

import numpy as np
from scipy import integrate, stats
from scipy import special as sps

from catbin.special import TruncSide


def quad_truncnorm(mu, side):
    """Mean, variance and entropy of N+/-(mu, 1) by adaptive quadrature."""
    if side is TruncSide.PLUS:
        lo, hi, logZ = 0.0, np.inf, sps.log_ndtr(mu)
    else:
        lo, hi, logZ = -np.inf, 0.0, sps.log_ndtr(-mu)

    def logf(x):
        return stats.norm.logpdf(x - mu) - logZ

    kw = dict(epsabs=1e-14, epsrel=1e-13, limit=200)
    mean = integrate.quad(lambda x: x * np.exp(logf(x)), lo, hi, **kw)[0]
    var = integrate.quad(lambda x: (x - mean) ** 2 * np.exp(logf(x)), lo, hi, **kw)[0]
    ent = integrate.quad(lambda x: -np.exp(logf(x)) * logf(x), lo, hi, **kw)[0]
    return mean, var, ent
