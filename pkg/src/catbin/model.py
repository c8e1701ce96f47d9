"""Data model and exact likelihoods for IB, CBM and CBC categorical regressions."""

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy import special as sps

from catbin import linalg
from catbin.errors import InvalidLabel, ShapeError


class Link(enum.Enum):
    """Binary link cdf H: standard normal (probit) or standard logistic (logit)."""

    PROBIT = "probit"
    LOGIT = "logit"

    def cdf(self, eta):
        eta = np.asarray(eta, dtype=float)
        return sps.ndtr(eta) if self is Link.PROBIT else sps.expit(eta)

    def log_cdf(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self is Link.PROBIT:
            return sps.log_ndtr(eta)
        return -np.logaddexp(0.0, -eta)

    def log_sf(self, eta):
        """log(1 - H(eta))."""
        eta = np.asarray(eta, dtype=float)
        if self is Link.PROBIT:
            return sps.log_ndtr(-eta)
        return -np.logaddexp(0.0, eta)

    def log_odds(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self is Link.LOGIT:
            return eta
        return sps.log_ndtr(eta) - sps.log_ndtr(-eta)

    def ppf(self, p):
        """Inverse cdf H^-1."""
        p = np.asarray(p, dtype=float)
        return sps.ndtri(p) if self is Link.PROBIT else sps.logit(p)


class Construction(enum.Enum):
    """How a categorical likelihood is built from K binary bits."""

    CBM = "cbm"  # normalize the marginal success probabilities
    CBC = "cbc"  # condition the IB model on one-hot outcomes (normalized odds)


@dataclass(frozen=True)
class Dataset:
    """Covariates ``X`` (N x M, dense or scipy.sparse) and labels ``y`` in 1..K.

    No intercept column is added here; include one in ``X`` if wanted.
    """

    X: object
    y: np.ndarray
    K: int

    def __post_init__(self):
        X = self.X
        if sp.issparse(X):
            X = sp.csr_matrix(X, dtype=float)
            finite = np.all(np.isfinite(X.data))
        else:
            X = np.atleast_2d(np.asarray(X, dtype=float))
            finite = np.all(np.isfinite(X))
        if X.ndim != 2:
            raise ShapeError("X must be two-dimensional")
        if not finite:
            raise ValueError("X contains non-finite values")
        y = np.asarray(self.y)
        if y.ndim != 1:
            raise ShapeError("y must be one-dimensional")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise InvalidLabel("labels must be integers")
        y = y.astype(np.int64)
        if y.shape[0] < 1:
            raise ShapeError("need at least one observation")
        if X.shape[0] != y.shape[0]:
            raise ShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]} labels")
        if int(self.K) < 2:
            raise InvalidLabel("need K >= 2 categories")
        if y.min() < 1 or y.max() > self.K:
            raise InvalidLabel(f"labels must lie in 1..{self.K}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "K", int(self.K))

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def M(self) -> int:
        return self.X.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.X)

    @cached_property
    def onehot(self) -> np.ndarray:
        return one_hot(self.y, self.K)


@dataclass(frozen=True)
class GaussianPrior:
    """beta_k ~ N(mu0, Sigma0) independently for every category."""

    mu0: np.ndarray
    Sigma0: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        Sigma0 = np.atleast_2d(np.asarray(self.Sigma0, dtype=float))
        if Sigma0.shape != (mu0.shape[0], mu0.shape[0]):
            raise ShapeError("prior mean and covariance dimensions disagree")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "Sigma0", Sigma0)
        object.__setattr__(self, "_chol", linalg.cholesky(Sigma0))

    @classmethod
    def isotropic(cls, M: int, mean: float = 0.0, var: float = 1.0) -> "GaussianPrior":
        return cls(np.full(M, float(mean)), var * np.eye(M))

    @property
    def M(self) -> int:
        return self.mu0.shape[0]

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    @cached_property
    def precision(self) -> np.ndarray:
        return linalg.chol_inverse(self._chol)

    @cached_property
    def precision_mean(self) -> np.ndarray:
        """Sigma0^-1 mu0."""
        return linalg.chol_solve(self._chol, self.mu0)

    @cached_property
    def logdet(self) -> float:
        return linalg.logdet(self._chol)


def one_hot(y, K: int) -> np.ndarray:
    """N x K indicator matrix with a single 1 per row at column y_i (1-based)."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError("labels must be one-dimensional")
    if y.size and (y.min() < 1 or y.max() > K):
        raise InvalidLabel(f"labels must lie in 1..{K}")
    Y = np.zeros((y.shape[0], K))
    Y[np.arange(y.shape[0]), y.astype(np.int64) - 1] = 1.0
    return Y


def linear_predictor(B, X) -> np.ndarray:
    """eta = X B, an N x K matrix."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if X.shape[1] != B.shape[0]:
        raise ShapeError(f"X has {X.shape[1]} columns but B has {B.shape[0]} rows")
    out = X @ B
    return np.asarray(out.toarray() if sp.issparse(out) else out)


def log_category_probs(eta, link: Link, construction: Construction) -> np.ndarray:
    """Log category probabilities for each row of ``eta`` (last axis = categories)."""
    eta = np.asarray(eta, dtype=float)
    if construction is Construction.CBM:
        score = link.log_cdf(eta)
    else:
        score = link.log_odds(eta)
    return score - sps.logsumexp(score, axis=-1, keepdims=True)


def category_probs(eta, link: Link, construction: Construction) -> np.ndarray:
    """Category probabilities under the CBM or CBC likelihood.

    CBM normalizes H(eta_k); CBC normalizes the odds H(eta_k) / (1 - H(eta_k)).
    Both are evaluated from log scores with max subtraction.
    """
    return np.exp(log_category_probs(eta, link, construction))


def ib_log_likelihood(B, X, Ybar, link: Link, per_observation: bool = False):
    """log p_IB(Ybar | B): independent Bernoulli(H(eta_ik)) bits."""
    eta = linear_predictor(B, X)
    Ybar = np.asarray(Ybar, dtype=float)
    if Ybar.shape != eta.shape:
        raise ShapeError("one-hot matrix does not match X B")
    terms = np.where(Ybar > 0.5, link.log_cdf(eta), link.log_sf(eta))
    rows = terms.sum(axis=1)
    return rows if per_observation else float(np.sum(rows))


def cb_log_likelihood(B, X, y, link: Link, construction: Construction, per_observation: bool = False):
    """log p_CB(y | B) under the chosen construction."""
    eta = linear_predictor(B, X)
    y = np.asarray(y, dtype=np.int64)
    if y.shape[0] != eta.shape[0]:
        raise ShapeError("label count does not match X")
    if y.min() < 1 or y.max() > eta.shape[1]:
        raise InvalidLabel(f"labels must lie in 1..{eta.shape[1]}")
    lp = log_category_probs(eta, link, construction)
    rows = lp[np.arange(eta.shape[0]), y - 1]
    return rows if per_observation else float(np.sum(rows))
