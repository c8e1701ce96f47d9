"""Posterior predictive distributions, Monte Carlo evidence and BMA weights.

Random draws use one Philox stream per sample index, seeded from
``SeedSequence([seed, s])``, so results do not depend on how samples are
scheduled.
"""

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from catbin import linalg, special
from catbin.model import Construction, Dataset, GaussianPrior, Link, category_probs, cb_log_likelihood, linear_predictor

DEFAULT_SAMPLES = 100


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


@dataclass
class PosteriorGaussian:
    """Independent Gaussians q(beta_k) = N(means[:, k], cov_k).

    ``covs`` is either one M x M matrix shared by all categories (probit) or a
    K x M x M stack (logit).
    """

    means: np.ndarray
    covs: np.ndarray
    _chols: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float)
        M, K = self.means.shape
        if self.covs.shape not in ((M, M), (K, M, M)):
            raise ValueError(f"covariance shape {self.covs.shape} does not fit means {self.means.shape}")

    @classmethod
    def from_state(cls, state) -> "PosteriorGaussian":
        covs = getattr(state, "Sigma_tilde_k", None)
        if covs is None:
            covs = state.Sigma_tilde
        return cls(state.mu_tilde.copy(), np.array(covs, copy=True))

    @property
    def M(self) -> int:
        return self.means.shape[0]

    @property
    def K(self) -> int:
        return self.means.shape[1]

    @property
    def shared(self) -> bool:
        return self.covs.ndim == 2

    def cov(self, k: int) -> np.ndarray:
        return self.covs if self.shared else self.covs[k]

    @property
    def chols(self) -> np.ndarray:
        if self._chols is None:
            if self.shared:
                self._chols = linalg.cholesky(self.covs)
            else:
                self._chols = np.stack([linalg.cholesky(S) for S in self.covs])
        return self._chols

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One draw of B (M x K), each column from its own Gaussian."""
        Z = rng.standard_normal((self.M, self.K))
        if self.shared:
            return self.means + self.chols @ Z
        return self.means + np.einsum("kij,jk->ik", self.chols, Z)

    def kl_to_prior(self, prior: GaussianPrior) -> float:
        return float(sum(special.gaussian_kl(self.means[:, k], self.cov(k), prior.mu0, prior.Sigma0) for k in range(self.K)))


@dataclass(frozen=True)
class BmaWeights:
    w_cbm: float
    w_cbc: float
    prior_pi_cbm: float = 0.5
    prior_pi_cbc: float = 0.5

    def weight(self, construction: Construction) -> float:
        return self.w_cbm if construction is Construction.CBM else self.w_cbc


class PredictiveMode(enum.Enum):
    PLUGIN = "plugin"  # substitute the posterior mean
    MONTE_CARLO = "mc"  # average over T posterior draws


@dataclass
class PredictiveDistribution:
    probs: np.ndarray  # N* x K, rows sum to one
    mode: PredictiveMode
    T: Optional[int] = None

    @property
    def K(self) -> int:
        return self.probs.shape[1]


@dataclass
class LabelPrediction:
    labels: np.ndarray  # 1-based argmax, lowest index among ties
    tied: np.ndarray  # N x K boolean, every category attaining the row max
    credit: np.ndarray  # 1 / (number of tied categories)

    def credit_for(self, y) -> np.ndarray:
        """Credit earned per row when the truth is ``y``."""
        y = np.asarray(y, dtype=np.int64)
        return self.credit * self.tied[np.arange(y.shape[0]), y - 1]


def estimate_log_evidence(
    q: PosteriorGaussian,
    data: Dataset,
    link: Link,
    construction: Construction,
    prior: GaussianPrior,
    S: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> float:
    """(1/S) sum_s log p_CB(y | B^s) - KL(q || prior), with B^s ~ q."""
    if S < 1:
        raise ValueError("S must be at least 1")
    ll = np.empty(S)
    for s in range(S):
        B = q.sample(sample_rng(seed, s))
        ll[s] = cb_log_likelihood(B, data.X, data.y, link, construction)
    return float(np.mean(ll)) - q.kl_to_prior(prior)


def bma_weights(log_ev_cbm: float, log_ev_cbc: float, prior_pi: Sequence[float] = (0.5, 0.5)) -> BmaWeights:
    """Posterior model probabilities of CBM and CBC."""
    if not (np.isfinite(log_ev_cbm) and np.isfinite(log_ev_cbc)):
        raise ValueError("log evidences must be finite")
    pi = np.asarray(prior_pi, dtype=float)
    if pi.shape != (2,) or np.any(pi < 0) or not np.isclose(pi.sum(), 1.0, rtol=0, atol=1e-12):
        raise ValueError("prior_pi must be two nonnegative numbers summing to 1")
    with np.errstate(divide="ignore"):
        a = np.array([log_ev_cbm, log_ev_cbc]) + np.log(pi)
    w = np.exp(a - np.max(a))
    w = w / w.sum()
    return BmaWeights(float(w[0]), float(w[1]), float(pi[0]), float(pi[1]))


Target = Union[Construction, BmaWeights]


def _probs_for(eta: np.ndarray, link: Link, target: Target) -> np.ndarray:
    if isinstance(target, BmaWeights):
        p = target.w_cbm * category_probs(eta, link, Construction.CBM)
        return p + target.w_cbc * category_probs(eta, link, Construction.CBC)
    return category_probs(eta, link, target)


def posterior_predictive(
    q: PosteriorGaussian,
    X_star,
    link: Link,
    target: Target,
    mode: PredictiveMode = PredictiveMode.PLUGIN,
    T: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> PredictiveDistribution:
    """Category distribution for each row of ``X_star``.

    ``target`` is a construction or a :class:`BmaWeights` for the mixture
    w_cbm p_CBM + w_cbc p_CBC.
    """
    mode = PredictiveMode(mode)
    if X_star.shape[1] != q.M:
        raise ValueError(f"X_star has {X_star.shape[1]} columns, posterior expects {q.M}")
    if mode is PredictiveMode.PLUGIN:
        return PredictiveDistribution(_probs_for(linear_predictor(q.means, X_star), link, target), mode)
    if T < 1:
        raise ValueError("T must be at least 1")
    acc = np.zeros((X_star.shape[0], q.K))
    for t in range(T):
        B = q.sample(sample_rng(seed, t))
        acc += _probs_for(linear_predictor(B, X_star), link, target)
    return PredictiveDistribution(acc / T, mode, T)


def predict_labels(pred: Union[PredictiveDistribution, np.ndarray]) -> LabelPrediction:
    """Argmax labels; a C-way tie credits each tied label with 1/C."""
    P = pred.probs if isinstance(pred, PredictiveDistribution) else np.asarray(pred, dtype=float)
    tied = P == P.max(axis=1, keepdims=True)
    labels = np.argmax(P, axis=1) + 1
    return LabelPrediction(labels, tied, 1.0 / tied.sum(axis=1))


def log_evidence_pair(q, data, link, prior, S=DEFAULT_SAMPLES, seed=0) -> Tuple[float, float]:
    """Evidence estimates for (CBM, CBC) using common posterior draws."""
    return (
        estimate_log_evidence(q, data, link, Construction.CBM, prior, S, seed),
        estimate_log_evidence(q, data, link, Construction.CBC, prior, S, seed),
    )
