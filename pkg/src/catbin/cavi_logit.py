"""IB-CAVI for CB-Logit models (Polya-Gamma augmentation).

q(beta_k) = N(mu_k, Sigma_k) with a covariance per category that changes every
sweep, and q(omega_ik) = PG(1, c_ik).
"""

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from catbin import linalg, special
from catbin.errors import InvalidCovariance, NumericalFailure
from catbin.fitting import FitOptions, FitReport, converged, run_blocks
from catbin.model import Dataset, GaussianPrior


@dataclass
class LogitState:
    mu_tilde: np.ndarray  # M x K
    Sigma_tilde_k: np.ndarray  # K x M x M
    c_tilde: np.ndarray  # N x K, nonnegative
    kappa: np.ndarray  # N x K, ybar - 1/2
    elbo_trace: List[float] = field(default_factory=list)
    Sigma_logdet: Optional[np.ndarray] = None  # log|Sigma_k| per category
    xSx: Optional[np.ndarray] = None  # N x K, x_i' Sigma_k x_i from the last c-update

    @property
    def M(self) -> int:
        return self.mu_tilde.shape[0]

    @property
    def K(self) -> int:
        return self.mu_tilde.shape[1]


def _quad(X, S: np.ndarray) -> np.ndarray:
    XS = np.asarray(X @ S)
    if sp.issparse(X):
        return np.asarray(X.multiply(XS).sum(axis=1)).ravel()
    return np.einsum("nm,nm->n", XS, X)


def _quad_all(state: "LogitState", X) -> np.ndarray:
    return np.column_stack([_quad(X, S) for S in state.Sigma_tilde_k])


def logit_init(data: Dataset, prior: GaussianPrior) -> LogitState:
    """Sigma_k = Sigma0, mu_k = 0 and c = 0 for every category."""
    K, M, N = data.K, data.M, data.N
    Sigmas = np.broadcast_to(prior.Sigma0, (K, M, M)).copy()
    return LogitState(
        mu_tilde=np.zeros((M, K)),
        Sigma_tilde_k=Sigmas,
        c_tilde=np.zeros((N, K)),
        kappa=data.onehot - 0.5,
        Sigma_logdet=np.full(K, prior.logdet),
    )


def logit_update_c(state: LogitState, data: Dataset) -> np.ndarray:
    """c_ik = sqrt(x_i' Sigma_k x_i + (x_i' mu_k)^2), the nonnegative root."""
    lin = np.asarray(data.X @ state.mu_tilde)
    state.xSx = _quad_all(state, data.X)
    radicand = state.xSx + lin * lin
    assert np.all(radicand >= -1e-12 * (1.0 + np.abs(lin * lin))), "negative quadratic form"
    state.c_tilde = np.sqrt(np.maximum(radicand, 0.0))
    return state.c_tilde


def logit_update_beta(state: LogitState, data: Dataset, prior: GaussianPrior, workers: int = 1):
    """Per-category Gaussian update given E[omega] = pg_mean(1, c)."""
    X = data.X
    P0 = prior.precision
    h0 = prior.precision_mean
    omega = special.pg_mean(1.0, state.c_tilde)
    Xt_kappa = np.asarray(X.T @ state.kappa)

    def block(b):
        for k in range(b.start, b.stop):
            w = omega[:, k]
            G = X.T @ (sp.diags(w) @ X) if sp.issparse(X) else (X.T * w) @ X
            G = np.asarray(G.toarray() if sp.issparse(G) else G)
            try:
                L = linalg.cholesky(G + P0)
            except InvalidCovariance as exc:
                raise NumericalFailure(f"posterior precision for category {k + 1} is not SPD") from exc
            S = linalg.chol_inverse(L)
            state.Sigma_tilde_k[k] = S
            state.Sigma_logdet[k] = -linalg.logdet(L)
            state.mu_tilde[:, k] = linalg.chol_solve(L, Xt_kappa[:, k] + h0)

    run_blocks(block, data.K, workers)
    return state.mu_tilde, state.Sigma_tilde_k


def _neg_kl_terms(state: LogitState, prior: GaussianPrior) -> np.ndarray:
    M = state.M
    D = state.mu_tilde - prior.mu0[:, None]
    maha = np.einsum("mk,mk->k", D, prior.precision @ D)
    trace = np.einsum("ij,kji->k", prior.precision, state.Sigma_tilde_k)
    return -0.5 * (prior.logdet - state.Sigma_logdet - M + maha + trace)


def logit_elbo(state: LogitState, data: Dataset, prior: GaussianPrior, per_category: bool = False):
    """ELBO of the PG-augmented IB-Logit model.

    Valid for any c >= 0 (not only the optimal one), which makes each half
    sweep separately monotone.
    """
    lin = np.asarray(data.X @ state.mu_tilde)
    c = state.c_tilde
    omega = special.pg_mean(1.0, c)
    xSx = _quad_all(state, data.X)
    obs = (
        state.kappa * lin
        - 0.5 * c
        - np.logaddexp(0.0, -c)
        - 0.5 * omega * (xSx + lin * lin - c * c)
    )
    per_k = np.sum(obs, axis=0) + _neg_kl_terms(state, prior)
    return per_k if per_category else float(np.sum(per_k))


def logit_sweep(state: LogitState, data: Dataset, prior: GaussianPrior, workers: int = 1) -> None:
    logit_update_c(state, data)
    logit_update_beta(state, data, prior, workers=workers)


def logit_fit(data: Dataset, prior: GaussianPrior, opts: Optional[FitOptions] = None, state: Optional[LogitState] = None):
    """Run IB-CAVI for CB-Logit; returns ``(LogitState, FitReport)``."""
    opts = opts or FitOptions()
    if prior.M != data.M:
        raise ValueError(f"prior has dimension {prior.M} but X has {data.M} columns")
    if state is None:
        state = logit_init(data, prior)
    report = FitReport()
    if opts.compute_elbo:
        state.elbo_trace.append(logit_elbo(state, data, prior))
    for _ in range(opts.max_iters):
        t0 = time.perf_counter()
        logit_sweep(state, data, prior, workers=opts.workers)
        if opts.compute_elbo:
            state.elbo_trace.append(logit_elbo(state, data, prior))
        report.iter_seconds.append(time.perf_counter() - t0)
        report.n_iters += 1
        if not np.all(np.isfinite(state.mu_tilde)):
            raise NumericalFailure("non-finite variational means")
        if opts.compute_elbo and converged(state.elbo_trace, data.N, data.K, opts.elbo_drop_tol):
            report.converged = True
            break
    report.elbo_trace = list(state.elbo_trace)
    return state, report
