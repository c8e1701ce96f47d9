"""IB-CAVI for CB-Probit models (truncated-normal augmentation).

Each category k carries q(beta_k) = N(mu_k, Sigma) with a covariance that is
shared across categories and fixed for the whole run, and q(z_ik) is a
unit-variance normal with location eta_ik truncated to the positive half line
when y_i = k and to the negative half line otherwise.
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

TWO_PHI0 = 2.0 / np.sqrt(2.0 * np.pi)


@dataclass
class ProbitState:
    mu_tilde: np.ndarray  # M x K
    Sigma_tilde: np.ndarray  # M x M, shared by every category
    eta_tilde: object  # N x K, ndarray or csr_matrix in sparse mode
    elbo_trace: List[float] = field(default_factory=list)
    Sigma_logdet: float = 0.0
    xSx: Optional[np.ndarray] = None  # x_i' Sigma x_i per row

    @property
    def M(self) -> int:
        return self.mu_tilde.shape[0]

    @property
    def K(self) -> int:
        return self.mu_tilde.shape[1]

    def eta_dense(self) -> np.ndarray:
        eta = self.eta_tilde
        return eta.toarray() if sp.issparse(eta) else eta


@dataclass
class SparseExpectedZ:
    """E_q[Z] = star + 2 phi(0) (dagger - ddagger) without a dense N x K array.

    ``star`` holds E[z_ik] where eta_ik != 0, ``dagger`` flags eta_ik = 0 with
    y_i = k, and ddagger (eta_ik = 0, y_i != k) is implied by ``nonzero``.
    """

    star: sp.csr_matrix
    dagger: sp.csr_matrix
    nonzero: sp.csr_matrix  # 0/1 pattern of eta != 0

    @property
    def shape(self):
        return self.star.shape

    def ddagger(self) -> np.ndarray:
        ones = np.ones(self.shape)
        return ones - self.nonzero.toarray() - self.dagger.toarray()

    def to_dense(self) -> np.ndarray:
        return self.star.toarray() + TWO_PHI0 * (self.dagger.toarray() - self.ddagger())

    def rmatmul(self, X) -> np.ndarray:
        """X^T E_q[Z] as a dense M x K array."""
        K = self.shape[1]
        col_sums = np.asarray(X.sum(axis=0)).ravel()
        XtStar = _dense(X.T @ self.star)
        XtDag = _dense(X.T @ self.dagger)
        XtNz = _dense(X.T @ self.nonzero)
        # dagger - ddagger = 2 dagger - 1 + nonzero
        return XtStar + TWO_PHI0 * (2.0 * XtDag - col_sums[:, None] * np.ones((1, K)) + XtNz)


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def _gram(X) -> np.ndarray:
    return _dense(X.T @ X)


def probit_init(data: Dataset, prior: GaussianPrior, ridge: float = 0.0, sparse: Optional[bool] = None) -> ProbitState:
    """Shared covariance (Sigma0^-1 + X'X)^-1 and zero means."""
    X = data.X
    try:
        L = linalg.cholesky(prior.precision + _gram(X), ridge=ridge)
    except InvalidCovariance as exc:
        raise NumericalFailure("posterior precision Sigma0^-1 + X'X is not SPD; try a ridge") from exc
    Sigma = linalg.chol_inverse(L)
    XS = X @ Sigma
    xSx = np.asarray(X.multiply(XS).sum(axis=1)).ravel() if sp.issparse(X) else np.einsum("nm,nm->n", XS, X)
    mu = np.zeros((data.M, data.K))
    use_sparse = data.is_sparse if sparse is None else sparse
    eta = sp.csr_matrix((data.N, data.K)) if use_sparse else np.zeros((data.N, data.K))
    return ProbitState(mu, Sigma, eta, [], -linalg.logdet(L), xSx)


def probit_update_z(state: ProbitState, data: Dataset) -> np.ndarray:
    """E_q[z_ik] = eta_ik + delta(eta_ik), upper tail iff y_i = k."""
    eta = state.eta_dense()
    return eta + special.truncnorm_shift(eta, data.onehot > 0.5)


def probit_expected_z_sparse(state: ProbitState, data: Dataset) -> SparseExpectedZ:
    """E_q[Z] split into its nonzero-eta part and the two constant zero-eta parts."""
    eta = sp.csr_matrix(state.eta_tilde)
    eta.eliminate_zeros()
    eta.sort_indices()
    rows = np.repeat(np.arange(eta.shape[0]), np.diff(eta.indptr))
    cols = eta.indices
    hit = (data.y[rows] - 1) == cols
    star_vals = eta.data + special.truncnorm_shift(eta.data, hit)
    star = sp.csr_matrix((star_vals, eta.indices.copy(), eta.indptr.copy()), shape=eta.shape)
    nonzero = sp.csr_matrix((np.ones_like(eta.data), eta.indices.copy(), eta.indptr.copy()), shape=eta.shape)
    N = data.N
    on_label = np.asarray(nonzero[np.arange(N), data.y - 1]).ravel() == 0
    idx = np.flatnonzero(on_label)
    dagger = sp.csr_matrix((np.ones(idx.size), (idx, data.y[idx] - 1)), shape=eta.shape)
    return SparseExpectedZ(star, dagger, nonzero)


def probit_update_beta(state: ProbitState, data: Dataset, prior: GaussianPrior, Ez, workers: int = 1, refresh_eta: bool = True) -> np.ndarray:
    """mu_k = Sigma (Sigma0^-1 mu0 + X' E[z_k]); then eta = X mu unless told not to."""
    X = data.X
    shift = prior.precision_mean[:, None]
    if isinstance(Ez, SparseExpectedZ):
        state.mu_tilde = state.Sigma_tilde @ (Ez.rmatmul(X) + shift)
    else:
        def block(b):
            state.mu_tilde[:, b] = state.Sigma_tilde @ (X.T @ Ez[:, b] + shift)

        run_blocks(block, data.K, workers)
    if refresh_eta:
        refresh_linear_predictor(state, data, workers)
    return state.mu_tilde


def refresh_linear_predictor(state: ProbitState, data: Dataset, workers: int = 1) -> None:
    """Optimal q(z) update: eta = X mu."""
    X = data.X
    if sp.issparse(state.eta_tilde):
        mu = sp.csr_matrix(state.mu_tilde)
        eta = sp.csr_matrix(X @ mu)
        eta.eliminate_zeros()
        state.eta_tilde = eta
        return
    if state.eta_tilde.shape != (data.N, data.K):
        state.eta_tilde = np.zeros((data.N, data.K))

    def block(b):
        state.eta_tilde[:, b] = X @ state.mu_tilde[:, b]

    run_blocks(block, data.K, workers)


def _neg_kl_terms(mu_tilde, Sigma_logdet, Sigma_tilde, prior: GaussianPrior) -> np.ndarray:
    """-KL(q(beta_k) || prior) for each k, with the covariance shared."""
    M = mu_tilde.shape[0]
    D = mu_tilde - prior.mu0[:, None]
    maha = np.einsum("mk,mk->k", D, prior.precision @ D)
    trace = float(np.sum(prior.precision * Sigma_tilde))
    return -0.5 * (prior.logdet - Sigma_logdet - M + maha + trace)


def probit_elbo(state: ProbitState, data: Dataset, prior: GaussianPrior, per_category: bool = False):
    """ELBO of the augmented IB-Probit model (the CB surrogate bound).

    Valid for any truncated-normal locations ``eta_tilde``; when they equal
    X mu it reduces to the closed form with the Mills-ratio term.
    """
    eta = state.eta_dense()
    lin = np.asarray(data.X @ state.mu_tilde)
    mean, _, entropy = special.truncnorm_moments(eta, data.onehot > 0.5)
    second = 1.0 + eta * mean
    energy = (
        -0.5 * special.LOG_2PI
        - 0.5 * second
        + mean * lin
        - 0.5 * (state.xSx[:, None] + lin * lin)
    )
    per_k = np.sum(energy + entropy, axis=0)
    per_k = per_k + _neg_kl_terms(state.mu_tilde, state.Sigma_logdet, state.Sigma_tilde, prior)
    return per_k if per_category else float(np.sum(per_k))


def probit_sweep(state: ProbitState, data: Dataset, prior: GaussianPrior, workers: int = 1, sparse: bool = False) -> None:
    if sparse:
        Ez = probit_expected_z_sparse(state, data)
    else:
        Ez = probit_update_z(state, data)
    probit_update_beta(state, data, prior, Ez, workers=workers)


def probit_fit(data: Dataset, prior: GaussianPrior, opts: Optional[FitOptions] = None, state: Optional[ProbitState] = None):
    """Run IB-CAVI for CB-Probit; returns ``(ProbitState, FitReport)``."""
    opts = opts or FitOptions()
    if prior.M != data.M:
        raise ValueError(f"prior has dimension {prior.M} but X has {data.M} columns")
    if state is None:
        state = probit_init(data, prior, ridge=opts.ridge)
    sparse = sp.issparse(state.eta_tilde)
    report = FitReport()
    if opts.compute_elbo:
        state.elbo_trace.append(probit_elbo(state, data, prior))
    for _ in range(opts.max_iters):
        t0 = time.perf_counter()
        probit_sweep(state, data, prior, workers=opts.workers, sparse=sparse)
        if opts.compute_elbo:
            state.elbo_trace.append(probit_elbo(state, data, prior))
        report.iter_seconds.append(time.perf_counter() - t0)
        report.n_iters += 1
        if not np.all(np.isfinite(state.mu_tilde)):
            raise NumericalFailure("non-finite variational means")
        if opts.compute_elbo and converged(state.elbo_trace, data.N, data.K, opts.elbo_drop_tol):
            report.converged = True
            break
    report.elbo_trace = list(state.elbo_trace)
    return state, report
