"""Simulated softmax data, evaluation metrics, reference baselines and the
process-sequence featurizer."""

import csv
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy import special as sps

from catbin.errors import InvalidSpec
from catbin.model import Dataset
from catbin.predict import PredictiveDistribution, PredictiveMode, predict_labels

PROB_FLOOR = 1e-10


def philox(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class SimSpec:
    """Variances are on the variance scale (sigma^2)."""

    N: int
    K: int
    M: int
    sigma_high: float
    sigma_low: float = 0.001
    sigma_int: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise InvalidSpec("N must be positive")
        if self.K < 2:
            raise InvalidSpec("K must be at least 2")
        if self.M < 1:
            raise InvalidSpec("M must be positive")
        if self.M < self.K:
            raise InvalidSpec(f"M = {self.M} < K = {self.K} leaves no covariates per category")
        if min(self.sigma_high, self.sigma_low, self.sigma_int) <= 0:
            raise InvalidSpec("variances must be positive")
        if self.sigma_high <= self.sigma_low:
            raise InvalidSpec("sigma_high must exceed sigma_low")

    def variance_mask(self) -> np.ndarray:
        """(M+1) x K prior variances of the true weights, intercept row first."""
        S = self.M // self.K
        var = np.full((self.M + 1, self.K), float(self.sigma_low))
        var[0] = self.sigma_int
        for m in range(1, self.M + 1):
            k = math.ceil(m / S)
            if k <= self.K:
                var[m, k - 1] = self.sigma_high
        return var


@dataclass
class SimOutput:
    data: Dataset  # X includes the leading ones column
    B_true: np.ndarray  # (M+1) x K
    probs: np.ndarray  # N x K


def softmax_rows(eta) -> np.ndarray:
    return sps.softmax(np.asarray(eta, dtype=float), axis=1)


def draw_categorical(P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(P.shape[0])
    y = (np.cumsum(P, axis=1) < u[:, None]).sum(axis=1) + 1
    return np.minimum(y, P.shape[1])


def simulate(spec: SimSpec) -> SimOutput:
    rng = philox(spec.seed)
    B = rng.standard_normal((spec.M + 1, spec.K)) * np.sqrt(spec.variance_mask())
    X = np.hstack([np.ones((spec.N, 1)), rng.standard_normal((spec.N, spec.M))])
    P = softmax_rows(X @ B)
    y = draw_categorical(P, rng)
    return SimOutput(Dataset(X, y, spec.K), B, P)


def mean_conditional_entropy(probs) -> float:
    """-(1/N) sum_i sum_k p_ik ln p_ik, with 0 ln 0 = 0."""
    P = np.atleast_2d(np.asarray(probs, dtype=float))
    return float(np.mean(np.sum(sps.entr(P), axis=1)))


def floor_probs(P, eps: float = PROB_FLOOR) -> np.ndarray:
    P = np.maximum(np.asarray(P, dtype=float), eps)
    return P / P.sum(axis=1, keepdims=True)


def _probs(pred) -> np.ndarray:
    return pred.probs if isinstance(pred, PredictiveDistribution) else np.asarray(pred, dtype=float)


def holdout_log_likelihood(pred, y_test, floor: Optional[float] = None) -> float:
    """Mean log predictive probability of the observed test labels."""
    P = _probs(pred)
    y = np.asarray(y_test, dtype=np.int64)
    if P.shape[0] != y.shape[0]:
        raise ValueError(f"{P.shape[0]} prediction rows but {y.shape[0]} labels")
    if floor is not None:
        P = floor_probs(P, floor)
    with np.errstate(divide="ignore"):
        return float(np.mean(np.log(P[np.arange(y.shape[0]), y - 1])))


def accuracy(pred, y_test) -> float:
    """Tie-adjusted accuracy: a C-way tie containing the truth earns 1/C."""
    y = np.asarray(y_test, dtype=np.int64)
    P = _probs(pred)
    if P.shape[0] != y.shape[0]:
        raise ValueError(f"{P.shape[0]} prediction rows but {y.shape[0]} labels")
    return float(np.mean(predict_labels(P).credit_for(y)))


def row_kl(p_true, p_model) -> np.ndarray:
    """KL(p_true || p_model) for each row."""
    return np.sum(sps.rel_entr(np.asarray(p_true, dtype=float), np.asarray(p_model, dtype=float)), axis=1)


def mean_kl(p_true, p_model) -> float:
    return float(np.mean(row_kl(p_true, p_model)))


# ---- baselines ---------------------------------------------------------------


@dataclass
class SoftmaxFit:
    weights: np.ndarray  # M x K
    log_lik: float
    n_iters: int
    converged: bool

    def predict(self, X, eps: float = PROB_FLOOR) -> PredictiveDistribution:
        eta = X @ self.weights
        return PredictiveDistribution(floor_probs(softmax_rows(eta), eps), PredictiveMode.PLUGIN)


def _softmax_objective(B, X, Y):
    eta = X @ B
    lse = sps.logsumexp(eta, axis=1)
    ll = float(np.sum(np.sum(eta * Y, axis=1) - lse))
    grad = X.T @ (Y - np.exp(eta - lse[:, None]))
    return ll, np.asarray(grad)


def softmax_mle(data: Dataset, max_iters: int = 5000, grad_tol: float = 1e-6) -> SoftmaxFit:
    """Maximum likelihood softmax weights by gradient ascent with backtracking.

    Starts at zero and stops once the gradient max-norm drops below
    ``grad_tol``; hitting ``max_iters`` returns the iterate with
    ``converged=False``.
    """
    X = data.X.toarray() if data.is_sparse else data.X
    Y = data.onehot
    B = np.zeros((data.M, data.K))
    ll, g = _softmax_objective(B, X, Y)
    for it in range(1, max_iters + 1):
        if np.max(np.abs(g)) < grad_tol:
            return SoftmaxFit(B, ll, it - 1, True)
        gg = float(np.sum(g * g))
        step = 1.0
        while True:
            B_new = B + step * g
            ll_new, g_new = _softmax_objective(B_new, X, Y)
            if ll_new >= ll + 1e-4 * step * gg:
                break
            step *= 0.5
            if step < 1e-20:
                return SoftmaxFit(B, ll, it, False)
        B, ll, g = B_new, ll_new, g_new
    return SoftmaxFit(B, ll, max_iters, bool(np.max(np.abs(g)) < grad_tol))


@dataclass
class BaseratePredictor:
    freqs: np.ndarray  # floored training frequencies

    def __call__(self, n_rows: int) -> PredictiveDistribution:
        return PredictiveDistribution(np.tile(self.freqs, (n_rows, 1)), PredictiveMode.PLUGIN)


def baserate_predictor(y_train, K: int, eps: float = PROB_FLOOR) -> BaseratePredictor:
    y = np.asarray(y_train, dtype=np.int64)
    if y.size == 0:
        raise ValueError("need at least one training label")
    counts = np.bincount(y - 1, minlength=K)[:K].astype(float)
    return BaseratePredictor(floor_probs((counts / counts.sum())[None, :], eps)[0])


# ---- sequences ---------------------------------------------------------------


def featurize_sequence(events: Sequence[Tuple[int, float]], W: int, tau: float, K: Optional[int] = None) -> Dataset:
    """Exponentially decayed recency features over a window of W predecessors.

    ``events`` are ``(process_id, timestamp)`` pairs with 0-based process ids
    in time order. Row i has, in column p, the sum of exp(-dt/tau) over the
    (at most) W events preceding i that ran process p. The label is the
    process of event i, 1-based.
    """
    if W < 1:
        raise ValueError("W must be at least 1")
    if not tau > 0:
        raise ValueError("tau must be positive")
    if len(events) == 0:
        raise ValueError("no events")
    proc = np.asarray([e[0] for e in events], dtype=np.int64)
    t = np.asarray([e[1] for e in events], dtype=float)
    if np.any(np.diff(t) < 0):
        raise ValueError("timestamps must be nondecreasing")
    if proc.min() < 0:
        raise ValueError("process ids must be nonnegative")
    K = int(proc.max()) + 1 if K is None else int(K)
    N = proc.shape[0]
    rows, cols, vals = [], [], []
    for lag in range(1, W + 1):
        i = np.arange(lag, N)
        rows.append(i)
        cols.append(proc[i - lag])
        vals.append(np.exp(-(t[i] - t[i - lag]) / tau))
    X = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, K)).tocsr()
    X.sum_duplicates()
    X.eliminate_zeros()
    return Dataset(X, proc + 1, K)


@dataclass
class EventLog:
    timestamps: np.ndarray
    users: List[str]
    process_ids: np.ndarray  # 0-based, by first appearance
    vocab: List[str]

    def events(self, user: Optional[str] = None) -> List[Tuple[int, int]]:
        keep = range(len(self.users)) if user is None else [i for i, u in enumerate(self.users) if u == user]
        return [(int(self.process_ids[i]), int(self.timestamps[i])) for i in keep]


def read_event_log(path, delimiter: str = ",") -> EventLog:
    """Rows of ``timestamp,user,process``; a non-numeric first row is a header."""
    ts, users, procs = [], [], []
    vocab: dict = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter)):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 3:
                raise ValueError(f"line {lineno + 1}: expected 3 fields, got {len(row)}")
            try:
                stamp = int(row[0])
            except ValueError:
                if lineno == 0:
                    continue
                raise ValueError(f"line {lineno + 1}: timestamp {row[0]!r} is not an integer")
            ts.append(stamp)
            users.append(row[1])
            procs.append(vocab.setdefault(row[2], len(vocab)))
    return EventLog(np.asarray(ts, dtype=np.int64), users, np.asarray(procs, dtype=np.int64), list(vocab))


def train_test_split(n: int, train_frac: float = 0.8, seed: Optional[int] = 0, chronological: bool = False):
    """Index arrays ``(train, test)``; chronological keeps the first share for training."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    n_train = int(math.floor(train_frac * n)) if chronological else int(round(train_frac * n))
    if chronological:
        idx = np.arange(n)
    else:
        idx = philox(seed).permutation(n)
    return np.sort(idx[:n_train]), np.sort(idx[n_train:])


def subset(data: Dataset, idx) -> Dataset:
    return Dataset(data.X[idx], data.y[idx], data.K)
