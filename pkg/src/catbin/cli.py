"""Command-line interface: simulate, fit, predict, evaluate, featurize, bma-weights.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

import argparse
import dataclasses
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from catbin import simgen
from catbin.cavi_logit import logit_fit
from catbin.cavi_probit import probit_fit
from catbin.errors import InvalidLabel, InvalidSpec, NumericalFailure, ShapeError
from catbin.fitting import FitOptions
from catbin.model import Construction, Dataset, GaussianPrior, Link
from catbin.predict import (
    PosteriorGaussian,
    PredictiveMode,
    bma_weights,
    log_evidence_pair,
    posterior_predictive,
    predict_labels,
)

FORMAT_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# ---- configuration -----------------------------------------------------------


@dataclass
class RunConfig:
    link: str = "probit"
    target: str = "bma"  # cbm, cbc or bma
    prior_mean: object = 0.0  # scalar or length-M list
    prior_var: object = 1.0  # scalar (times I) or M x M nested list
    max_iters: int = 100
    elbo_drop_tol: float = 0.1
    compute_elbo: bool = True
    ridge: float = 0.0
    S: int = 100
    T: int = 100
    mode: str = "plugin"  # plugin or mc
    seed: int = 0
    workers: int = 1
    pi_cbm: float = 0.5
    intercept: bool = False
    zscore: bool = False
    sparse: bool = False

    def validate(self) -> "RunConfig":
        try:
            Link(self.link)
            PredictiveMode(self.mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.target not in ("cbm", "cbc", "bma"):
            raise ConfigError(f"target must be cbm, cbc or bma, not {self.target!r}")
        if not 0.0 <= self.pi_cbm <= 1.0:
            raise ConfigError("pi_cbm must lie in [0, 1]")
        if self.S < 1 or self.T < 1:
            raise ConfigError("S and T must be at least 1")
        try:
            self.fit_options()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def fit_options(self) -> FitOptions:
        return FitOptions(self.max_iters, self.elbo_drop_tol, self.workers, self.compute_elbo, self.ridge)

    def prior(self, M: int) -> GaussianPrior:
        mean = np.asarray(self.prior_mean, dtype=float)
        var = np.asarray(self.prior_var, dtype=float)
        mu0 = np.full(M, float(mean)) if mean.ndim == 0 else mean
        Sigma0 = float(var) * np.eye(M) if var.ndim == 0 else var
        if mu0.shape != (M,) or Sigma0.shape != (M, M):
            raise ConfigError(f"prior dimensions do not match the {M} model columns")
        try:
            return GaussianPrior(mu0, Sigma0)
        except NumericalFailure as exc:
            raise ConfigError("prior_var is not positive definite") from exc

    def echo(self) -> dict:
        """Config as stored in posterior files; worker count is excluded so
        outputs do not depend on it."""
        d = dataclasses.asdict(self)
        d.pop("workers")
        return d


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _json_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"not a number or JSON list: {text!r}") from exc


def _config_types():
    types = {}
    for f in dataclasses.fields(RunConfig):
        if f.type is bool:
            types[f.name] = _bool
        elif f.type is int:
            types[f.name] = int
        elif f.type is float:
            types[f.name] = float
        elif f.type is str:
            types[f.name] = str
        else:
            types[f.name] = _json_value
    return types


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat JSON config (a posterior file's config block also works)")
    group = parser.add_argument_group("run configuration")
    for name, typ in _config_types().items():
        if typ is _bool:
            group.add_argument(f"--{name}", type=_bool, nargs="?", const=True, default=None)
        else:
            group.add_argument(f"--{name}", type=typ, default=None)


def load_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if isinstance(raw, dict) and "version" in raw and isinstance(raw.get("config"), dict):
            raw = raw["config"]
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        types = _config_types()
        for key, val in raw.items():
            try:
                values[key] = val if types[key] is _json_value else types[key](val)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"bad value for {key}: {val!r}") from exc
    for f in dataclasses.fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return RunConfig(**values).validate()


# ---- files -------------------------------------------------------------------


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def format_matrix(A) -> str:
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(A), fmt="%.17g", delimiter=",")
    return buf.getvalue()


def read_matrix(path) -> np.ndarray:
    try:
        A = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read matrix {path}: {exc}") from exc
    if not np.all(np.isfinite(A)):
        raise DataError(f"{path} contains non-finite values")
    return A


def read_labels(path) -> np.ndarray:
    try:
        y = np.loadtxt(path, delimiter=",", ndmin=1, comments="#")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read labels {path}: {exc}") from exc
    if y.ndim != 1 or not np.all(y == np.round(y)):
        raise DataError(f"{path} must hold one integer label per line")
    return y.astype(np.int64)


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


@dataclass
class Transform:
    """Covariate preprocessing that travels with a posterior."""

    mean: Optional[List[float]] = None
    std: Optional[List[float]] = None
    intercept: bool = False

    @classmethod
    def fit(cls, X: np.ndarray, zscore: bool, intercept: bool) -> "Transform":
        if not zscore:
            return cls(None, None, intercept)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        const = std == 0
        # constant columns are left as they are
        mean[const], std[const] = 0.0, 1.0
        return cls(mean.tolist(), std.tolist(), intercept)

    def apply(self, X: np.ndarray) -> np.ndarray:
        if self.mean is not None:
            if X.shape[1] != len(self.mean):
                raise DataError(f"X has {X.shape[1]} columns, expected {len(self.mean)}")
            X = (X - np.asarray(self.mean)) / np.asarray(self.std)
        if self.intercept:
            X = np.hstack([np.ones((X.shape[0], 1)), X])
        return X

    def to_json(self) -> dict:
        return {"intercept": self.intercept, "mean": self.mean, "std": self.std}

    @classmethod
    def from_json(cls, d: dict) -> "Transform":
        return cls(d.get("mean"), d.get("std"), bool(d.get("intercept", False)))


@dataclass
class PosteriorFile:
    link: Link
    q: PosteriorGaussian
    N: int
    K: int
    elbo_trace: List[float]
    n_iters: int
    converged: bool
    prior: GaussianPrior
    transform: Transform
    training: dict
    config: dict

    @property
    def M(self) -> int:
        return self.q.M

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "link": self.link.value,
            "dims": {"N": self.N, "M": self.M, "K": self.K},
            "means": self.q.means.tolist(),
            "covs": self.q.covs.tolist(),
            "elbo_trace": list(self.elbo_trace),
            "n_iters": self.n_iters,
            "converged": self.converged,
            "prior": {"mu0": self.prior.mu0.tolist(), "Sigma0": self.prior.Sigma0.tolist()},
            "transform": self.transform.to_json(),
            "training": self.training,
            "config": self.config,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PosteriorFile":
        if d.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported posterior version {d.get('version')!r}")
        try:
            dims = d["dims"]
            q = PosteriorGaussian(np.asarray(d["means"], dtype=float), np.asarray(d["covs"], dtype=float))
            if q.means.shape != (dims["M"], dims["K"]):
                raise DataError(f"posterior means have shape {q.means.shape}, dims say {(dims['M'], dims['K'])}")
            prior = GaussianPrior(np.asarray(d["prior"]["mu0"]), np.asarray(d["prior"]["Sigma0"]))
            if prior.M != dims["M"]:
                raise DataError("prior dimension does not match the posterior")
            return cls(
                Link(d["link"]), q, int(dims["N"]), int(dims["K"]), list(d["elbo_trace"]), int(d["n_iters"]),
                bool(d["converged"]), prior, Transform.from_json(d["transform"]), d["training"], d["config"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed posterior file: {exc}") from exc

    @classmethod
    def load(cls, path) -> "PosteriorFile":
        return cls.from_json(read_json(path))

    def dumps(self) -> str:
        return dump_json(self.to_json())


def make_dataset(X, y, K: Optional[int], sparse: bool = False) -> Dataset:
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]} labels")
    K = int(y.max()) if K is None else K
    return Dataset(sp.csr_matrix(X) if sparse else X, y, max(K, 2))


# ---- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        spec = simgen.SimSpec(args.N, args.K, args.M, args.sigma_high, args.sigma_low, args.sigma_int, args.seed)
    except InvalidSpec as exc:
        raise ConfigError(str(exc)) from exc
    out = simgen.simulate(spec)
    d = Path(args.out)
    truth = {"version": FORMAT_VERSION, "spec": dataclasses.asdict(spec), "B_true": out.B_true.tolist()}
    if args.test_frac:
        tr, te = simgen.train_test_split(spec.N, 1.0 - args.test_frac, seed=spec.seed)
        for name, idx in (("train", tr), ("test", te)):
            atomic_write(d / f"X_{name}.csv", format_matrix(out.data.X[idx]))
            atomic_write(d / f"y_{name}.csv", format_matrix(out.data.y[idx][:, None]))
            atomic_write(d / f"truth_{name}.json", dump_json({**truth, "probs": out.probs[idx].tolist()}))
    else:
        atomic_write(d / "X.csv", format_matrix(out.data.X))
        atomic_write(d / "y.csv", format_matrix(out.data.y[:, None]))
        atomic_write(d / "truth.json", dump_json({**truth, "probs": out.probs.tolist()}))
    return EXIT_OK


def _load_training(X_path, y_path, transform: Transform, K, sparse: bool) -> Dataset:
    X = transform.apply(read_matrix(X_path))
    return make_dataset(X, read_labels(y_path), K, sparse)


def cmd_fit(args) -> int:
    cfg = load_config(args)
    X_raw = read_matrix(args.X)
    transform = Transform.fit(X_raw, cfg.zscore, cfg.intercept)
    data = make_dataset(transform.apply(X_raw), read_labels(args.y), args.K, cfg.sparse)
    prior = cfg.prior(data.M)
    link = Link(cfg.link)
    t0 = time.perf_counter()
    fit = probit_fit if link is Link.PROBIT else logit_fit
    state, report = fit(data, prior, cfg.fit_options())
    wall = time.perf_counter() - t0
    post = PosteriorFile(
        link, PosteriorGaussian.from_state(state), data.N, data.K, report.elbo_trace, report.n_iters,
        report.converged, prior, transform, {"X": str(args.X), "y": str(args.y)}, cfg.echo(),
    )
    atomic_write(args.out, post.dumps())
    lines = [
        f"link: {link.value}",
        f"N={data.N} M={data.M} K={data.K}",
        f"iterations: {report.n_iters} (converged: {report.converged})",
        f"final normalized ELBO: {report.normalized_elbo(data.N, data.K):.6f}",
        f"wall time: {wall:.3f} s",
    ]
    text = "\n".join(lines) + "\n"
    if args.report:
        atomic_write(args.report, text)
    sys.stdout.write(text)
    return EXIT_OK


def _weights_from_posterior(post: PosteriorFile, cfg: RunConfig):
    data = _load_training(post.training["X"], post.training["y"], post.transform, post.K, False)
    if data.M != post.M:
        raise DataError("recorded training data no longer matches the posterior dimensions")
    ev = log_evidence_pair(post.q, data, post.link, post.prior, S=cfg.S, seed=cfg.seed)
    return ev, bma_weights(ev[0], ev[1], (cfg.pi_cbm, 1.0 - cfg.pi_cbm))


def cmd_predict(args) -> int:
    post = PosteriorFile.load(args.posterior)
    if args.config:
        cfg = load_config(args)
    else:
        # stored configuration, with explicit flags still taking precedence
        cfg = _override(RunConfig(**{**post.config, "workers": 1}), args)
    X = post.transform.apply(read_matrix(args.X))
    if X.shape[1] != post.M:
        raise DataError(f"X has {X.shape[1]} model columns, posterior expects {post.M}")
    header = []
    if cfg.target == "bma":
        _, target = _weights_from_posterior(post, cfg)
        header.append(f"# w_cbm={target.w_cbm!r},w_cbc={target.w_cbc!r}")
    else:
        target = Construction(cfg.target)
    pred = posterior_predictive(post.q, X, post.link, target, PredictiveMode(cfg.mode), T=cfg.T, seed=cfg.seed)
    labels = predict_labels(pred)
    cols = [f"p{k + 1}" for k in range(post.K)] + ["label", "credit"]
    body = format_matrix(np.column_stack([pred.probs, labels.labels, labels.credit]))
    atomic_write(args.out, "\n".join(header + [",".join(cols)]) + "\n" + body)
    return EXIT_OK


def _override(cfg: RunConfig, args) -> RunConfig:
    values = dataclasses.asdict(cfg)
    for f in dataclasses.fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return RunConfig(**values).validate()


def read_predictions(path) -> np.ndarray:
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    except OSError as exc:
        raise DataError(f"cannot read predictions {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path} is empty")
    header = lines[0].strip().split(",")
    K = sum(1 for h in header if h.startswith("p"))
    try:
        A = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"malformed predictions in {path}: {exc}") from exc
    return A[:, :K]


def cmd_evaluate(args) -> int:
    P = read_predictions(args.predictions)
    y = read_labels(args.y)
    if P.shape[0] != y.shape[0]:
        raise DataError(f"{P.shape[0]} predictions but {y.shape[0]} labels")
    if y.min() < 1 or y.max() > P.shape[1]:
        raise DataError(f"labels must lie in 1..{P.shape[1]}")
    metrics = {
        "version": FORMAT_VERSION,
        "n": int(y.shape[0]),
        "mean_log_lik": simgen.holdout_log_likelihood(P, y, floor=args.floor),
        "accuracy": simgen.accuracy(P, y),
    }
    if args.truth:
        truth = np.asarray(read_json(args.truth)["probs"], dtype=float)
        if truth.shape != P.shape:
            raise DataError(f"truth has shape {truth.shape}, predictions {P.shape}")
        if not np.allclose(truth.sum(axis=1), 1.0, atol=1e-9):
            raise DataError("truth rows do not sum to one")
        metrics["mean_kl_truth"] = simgen.mean_kl(truth, P)
    atomic_write(args.out, dump_json(metrics))
    return EXIT_OK


def cmd_featurize(args) -> int:
    try:
        log = simgen.read_event_log(args.events)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    events = log.events(args.user)
    if not events:
        raise DataError(f"no events for user {args.user!r}")
    try:
        data = simgen.featurize_sequence(events, args.W, args.tau, K=max(len(log.vocab), 2))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    d = Path(args.out)
    X = data.X.toarray()
    if args.test_frac:
        tr, te = simgen.train_test_split(data.N, 1.0 - args.test_frac, chronological=True)
        for name, idx in (("train", tr), ("test", te)):
            atomic_write(d / f"X_{name}.csv", format_matrix(X[idx]))
            atomic_write(d / f"y_{name}.csv", format_matrix(data.y[idx][:, None]))
    else:
        atomic_write(d / "X.csv", format_matrix(X))
        atomic_write(d / "y.csv", format_matrix(data.y[:, None]))
    atomic_write(d / "vocab.json", dump_json({"version": FORMAT_VERSION, "processes": log.vocab}))
    return EXIT_OK


def cmd_bma_weights(args) -> int:
    cfg = load_config(args)
    if args.posterior:
        post = PosteriorFile.load(args.posterior)
        (ev_m, ev_c), w = _weights_from_posterior(post, cfg)
    else:
        if args.log_ev_cbm is None or args.log_ev_cbc is None:
            raise ConfigError("give --posterior or both --log_ev_cbm and --log_ev_cbc")
        ev_m, ev_c = args.log_ev_cbm, args.log_ev_cbc
        w = bma_weights(ev_m, ev_c, (cfg.pi_cbm, 1.0 - cfg.pi_cbm))
    text = dump_json({"log_ev_cbm": ev_m, "log_ev_cbc": ev_c, **dataclasses.asdict(w)})
    if args.out:
        atomic_write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


# ---- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catbin", description="Categorical-from-binary regression via IB-CAVI")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate softmax data with block-structured weights")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--sigma_high", type=float, required=True)
    p.add_argument("--sigma_low", type=float, default=0.001)
    p.add_argument("--sigma_int", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test_frac", type=float, default=0.0, help="also write a seeded train/test split")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a posterior with IB-CAVI")
    p.add_argument("--X", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--K", type=int, default=None, help="number of categories (default: max label)")
    p.add_argument("--out", required=True, help="posterior JSON path")
    p.add_argument("--report", default=None, help="also write the text report here")
    add_config_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior predictive category probabilities")
    p.add_argument("--posterior", required=True)
    p.add_argument("--X", required=True)
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="holdout log-likelihood, accuracy and KL to truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--truth", default=None)
    p.add_argument("--floor", type=float, default=None, help="probability floor, e.g. 1e-10 for MLE baselines")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("featurize", help="turn a process event log into recency features")
    p.add_argument("--events", required=True, help="CSV of timestamp,user,process")
    p.add_argument("--user", default=None)
    p.add_argument("--W", type=int, default=5)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--test_frac", type=float, default=0.0, help="chronological holdout share")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("bma-weights", help="BMA weights from log evidences or a posterior")
    p.add_argument("--posterior", default=None)
    p.add_argument("--log_ev_cbm", type=float, default=None)
    p.add_argument("--log_ev_cbc", type=float, default=None)
    p.add_argument("--out", default=None)
    add_config_flags(p)
    p.set_defaults(func=cmd_bma_weights)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"catbin: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, InvalidLabel) as exc:
        print(f"catbin: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"catbin: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"catbin: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
