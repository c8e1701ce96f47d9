"""Bayesian categorical regression through independent-binary surrogates.

Categorical-from-binary (CB) likelihoods are fit with closed-form coordinate
ascent variational inference on the independent binary (IB) model, then
combined for prediction by Bayesian model averaging over the CBM and CBC
constructions.
"""

from catbin.errors import (
    CatbinError,
    InvalidCovariance,
    InvalidLabel,
    InvalidSpec,
    NumericalFailure,
    ShapeError,
)
from catbin.model import (
    Construction,
    Dataset,
    GaussianPrior,
    Link,
    category_probs,
    cb_log_likelihood,
    ib_log_likelihood,
    linear_predictor,
    one_hot,
)
from catbin.fitting import FitOptions, FitReport
from catbin.cavi_probit import ProbitState, probit_fit
from catbin.cavi_logit import LogitState, logit_fit
from catbin.predict import (
    BmaWeights,
    PosteriorGaussian,
    PredictiveDistribution,
    bma_weights,
    estimate_log_evidence,
    posterior_predictive,
    predict_labels,
)

__version__ = "0.1.0"

__all__ = [
    "BmaWeights",
    "CatbinError",
    "Construction",
    "Dataset",
    "FitOptions",
    "FitReport",
    "GaussianPrior",
    "InvalidCovariance",
    "InvalidLabel",
    "InvalidSpec",
    "Link",
    "LogitState",
    "NumericalFailure",
    "PosteriorGaussian",
    "PredictiveDistribution",
    "ProbitState",
    "ShapeError",
    "bma_weights",
    "category_probs",
    "cb_log_likelihood",
    "estimate_log_evidence",
    "ib_log_likelihood",
    "linear_predictor",
    "logit_fit",
    "one_hot",
    "posterior_predictive",
    "predict_labels",
    "probit_fit",
]
