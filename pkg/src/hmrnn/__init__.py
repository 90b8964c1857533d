"""Categorical hidden Markov models fitted by Baum-Welch or by gradient
descent through an equivalent recurrent network, plus a covariate-augmented
variant of that network."""

__version__ = "0.1.0"

from hmrnn.core import (
    ForwardResult,
    HmmParams,
    ObservationDataset,
    backward,
    dataset_log_likelihood,
    forward,
    posterior_marginals,
)
from hmrnn.em import EmOptions, baum_welch_fit, init_from_observations
from hmrnn.gd import GdOptions, HmrnnState, LogitParams, gd_fit, hmrnn_forward, hmrnn_loss_and_grad
from hmrnn.augmented import (
    AugmentedModel,
    AuxiliaryHead,
    CovariateHead,
    augmented_fit,
    augmented_forward,
    predict_final_category,
)
from hmrnn.report import FitReport

__all__ = [
    "AugmentedModel",
    "AuxiliaryHead",
    "CovariateHead",
    "EmOptions",
    "FitReport",
    "ForwardResult",
    "GdOptions",
    "HmmParams",
    "HmrnnState",
    "LogitParams",
    "ObservationDataset",
    "augmented_fit",
    "augmented_forward",
    "backward",
    "baum_welch_fit",
    "dataset_log_likelihood",
    "forward",
    "gd_fit",
    "hmrnn_forward",
    "hmrnn_loss_and_grad",
    "init_from_observations",
    "posterior_marginals",
    "predict_final_category",
]
