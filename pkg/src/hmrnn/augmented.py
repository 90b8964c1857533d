"""Network augmented with a covariate-driven initial state and a per-visit
binary outcome head.

* The covariate head maps standardized covariates ``x`` to the initial
  distribution ``softmax(x @ W + b)``.
* The auxiliary head predicts each visit's binary outcome as
  ``sigmoid(weight * h1[last state] + bias)``, where ``h1`` is the network's
  normalized predicted state distribution at that visit (the prior over
  the current state given all earlier observations).

Training minimizes the sequence negative log-likelihood plus the Bernoulli
negative log-likelihood of the observed outcomes, with unit weights.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
from scipy.special import softmax

from hmrnn.core import HmmParams, ObservationDataset, as_sequence
from hmrnn.errors import DegenerateConditioningError, InvalidInputError, NumericalFailureError
from hmrnn.gd import GdOptions, LogitParams, _AuxBatch, _objective, descend, softmax_backward
from hmrnn.report import FitReport


@dataclass
class Standardizer:
    """Per-feature z-scoring fitted on a training fold."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        scale = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(scale > 0, scale, 1.0))

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def inverse(self, Z):
        return np.asarray(Z, dtype=float) * self.scale + self.mean


@dataclass
class CovariateHead:
    weights: np.ndarray  # (d, k)
    biases: np.ndarray  # (k,)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.biases = np.asarray(self.biases, dtype=float)
        if self.biases.shape != (self.weights.shape[1],):
            raise InvalidInputError("covariate head biases must have one entry per state")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise InvalidInputError("covariate head has non-finite entries")

    @classmethod
    def zeros(cls, d: int, k: int) -> "CovariateHead":
        return cls(np.zeros((d, k)), np.zeros(k))

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    def apply(self, Z) -> np.ndarray:
        """Initial-state distributions for standardized covariate rows."""
        return softmax(np.atleast_2d(Z) @ self.weights + self.biases, axis=-1)


@dataclass
class AuxiliaryHead:
    weight: float = 0.0
    bias: float = 0.0

    def __post_init__(self):
        self.weight = float(self.weight)
        self.bias = float(self.bias)
        if not (np.isfinite(self.weight) and np.isfinite(self.bias)):
            raise InvalidInputError("auxiliary head has non-finite entries")


@dataclass
class AugmentedModel:
    """Transition/emission logits plus optional heads.

    ``logits.pi_logits`` is ignored while a covariate head is attached.
    ``pi`` keeps the exact initial distribution (hard zeros included) for
    fits that hold it fixed; without a covariate head it takes precedence
    over the decoded logits.  A fit that trains pi drops it.
    """

    logits: LogitParams
    covariate_head: Optional[CovariateHead] = None
    auxiliary_head: Optional[AuxiliaryHead] = None
    standardizer: Optional[Standardizer] = None
    pi: Optional[np.ndarray] = None

    @classmethod
    def from_params(cls, params: HmmParams, d: Optional[int] = None, auxiliary: bool = True):
        """Start from HMM parameters with inert (all-zero) heads."""
        return cls(
            LogitParams.encode(params),
            CovariateHead.zeros(d, params.k) if d else None,
            AuxiliaryHead() if auxiliary else None,
            pi=None if d else np.array(params.pi),
        )

    @property
    def k(self) -> int:
        return self.logits.pi_logits.size

    def hmm_params(self) -> HmmParams:
        hp = self.logits.decode()
        if self.pi is not None and self.covariate_head is None:
            hp = HmmParams(self.pi, hp.P, hp.Psi)
        return hp

    def initial_distribution(self, covariates=None) -> np.ndarray:
        if self.covariate_head is None:
            return np.array(self.pi) if self.pi is not None else softmax(self.logits.pi_logits)
        if covariates is None:
            raise InvalidInputError("this model needs covariates to form its initial distribution")
        z = np.asarray(covariates, dtype=float)
        if z.shape[-1] != self.covariate_head.d:
            raise InvalidInputError(
                f"expected {self.covariate_head.d} covariates, got {z.shape[-1]}"
            )
        if self.standardizer is not None:
            z = self.standardizer.transform(z)
        return self.covariate_head.apply(z)[0] if z.ndim == 1 else self.covariate_head.apply(z)

    def to_theta(self) -> dict:
        theta = {"P": self.logits.P_logits, "Psi": self.logits.Psi_logits}
        if self.covariate_head is None:
            theta["pi"] = self.logits.pi_logits
        else:
            theta["W"] = self.covariate_head.weights
            theta["b"] = self.covariate_head.biases
        if self.auxiliary_head is not None:
            theta["aux_weight"] = np.float64(self.auxiliary_head.weight)
            theta["aux_bias"] = np.float64(self.auxiliary_head.bias)
        return theta

    def with_theta(self, theta: dict) -> "AugmentedModel":
        logits = LogitParams(theta.get("pi", self.logits.pi_logits), theta["P"], theta["Psi"])
        cov = CovariateHead(theta["W"], theta["b"]) if "W" in theta else None
        aux = AuxiliaryHead(theta["aux_weight"], theta["aux_bias"]) if "aux_weight" in theta else None
        return AugmentedModel(logits, cov, aux, self.standardizer, self.pi)

    def to_dict(self) -> dict:
        out = {"model": self.hmm_params().to_dict()}
        out["logits"] = {k: np.asarray(v).tolist() for k, v in self.logits.as_dict().items()}
        if self.covariate_head is not None:
            out["covariate_head"] = {
                "weights": self.covariate_head.weights.tolist(),
                "biases": self.covariate_head.biases.tolist(),
            }
        if self.auxiliary_head is not None:
            out["auxiliary_head"] = {"weight": self.auxiliary_head.weight, "bias": self.auxiliary_head.bias}
        if self.pi is not None:
            out["pi"] = np.asarray(self.pi).tolist()
        if self.standardizer is not None:
            out["standardizer"] = {
                "mean": self.standardizer.mean.tolist(),
                "scale": self.standardizer.scale.tolist(),
            }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentedModel":
        lg = d["logits"]
        cov = d.get("covariate_head")
        aux = d.get("auxiliary_head")
        std = d.get("standardizer")
        return cls(
            LogitParams(lg["pi"], lg["P"], lg["Psi"]),
            CovariateHead(cov["weights"], cov["biases"]) if cov else None,
            AuxiliaryHead(aux["weight"], aux["bias"]) if aux else None,
            Standardizer(np.asarray(std["mean"]), np.asarray(std["scale"])) if std else None,
            np.asarray(d["pi"], dtype=float) if "pi" in d else None,
        )


def _objective_theta(theta: dict, data: ObservationDataset, Z=None, fixed_pi=None, need_grad=True):
    """Total loss, its components and gradient w.r.t. every entry of ``theta``.

    ``Z`` holds the standardized covariates when ``theta`` has a covariate
    head.  With ``fixed_pi`` the initial distribution is held constant.
    """
    P = softmax(theta["P"], axis=1)
    Psi = softmax(theta["Psi"], axis=1)
    k, c = Psi.shape
    data.check_symbols(c)
    has_cov = "W" in theta
    has_aux = "aux_weight" in theta and data.aux_values is not None
    if has_cov:
        if Z is None:
            raise InvalidInputError("covariate head active but dataset has no covariates")
        pi_all = softmax(Z @ theta["W"] + theta["b"], axis=1)
        gpi_all = np.zeros_like(pi_all)
    else:
        pi_vec = fixed_pi if fixed_pi is not None else softmax(theta["pi"])
        gpi = np.zeros(k)

    seq_nll = np.empty(len(data))
    aux_nll = np.zeros(len(data))
    gP = np.zeros((k, k))
    gPsi = np.zeros((k, c))
    g_aw = g_ab = 0.0
    for L, (idx, Y) in data.length_groups().items():
        pi_rows = pi_all[idx] if has_cov else np.broadcast_to(pi_vec, (idx.size, k))
        aux = None
        if has_aux:
            aux = _AuxBatch(
                float(theta["aux_weight"]), float(theta["aux_bias"]),
                data.aux_values[idx, :L], data.aux_mask[idx, :L],
            )
        try:
            nll, anll, g = _objective(P, Psi, pi_rows, Y, aux=aux, need_grad=need_grad)
        except NumericalFailureError as exc:
            n = int(idx[exc.sequence])
            raise NumericalFailureError(
                f"sequence {n} ({data.ids[n]}): non-finite activation at step {exc.step}",
                sequence=n, step=exc.step,
            ) from exc
        seq_nll[idx] = nll
        aux_nll[idx] = anll
        if not need_grad:
            continue
        gP += g["P"]
        gPsi += g["Psi"]
        if has_cov:
            gpi_all[idx] = g["pi_rows"]
        else:
            gpi += g["pi_rows"].sum(axis=0)
        if aux is not None:
            g_aw += g["aux_weight"]
            g_ab += g["aux_bias"]

    loss = float(np.sum(seq_nll + aux_nll))
    comps = {"seq_nll": float(np.sum(seq_nll)), "aux_nll": float(np.sum(aux_nll))}
    if not need_grad:
        return loss, comps, None
    grad = {"P": softmax_backward(P, gP), "Psi": softmax_backward(Psi, gPsi)}
    if has_cov:
        g_logits = softmax_backward(pi_all, gpi_all)
        grad["W"] = Z.T @ g_logits
        grad["b"] = g_logits.sum(axis=0)
    else:
        grad["pi"] = np.zeros(k) if fixed_pi is not None else softmax_backward(pi_vec, gpi)
    if "aux_weight" in theta:
        grad["aux_weight"] = np.float64(g_aw)
        grad["aux_bias"] = np.float64(g_ab)
    return loss, comps, grad


def augmented_loss_and_grad(model: AugmentedModel, data: ObservationDataset):
    """Summed total loss over ``data`` and its gradient, keyed like
    :meth:`AugmentedModel.to_theta`.  Covariates pass through the model's
    standardizer when it has one."""
    Z = _standardized(model, data)
    loss, comps, grad = _objective_theta(model.to_theta(), data, Z)
    return loss, comps, grad


def _standardized(model: AugmentedModel, data: ObservationDataset):
    if model.covariate_head is None:
        return None
    if data.covariates is None:
        raise InvalidInputError("covariate head active but dataset has no covariates")
    if data.covariates.shape[1] != model.covariate_head.d:
        raise InvalidInputError(
            f"expected {model.covariate_head.d} covariates, got {data.covariates.shape[1]}"
        )
    if model.standardizer is None:
        return data.covariates
    return model.standardizer.transform(data.covariates)


def augmented_forward(model: AugmentedModel, seq, covariates=None, aux_values=None, aux_mask=None):
    """Loss terms for a single sequence: ``(total, seq_nll, aux_nll)``."""
    y = as_sequence(seq, model.logits.Psi_logits.shape[1])
    if aux_values is not None:
        aux_values = np.asarray(aux_values, dtype=float)
        aux_mask = np.ones(y.size, dtype=bool) if aux_mask is None else np.asarray(aux_mask, dtype=bool)
        if aux_values.shape != y.shape or aux_mask.shape != y.shape:
            raise InvalidInputError("auxiliary outcomes must align with the sequence")
        aux_values = aux_values[None]
        aux_mask = aux_mask[None]
    cov = None
    if model.covariate_head is not None:
        if covariates is None:
            raise InvalidInputError("covariate head active but no covariates given")
        cov = np.atleast_2d(np.asarray(covariates, dtype=float))
    data = ObservationDataset([y], covariates=cov, aux_values=aux_values, aux_mask=aux_mask)
    loss, comps, _ = _objective_theta(model.to_theta(), data, _standardized(model, data), need_grad=False)
    return loss, comps["seq_nll"], comps["aux_nll"]


def augmented_fit(
    data: ObservationDataset,
    init: AugmentedModel,
    opts: Optional[GdOptions] = None,
    standardize: bool = True,
) -> FitReport:
    """Jointly fit transitions, emissions and both heads by full-batch
    gradient descent.

    Covariates are z-scored over ``data`` first (unless ``standardize`` is
    False); the fitted standardizer travels with the returned model.
    """
    opts = opts or GdOptions()
    start = time.perf_counter()
    model = init
    Z = None
    if init.covariate_head is not None:
        if data.covariates is None:
            raise InvalidInputError("covariate head active but dataset has no covariates")
        std = Standardizer.fit(data.covariates) if standardize else init.standardizer
        model = AugmentedModel(init.logits, init.covariate_head, init.auxiliary_head, std, init.pi)
        Z = _standardized(model, data)
    fixed_pi = None
    if opts.freeze_pi and init.covariate_head is None:
        fixed_pi = init.initial_distribution()

    def objective(theta):
        return _objective_theta(theta, data, Z, fixed_pi)

    def decode(theta):
        out = {"P": softmax(theta["P"], axis=1), "Psi": softmax(theta["Psi"], axis=1)}
        if "pi" in theta and fixed_pi is None:
            out["pi"] = softmax(theta["pi"])
        for name in ("W", "b", "aux_weight", "aux_bias"):
            if name in theta:
                out[name] = theta[name]
        return out

    theta, trace, comp_traces, epochs, reason = descend(
        objective, model.to_theta(), decode, opts, data.n_observations
    )
    fitted = model.with_theta(theta)
    if fixed_pi is None:
        fitted = replace(fitted, pi=None)
    return FitReport(
        params=fitted,
        log_likelihood_trace=[-v for v in trace],
        iterations=epochs,
        converged=reason != "max_epochs",
        reason=reason,
        elapsed=time.perf_counter() - start,
        method="augmented",
        options=opts.__dict__.copy(),
        component_traces=comp_traces,
    )


def predict_final_category(
    model: Union[HmmParams, AugmentedModel],
    y0: int,
    horizon: int,
    covariates=None,
) -> np.ndarray:
    """Distribution of the observed category ``horizon`` steps after an
    initial observation ``y0``.

    The initial distribution is conditioned on ``y0``, pushed through
    ``horizon`` transitions and mapped to observation space.
    """
    if horizon < 1:
        raise InvalidInputError("horizon must be at least 1")
    if isinstance(model, AugmentedModel):
        params = model.hmm_params()
        pi = model.initial_distribution(covariates)
    else:
        params = model
        pi = params.pi
    if not 0 <= y0 < params.c:
        raise InvalidInputError(f"initial observation {y0} out of range for c={params.c}")
    post = pi * params.Psi[:, y0]
    total = post.sum()
    if not total > 0:
        raise DegenerateConditioningError(f"observation {y0} is impossible under the model")
    state = post / total
    state = state @ np.linalg.matrix_power(params.P, horizon)
    out = state @ params.Psi
    return out / out.sum()
