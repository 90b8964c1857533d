"""HMM estimation by gradient descent through a recurrent network.

The network carries three hidden layers per time step:

* ``h1`` -- the predicted state distribution: ``pi`` at t=0, ``h3 @ P`` after.
* ``h2`` -- k*c ReLU units, ``relu(h1 @ [diag(Psi[:, 0]) ... diag(Psi[:, c-1])]
  + onehot(y_t) @ blockdiag(1_k, ..., 1_k) - 1)``.  Only the block matching
  ``y_t`` survives the bias, and it holds ``h1 * Psi[:, y_t]``.
* ``h3`` -- ``h2`` summed over blocks, i.e. ``h1 * Psi[:, y_t]``.

``h3`` is normalized at every step and the log of its sum is subtracted
from the output, so the output is ``-log Pr(y)`` without underflow.

The probabilities are reparameterized as row-wise softmax of unconstrained
logits.  Gradients are hand-derived: a reverse sweep over the normalized
recursion followed by the softmax Jacobian of each row.  :func:`_objective`
is shared with the covariate-augmented network in :mod:`hmrnn.augmented`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, softmax

from hmrnn.core import HmmParams, ObservationDataset, as_sequence
from hmrnn.errors import DivergenceError, InvalidInputError, NumericalFailureError
from hmrnn.report import FitReport

LOGIT_FLOOR = 1e-6
DIVERGENCE_PATIENCE = 50


@dataclass
class LogitParams:
    pi_logits: np.ndarray
    P_logits: np.ndarray
    Psi_logits: np.ndarray

    def __post_init__(self):
        self.pi_logits = np.asarray(self.pi_logits, dtype=float)
        self.P_logits = np.asarray(self.P_logits, dtype=float)
        self.Psi_logits = np.asarray(self.Psi_logits, dtype=float)
        k = self.pi_logits.size
        if self.P_logits.shape != (k, k) or self.Psi_logits.ndim != 2 or self.Psi_logits.shape[0] != k:
            raise InvalidInputError("inconsistent logit shapes")
        for name in ("pi_logits", "P_logits", "Psi_logits"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidInputError(f"{name} has non-finite entries")

    @classmethod
    def encode(cls, params: HmmParams, floor: float = LOGIT_FLOOR) -> "LogitParams":
        """Log of the probabilities, clamped below at ``floor``."""
        return cls(
            np.log(np.maximum(params.pi, floor)),
            np.log(np.maximum(params.P, floor)),
            np.log(np.maximum(params.Psi, floor)),
        )

    def decode(self) -> HmmParams:
        return HmmParams(
            softmax(self.pi_logits),
            softmax(self.P_logits, axis=1),
            softmax(self.Psi_logits, axis=1),
        )

    def as_dict(self) -> dict:
        return {"pi": self.pi_logits, "P": self.P_logits, "Psi": self.Psi_logits}


@dataclass
class HmrnnState:
    """Layer activations at one time step.

    ``h3`` is stored before normalization; ``log_normalizer`` is the log of
    its sum.  ``h2`` is None when the ReLU layer was skipped.
    """

    h1: np.ndarray
    h2: Optional[np.ndarray]
    h3: np.ndarray
    log_normalizer: float

    @property
    def h3_normalized(self) -> np.ndarray:
        return self.h3 / np.exp(self.log_normalizer)


@dataclass
class GdOptions:
    """Full-batch gradient descent settings.

    The step is ``learning_rate * grad / n_observations``: the learning rate
    acts on the per-observation mean loss so one value works across dataset
    sizes.  The default of 1 is stable for any k; larger rates converge
    faster when observations spread over many states (each softmax row's
    curvature scales with its share of the data) but oscillate when one row
    carries most of it.  ``criterion`` selects the stopping rule, ``"param"`` (max change
    of any decoded probability below ``param_tol``) or ``"rel_ll"`` (relative
    loss change below ``rel_ll_tol``).
    """

    learning_rate: float = 1.0
    max_epochs: int = 5000
    param_tol: float = 1e-3
    rel_ll_tol: float = 1e-5
    criterion: str = "param"
    freeze_pi: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise InvalidInputError("max_epochs must be at least 1")
        if self.criterion not in ("param", "rel_ll"):
            raise InvalidInputError(f"unknown criterion {self.criterion!r}")


def _hmrnn_weights(Psi: np.ndarray):
    k, c = Psi.shape
    w_psi = np.hstack([np.diag(Psi[:, l]) for l in range(c)])  # (k, k*c)
    w_obs = np.kron(np.eye(c), np.ones((1, k)))  # (c, k*c)
    w_sum = np.vstack([np.eye(k)] * c)  # (k*c, k)
    return w_psi, w_obs, w_sum


def hmrnn_forward(params: HmmParams, seq, literal: bool = True):
    """Run the network on one sequence.

    Returns ``(loss, trace)`` where ``loss = -log Pr(seq)`` and ``trace`` is
    a list of :class:`HmrnnState`, one per time step.  With ``literal`` the
    k*c-unit ReLU layer is materialized; otherwise ``h3 = h1 * Psi[:, y]``.
    """
    y = as_sequence(seq, params.c)
    if literal:
        w_psi, w_obs, w_sum = _hmrnn_weights(params.Psi)
        eye_c = np.eye(params.c)
    trace = []
    loss = 0.0
    h1 = params.pi.copy()
    for t, obs in enumerate(y):
        if literal:
            h2 = np.maximum(h1 @ w_psi + eye_c[obs] @ w_obs - 1.0, 0.0)
            h3 = h2 @ w_sum
        else:
            h2 = None
            h3 = h1 * params.Psi[:, obs]
        total = h3.sum()
        if not total > 0:
            raise NumericalFailureError(
                f"zero network activation at step {t}", step=t
            )
        log_norm = float(np.log(total))
        trace.append(HmrnnState(h1, h2, h3, log_norm))
        loss -= log_norm
        h1 = (h3 / total) @ params.P
    return loss, trace


@dataclass
class _AuxBatch:
    weight: float
    bias: float
    values: np.ndarray  # (n, L)
    mask: np.ndarray  # (n, L) bool


def _objective(P, Psi, pi_rows, Y, aux: Optional[_AuxBatch] = None, need_grad=True):
    """Loss and reverse-mode gradient for n equal-length sequences.

    ``pi_rows`` is the (n, k) initial distribution of each sequence.
    Returns ``(seq_nll (n,), aux_nll (n,), grads)`` where ``grads`` holds
    ``P``, ``Psi``, ``pi_rows`` and, with an auxiliary head, ``aux_weight``
    and ``aux_bias``.
    """
    n, L = Y.shape
    k, c = Psi.shape
    B = Psi.T[Y]
    h1 = np.empty((n, L, k))
    h3 = np.empty((n, L, k))
    s = np.empty((n, L))
    h = pi_rows
    for t in range(L):
        if t > 0:
            h = h3[:, t - 1] @ P
        h1[:, t] = h
        raw = h * B[:, t]
        st = raw.sum(axis=1)
        if not np.all(st > 0) or not np.all(np.isfinite(st)):
            bad = int(np.flatnonzero(~(st > 0) | ~np.isfinite(st))[0])
            raise NumericalFailureError(
                f"non-finite or zero activation in sequence {bad} at step {t}",
                sequence=bad, step=t,
            )
        h3[:, t] = raw / st[:, None]
        s[:, t] = st
    seq_nll = -np.log(s).sum(axis=1)

    aux_nll = np.zeros(n)
    if aux is not None:
        q = h1[:, :, k - 1]
        z = aux.weight * q + aux.bias
        aux_nll = np.where(aux.mask, np.logaddexp(0.0, z) - aux.values * z, 0.0).sum(axis=1)
    if not need_grad:
        return seq_nll, aux_nll, None

    gq = None
    grads = {}
    if aux is not None:
        dz = np.where(aux.mask, expit(z) - aux.values, 0.0)
        grads["aux_weight"] = float(np.sum(dz * q))
        grads["aux_bias"] = float(np.sum(dz))
        gq = dz * aux.weight

    gP = np.zeros((k, k))
    gB = np.empty((n, L, k))
    g3 = np.zeros((n, k))
    for t in range(L - 1, -1, -1):
        graw = (g3 - np.sum(g3 * h3[:, t], axis=1, keepdims=True) - 1.0) / s[:, t, None]
        gB[:, t] = graw * h1[:, t]
        gh1 = graw * B[:, t]
        if gq is not None:
            gh1[:, k - 1] += gq[:, t]
        if t > 0:
            gP += h3[:, t - 1].T @ gh1
            g3 = gh1 @ P.T
    gPsiT = np.zeros((c, k))
    np.add.at(gPsiT, Y.ravel(), gB.reshape(-1, k))
    grads["P"] = gP
    grads["Psi"] = gPsiT.T
    grads["pi_rows"] = gh1
    return seq_nll, aux_nll, grads


def softmax_backward(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Map a gradient w.r.t. softmax outputs ``p`` (last axis) to logits."""
    return p * (g - np.sum(g * p, axis=-1, keepdims=True))


def _plain_loss_and_grad(logits: LogitParams, data: ObservationDataset, pi=None, need_grad=True):
    P = softmax(logits.P_logits, axis=1)
    Psi = softmax(logits.Psi_logits, axis=1)
    pi_vec = softmax(logits.pi_logits) if pi is None else pi
    k = P.shape[0]
    losses = np.empty(len(data))
    gP = np.zeros_like(P)
    gPsi = np.zeros_like(Psi)
    gpi = np.zeros(k)
    for L, (idx, Y) in data.length_groups().items():
        pi_rows = np.broadcast_to(pi_vec, (idx.size, k))
        try:
            nll, _, g = _objective(P, Psi, pi_rows, Y, need_grad=need_grad)
        except NumericalFailureError as exc:
            exc.sequence = int(idx[exc.sequence])
            raise NumericalFailureError(
                f"sequence {exc.sequence} ({data.ids[exc.sequence]}): non-finite activation at step {exc.step}",
                sequence=exc.sequence, step=exc.step,
            ) from exc
        losses[idx] = nll
        if need_grad:
            gP += g["P"]
            gPsi += g["Psi"]
            gpi += g["pi_rows"].sum(axis=0)
    loss = float(np.sum(losses))
    if not need_grad:
        return loss, None
    grad = LogitParams(
        np.zeros(k) if pi is not None else softmax_backward(pi_vec, gpi),
        softmax_backward(P, gP),
        softmax_backward(Psi, gPsi),
    )
    return loss, grad


def hmrnn_loss_and_grad(logits: LogitParams, data: ObservationDataset, freeze_pi: bool = False, pi=None):
    """Summed network loss over ``data`` and its gradient w.r.t. every logit.

    With ``freeze_pi`` the initial-state logits receive zero gradient.  A
    fixed probability vector ``pi`` may be supplied instead of decoding
    ``logits.pi_logits``; its gradient is then zero as well.
    """
    data.check_symbols(logits.Psi_logits.shape[1])
    loss, grad = _plain_loss_and_grad(logits, data, pi=pi)
    if freeze_pi:
        grad.pi_logits = np.zeros_like(grad.pi_logits)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(v)) for v in grad.as_dict().values()):
        raise NumericalFailureError("non-finite loss or gradient")
    return loss, grad


def descend(
    objective: Callable,
    theta: dict,
    decode: Callable,
    opts: GdOptions,
    n_obs: int,
):
    """Full-batch gradient descent shared by the plain and augmented networks.

    ``objective(theta) -> (loss, components, grad)``; ``decode(theta)``
    returns the dict of arrays whose max change drives the ``"param"``
    criterion.  Returns ``(theta, trace, component_traces, epochs, reason)``.
    """
    step = opts.learning_rate / max(n_obs, 1)
    loss, comps, grad = objective(theta)
    trace = [loss]
    comp_traces = {name: [v] for name, v in comps.items()}
    prev = decode(theta)
    rising = 0
    reason = "max_epochs"
    epoch = 0
    for epoch in range(1, opts.max_epochs + 1):
        theta = {name: v - step * grad[name] for name, v in theta.items()}
        new_loss, comps, grad = objective(theta)
        if not np.isfinite(new_loss):
            raise NumericalFailureError(f"non-finite loss at epoch {epoch}", iteration=epoch)
        trace.append(new_loss)
        for name, v in comps.items():
            comp_traces[name].append(v)
        rising = rising + 1 if new_loss > loss else 0
        if rising >= DIVERGENCE_PATIENCE:
            raise DivergenceError(
                f"loss increased for {rising} consecutive epochs; "
                f"reduce the learning rate (currently {opts.learning_rate})"
            )
        cur = decode(theta)
        if opts.criterion == "param":
            change = max(float(np.max(np.abs(cur[name] - prev[name]))) for name in cur)
            if change < opts.param_tol:
                reason = "param_tol"
                break
        elif abs(loss - new_loss) <= opts.rel_ll_tol * abs(loss):
            reason = "rel_ll_tol"
            break
        prev = cur
        loss = new_loss
    return theta, trace, comp_traces, epoch, reason


def gd_fit(data: ObservationDataset, init: HmmParams, opts: Optional[GdOptions] = None) -> FitReport:
    """Fit an HMM by gradient descent on the network loss.

    ``init`` is encoded to logits with :meth:`LogitParams.encode`.  With
    ``opts.freeze_pi`` the initial distribution stays exactly ``init.pi``,
    including hard zeros.
    """
    opts = opts or GdOptions()
    data.check_symbols(init.c)
    start = time.perf_counter()
    logits = LogitParams.encode(init)
    fixed_pi = np.array(init.pi) if opts.freeze_pi else None

    def objective(theta):
        lp = LogitParams(theta["pi"], theta["P"], theta["Psi"])
        loss, grad = hmrnn_loss_and_grad(lp, data, freeze_pi=opts.freeze_pi, pi=fixed_pi)
        return loss, {}, grad.as_dict()

    def decode(theta):
        out = {"P": softmax(theta["P"], axis=1), "Psi": softmax(theta["Psi"], axis=1)}
        if fixed_pi is None:
            out["pi"] = softmax(theta["pi"])
        return out

    theta, trace, _, epochs, reason = descend(
        objective, logits.as_dict(), decode, opts, data.n_observations
    )
    final = LogitParams(theta["pi"], theta["P"], theta["Psi"]).decode()
    if fixed_pi is not None:
        final = HmmParams(fixed_pi, final.P, final.Psi)
    return FitReport(
        params=final,
        log_likelihood_trace=[-v for v in trace],
        iterations=epochs,
        converged=reason != "max_epochs",
        reason=reason,
        elapsed=time.perf_counter() - start,
        method="gd",
        options=opts.__dict__.copy(),
    )
