"""Baum-Welch expectation-maximization and the count-based initializer."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from hmrnn.core import HmmParams, ObservationDataset, backward_batch, forward_batch
from hmrnn.errors import (
    DegenerateDataError,
    InvalidInputError,
    NumericalFailureError,
    UnsupportedInitializationError,
)
from hmrnn.report import FitReport


@dataclass
class EmOptions:
    """Stopping rules for :func:`baum_welch_fit`.

    ``criterion="param"`` stops once no entry of pi, P or Psi moved by
    ``param_tol`` or more; ``criterion="rel_ll"`` stops once the relative
    log-likelihood improvement drops below ``rel_ll_tol``.
    """

    max_iters: int = 500
    param_tol: float = 1e-3
    rel_ll_tol: float = 1e-5
    criterion: str = "param"
    freeze_pi: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be at least 1")
        if self.criterion not in ("param", "rel_ll"):
            raise InvalidInputError(f"unknown criterion {self.criterion!r}")


def _check_reachable(params: HmmParams, data: ObservationDataset):
    seen = np.zeros(params.c, dtype=bool)
    for s in data.sequences:
        seen[s] = True
    dead = np.flatnonzero(seen & (params.Psi.sum(axis=0) == 0))
    if dead.size:
        raise DegenerateDataError(
            f"observation {int(dead[0])} occurs in the data but no state can emit it"
        )


def expected_counts(params: HmmParams, data: ObservationDataset):
    """E-step.

    Returns ``(log_likelihood, pi_counts, transition_counts, emission_counts)``
    accumulated over sequences in deterministic length-group order.
    """
    k, c = params.k, params.c
    pi_counts = np.zeros(k)
    trans = np.zeros((k, k))
    emitT = np.zeros((c, k))
    lls = np.empty(len(data))
    for L, (idx, Y) in data.length_groups().items():
        alphas, log_c = forward_batch(params, Y)
        betas = backward_batch(params, Y, log_c)
        gamma = alphas * betas
        gamma /= gamma.sum(axis=2, keepdims=True)
        lls[idx] = log_c.sum(axis=1)
        pi_counts += gamma[:, 0].sum(axis=0)
        if L > 1:
            B = params.Psi.T[Y[:, 1:]]
            right = B * betas[:, 1:] / np.exp(log_c[:, 1:, None])
            trans += params.P * np.einsum("nti,ntj->ij", alphas[:, :-1], right)
        np.add.at(emitT, Y.ravel(), gamma.reshape(-1, k))
    return float(np.sum(lls)), pi_counts, trans, emitT.T


def _normalize_rows(counts, fallback):
    totals = counts.sum(axis=1, keepdims=True)
    return np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), fallback)


def _maximize(params, pi_counts, trans, emit, freeze_pi):
    pi = params.pi if freeze_pi else pi_counts / pi_counts.sum()
    return HmmParams(
        pi,
        _normalize_rows(trans, params.P),
        _normalize_rows(emit, params.Psi),
    )


def em_step(params: HmmParams, data: ObservationDataset, freeze_pi: bool = False) -> HmmParams:
    """One E step followed by one M step."""
    _, pi_counts, trans, emit = expected_counts(params, data)
    return _maximize(params, pi_counts, trans, emit, freeze_pi)


def _max_change(a: HmmParams, b: HmmParams) -> float:
    return max(
        float(np.max(np.abs(a.pi - b.pi))),
        float(np.max(np.abs(a.P - b.P))),
        float(np.max(np.abs(a.Psi - b.Psi))),
    )


def baum_welch_fit(data: ObservationDataset, init: HmmParams, opts: Optional[EmOptions] = None) -> FitReport:
    """Fit ``init`` to ``data`` with Baum-Welch.

    States that receive no expected visits keep their previous rows.
    """
    opts = opts or EmOptions()
    data.check_symbols(init.c)
    _check_reachable(init, data)
    start = time.perf_counter()
    params = init
    ll, *stats = expected_counts(params, data)
    trace = [ll]
    reason = "max_iters"
    it = 0
    for it in range(1, opts.max_iters + 1):
        new = _maximize(params, *stats, opts.freeze_pi)
        new_ll, *stats = expected_counts(new, data)
        if not np.isfinite(new_ll):
            raise NumericalFailureError(f"non-finite log-likelihood at iteration {it}", iteration=it)
        trace.append(new_ll)
        change = _max_change(new, params)
        params = new
        if opts.criterion == "param":
            if change < opts.param_tol:
                reason = "param_tol"
                break
        elif (new_ll - ll) < opts.rel_ll_tol * abs(ll):
            reason = "rel_ll_tol"
            break
        ll = new_ll
    return FitReport(
        params=params,
        log_likelihood_trace=trace,
        iterations=it,
        converged=reason != "max_iters",
        reason=reason,
        elapsed=time.perf_counter() - start,
        method="em",
        options=opts.__dict__.copy(),
    )


def init_from_observations(
    data: ObservationDataset,
    k: int,
    psi_diag: float = 0.95,
    c: Optional[int] = None,
    pi=None,
) -> HmmParams:
    """Initial parameters that treat every observation as its hidden state.

    P comes from observed transition counts with add-one smoothing; Psi puts
    ``psi_diag`` on the diagonal and spreads the rest evenly; pi is the
    first-observation frequency unless given.
    """
    c = k if c is None else c
    if c != k:
        raise UnsupportedInitializationError(
            f"count-based initialization needs one category per state (k={k}, c={c})"
        )
    if not 0 < psi_diag <= 1:
        raise InvalidInputError("psi_diag must lie in (0, 1]")
    if len(data) == 0:
        raise InvalidInputError("cannot initialize from an empty dataset")
    data.check_symbols(c)
    counts = np.ones((k, k))
    first = np.zeros(k)
    for s in data.sequences:
        np.add.at(counts, (s[:-1], s[1:]), 1.0)
        first[s[0]] += 1
    P = counts / counts.sum(axis=1, keepdims=True)
    if k == 1:
        Psi = np.ones((1, 1))
    else:
        Psi = np.full((k, k), (1.0 - psi_diag) / (k - 1))
        np.fill_diagonal(Psi, psi_diag)
    if pi is None:
        pi = first / first.sum()
    return HmmParams(pi, P, Psi)
