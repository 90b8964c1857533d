"""Parameter-recovery and forecast metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hmrnn.core import HmmParams, ObservationDataset, dataset_log_likelihood
from hmrnn.errors import InvalidInputError

PROB_FLOOR = 1e-12


def wasserstein_rows(A, B) -> float:
    """Mean 1-Wasserstein distance between matching rows of two
    row-stochastic matrices, with ground metric |i - j| on column indices.

    For distributions on 0..m-1 this is the sum of absolute CDF gaps.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2:
        raise InvalidInputError(f"shape mismatch: {A.shape} vs {B.shape}")
    gaps = np.abs(np.cumsum(A, axis=1) - np.cumsum(B, axis=1))[:, :-1]
    return float(gaps.sum(axis=1).mean())


@dataclass
class LogLossResult:
    L: float
    p_bar: float
    per_category: dict
    n_clipped: int


def weighted_log_loss(predicted, actual) -> LogLossResult:
    """Class-balanced log-loss.

    For each category present in ``actual``, average the log-probability the
    predictions put on the truth among patients in that category; ``L`` is
    the unweighted mean of those averages and ``p_bar = exp(L)``.  Absent
    categories are skipped.  Probabilities below 1e-12 are clipped and
    counted in ``n_clipped``.
    """
    pred = np.asarray(predicted, dtype=float)
    act = np.asarray(actual, dtype=np.int64)
    if pred.ndim != 2 or pred.shape[0] != act.size:
        raise InvalidInputError("need one prediction row per actual category")
    if act.size == 0:
        raise InvalidInputError("no predictions to score")
    if np.any(act < 0) or np.any(act >= pred.shape[1]):
        raise InvalidInputError("actual category out of range")
    if np.any(pred < 0) or np.any(np.abs(pred.sum(axis=1) - 1) > 1e-6):
        raise InvalidInputError("predictions must be probability vectors")
    p_true = pred[np.arange(act.size), act]
    n_clipped = int(np.sum(p_true < PROB_FLOOR))
    logp = np.log(np.maximum(p_true, PROB_FLOOR))
    per_cat = {int(cat): float(logp[act == cat].mean()) for cat in np.unique(act)}
    L = float(np.mean(list(per_cat.values())))
    return LogLossResult(L, float(np.exp(L)), per_cat, n_clipped)


def holdout_log_likelihood(params: HmmParams, holdout: ObservationDataset) -> float:
    return dataset_log_likelihood(params, holdout)


def paired_difference(a, b, n_boot: int = 2000, seed: int = 0, level: float = 0.95) -> dict:
    """Mean of ``a - b`` with a percentile bootstrap interval."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise InvalidInputError("paired samples must be equal-length, non-empty vectors")
    diff = a - b
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.integers(0, diff.size, size=(n_boot, diff.size))
    boots = diff[idx].mean(axis=1)
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return {"mean": float(diff.mean()), "ci_low": float(lo), "ci_high": float(hi), "n": int(diff.size)}
