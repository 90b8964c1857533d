"""Categorical HMM parameters, observation datasets and the scaled
forward/backward recursions.

Observation categories and hidden states are 0-indexed everywhere.

The forward recursion is always rescaled: at every step the filtered
vector is normalized to sum to one and the log of the normalizer is
accumulated, so ``log Pr(y) = sum_t log c_t``.  This keeps sequences of
tens of thousands of steps finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from hmrnn.errors import DegenerateDataError, InvalidInputError, InvalidModelError

STOCHASTIC_TOL = 1e-9
ROUNDOFF_TOL = 1e-13


def _check_stochastic(name, arr, tol=STOCHASTIC_TOL):
    if not np.all(np.isfinite(arr)):
        raise InvalidModelError(f"{name} has non-finite entries")
    if np.any(arr < -tol) or np.any(arr > 1 + tol):
        raise InvalidModelError(f"{name} has entries outside [0, 1]")
    sums = arr.sum(axis=-1)
    bad = np.flatnonzero(np.abs(np.atleast_1d(sums) - 1.0) > tol)
    if bad.size:
        raise InvalidModelError(
            f"{name} row {int(bad[0])} sums to {np.atleast_1d(sums)[bad[0]]!r}, not 1"
        )
    arr = np.clip(arr, 0.0, None)
    sums = arr.sum(axis=-1, keepdims=True)
    # leave rows already normalized to roundoff alone so reloading is exact
    return np.where(np.abs(sums - 1.0) > ROUNDOFF_TOL, arr / sums, arr)


@dataclass(frozen=True)
class HmmParams:
    """Initial distribution ``pi`` (k,), transitions ``P`` (k, k) and
    emissions ``Psi`` (k, c).

    Rows are validated to be stochastic within 1e-9; rows off by more than
    roundoff are then renormalized.  The stored arrays are read-only.
    """

    pi: np.ndarray
    P: np.ndarray
    Psi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        P = np.asarray(self.P, dtype=float)
        Psi = np.asarray(self.Psi, dtype=float)
        if pi.ndim != 1 or pi.size < 1:
            raise InvalidInputError(f"pi must be a non-empty vector, got shape {pi.shape}")
        k = pi.size
        if P.shape != (k, k):
            raise InvalidInputError(f"P must have shape ({k}, {k}), got {P.shape}")
        if Psi.ndim != 2 or Psi.shape[0] != k or Psi.shape[1] < 1:
            raise InvalidInputError(f"Psi must have shape ({k}, c), got {Psi.shape}")
        for name, arr in (("pi", pi), ("P", P), ("Psi", Psi)):
            arr = _check_stochastic(name, arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def k(self) -> int:
        return self.pi.size

    @property
    def c(self) -> int:
        return self.Psi.shape[1]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "c": self.c,
            "pi": self.pi.tolist(),
            "P": self.P.tolist(),
            "Psi": self.Psi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmParams":
        params = cls(d["pi"], d["P"], d["Psi"])
        if "k" in d and int(d["k"]) != params.k:
            raise InvalidInputError(f"declared k={d['k']} but pi has {params.k} entries")
        if "c" in d and int(d["c"]) != params.c:
            raise InvalidInputError(f"declared c={d['c']} but Psi has {params.c} columns")
        return params


def as_sequence(obs, c: Optional[int] = None) -> np.ndarray:
    """Validate one observation sequence and return it as an int array."""
    arr = np.asarray(obs)
    if arr.ndim != 1 or arr.size < 1:
        raise InvalidInputError("an observation sequence needs at least one observation")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("observation sequences may not contain gaps (NaN)")
        if np.any(arr != np.round(arr)):
            raise InvalidInputError("observations must be integer category indices")
    elif arr.dtype.kind not in "iu":
        raise InvalidInputError(f"observations must be integers, got dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise InvalidInputError("observation indices must be non-negative")
    if c is not None and np.any(arr >= c):
        raise InvalidInputError(f"observation index {int(arr.max())} out of range for c={c}")
    return arr


@dataclass
class ObservationDataset:
    """N categorical sequences, optionally with per-sequence covariates and
    masked per-visit binary auxiliary outcomes.

    ``aux_values`` and ``aux_mask`` have shape (N, max_len); the mask is
    True exactly where an outcome was observed and always False past the
    end of a sequence.
    """

    sequences: list
    ids: Optional[list] = None
    covariates: Optional[np.ndarray] = None
    aux_values: Optional[np.ndarray] = None
    aux_mask: Optional[np.ndarray] = None
    _groups: Optional[dict] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.sequences = [as_sequence(s) for s in self.sequences]
        n = len(self.sequences)
        if self.ids is None:
            self.ids = [str(i) for i in range(n)]
        else:
            self.ids = [str(i) for i in self.ids]
            if len(self.ids) != n:
                raise InvalidInputError(f"{len(self.ids)} ids for {n} sequences")
            if len(set(self.ids)) != n:
                raise InvalidInputError("sequence ids must be unique")
        if self.covariates is not None:
            cov = np.asarray(self.covariates, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != n:
                raise InvalidInputError(
                    f"covariates must have shape ({n}, d), got {cov.shape}"
                )
            self.covariates = cov
        if (self.aux_values is None) != (self.aux_mask is None):
            raise InvalidInputError("aux_values and aux_mask must be given together")
        if self.aux_values is not None:
            vals = np.asarray(self.aux_values, dtype=float)
            mask = np.asarray(self.aux_mask, dtype=bool)
            width = self.max_length
            if vals.shape != (n, width) or mask.shape != (n, width):
                raise InvalidInputError(
                    f"auxiliary arrays must have shape ({n}, {width}), got {vals.shape}"
                )
            beyond = np.arange(width)[None, :] >= self.lengths[:, None]
            if np.any(mask & beyond):
                raise InvalidInputError("auxiliary mask marks entries past a sequence end")
            if np.any((vals[mask] != 0) & (vals[mask] != 1)):
                raise InvalidInputError("auxiliary outcomes must be binary (0/1)")
            vals = np.where(mask, vals, 0.0)
            self.aux_values = vals
            self.aux_mask = mask

    def __len__(self):
        return len(self.sequences)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([s.size for s in self.sequences], dtype=np.int64)

    @property
    def max_length(self) -> int:
        return int(self.lengths.max()) if self.sequences else 0

    @property
    def n_observations(self) -> int:
        return int(self.lengths.sum()) if self.sequences else 0

    @property
    def n_symbols(self) -> int:
        """One more than the largest observed category (0 when empty)."""
        if not self.sequences:
            return 0
        return int(max(s.max() for s in self.sequences)) + 1

    def length_groups(self) -> dict:
        """Map each distinct length to (indices, stacked observations)."""
        if self._groups is None:
            groups = {}
            lengths = self.lengths
            for L in np.unique(lengths):
                idx = np.flatnonzero(lengths == L)
                groups[int(L)] = (idx, np.stack([self.sequences[i] for i in idx]))
            self._groups = groups
        return self._groups

    def check_symbols(self, c: int):
        for n, s in enumerate(self.sequences):
            if s.max() >= c:
                raise InvalidInputError(
                    f"sequence {n} ({self.ids[n]}): observation {int(s.max())} out of range for c={c}"
                )

    def subset(self, indices: Sequence[int]) -> "ObservationDataset":
        idx = np.asarray(indices, dtype=np.int64)
        width = max((self.sequences[i].size for i in idx), default=0)
        aux_v = aux_m = None
        if self.aux_values is not None:
            aux_v = self.aux_values[idx, :width]
            aux_m = self.aux_mask[idx, :width]
        return ObservationDataset(
            sequences=[self.sequences[i] for i in idx],
            ids=[self.ids[i] for i in idx],
            covariates=None if self.covariates is None else self.covariates[idx],
            aux_values=aux_v,
            aux_mask=aux_m,
        )


@dataclass
class ForwardResult:
    log_likelihood: float
    scaled_alphas: np.ndarray
    log_scale_terms: np.ndarray


def _emission_rows(params: HmmParams, Y: np.ndarray) -> np.ndarray:
    # (n, L) observations -> (n, L, k) emission probabilities
    return params.Psi.T[Y]


def forward_batch(params: HmmParams, Y: np.ndarray):
    """Scaled forward pass for n equal-length sequences stacked in ``Y``.

    Returns (scaled alphas (n, L, k), log normalizers (n, L)).
    """
    n, L = Y.shape
    B = _emission_rows(params, Y)
    alphas = np.empty((n, L, params.k))
    log_c = np.empty((n, L))
    a = params.pi[None, :] * B[:, 0]
    for t in range(L):
        if t > 0:
            a = (alphas[:, t - 1] @ params.P) * B[:, t]
        s = a.sum(axis=1)
        if np.any(s <= 0):
            bad = int(np.flatnonzero(s <= 0)[0])
            exc = DegenerateDataError(f"sequence {bad} has zero probability at step {t}")
            exc.sequence, exc.step = bad, t
            raise exc
        alphas[:, t] = a / s[:, None]
        log_c[:, t] = np.log(s)
    return alphas, log_c


def backward_batch(params: HmmParams, Y: np.ndarray, log_c: np.ndarray) -> np.ndarray:
    """Scaled backward variables matching :func:`forward_batch` scaling."""
    n, L = Y.shape
    B = _emission_rows(params, Y)
    scale = np.exp(log_c)
    betas = np.empty((n, L, params.k))
    betas[:, L - 1] = 1.0
    for t in range(L - 2, -1, -1):
        betas[:, t] = ((B[:, t + 1] * betas[:, t + 1]) @ params.P.T) / scale[:, t + 1, None]
    return betas


def forward(params: HmmParams, seq) -> ForwardResult:
    """Log-likelihood and filtered state probabilities of one sequence.

    Examples
    --------
    >>> p = HmmParams([1.0, 0.0], [[0.5, 0.5], [0.5, 0.5]], np.eye(2))
    >>> float(np.exp(forward(p, [0, 1]).log_likelihood))
    0.5
    """
    y = as_sequence(seq, params.c)
    alphas, log_c = forward_batch(params, y[None, :])
    return ForwardResult(float(log_c[0].sum()), alphas[0], log_c[0])


def backward(params: HmmParams, seq) -> np.ndarray:
    """Scaled backward variables, shape (T+1, k)."""
    y = as_sequence(seq, params.c)
    _, log_c = forward_batch(params, y[None, :])
    return backward_batch(params, y[None, :], log_c)[0]


def posterior_marginals(params: HmmParams, seq) -> np.ndarray:
    """Smoothed state marginals Pr(x_t = i | y), shape (T+1, k)."""
    y = as_sequence(seq, params.c)
    alphas, log_c = forward_batch(params, y[None, :])
    betas = backward_batch(params, y[None, :], log_c)
    return alphas[0] * betas[0]


def sequence_log_likelihoods(params: HmmParams, data: ObservationDataset) -> np.ndarray:
    """Per-sequence log-likelihoods in dataset order."""
    data.check_symbols(params.c)
    out = np.empty(len(data))
    for L, (idx, Y) in data.length_groups().items():
        try:
            _, log_c = forward_batch(params, Y)
        except DegenerateDataError as exc:
            n = int(idx[exc.sequence])
            raise DegenerateDataError(
                f"sequence {n} ({data.ids[n]}) has zero probability at step {exc.step}"
            ) from exc
        out[idx] = log_c.sum(axis=1)
    return out


def dataset_log_likelihood(params: HmmParams, data: ObservationDataset) -> float:
    """Sum of per-sequence log-likelihoods, reduced in index order."""
    if len(data) == 0:
        return 0.0
    return float(np.sum(sequence_log_likelihoods(params, data)))
