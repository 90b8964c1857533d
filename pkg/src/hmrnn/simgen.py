"""Synthetic data: the progressive-state recovery grid and a covariate
benchmark with ragged visit counts and a binary per-visit outcome.

Randomness comes from numpy's PCG64 bit generator.  Every sequence ``i``
draws from its own stream seeded with ``(seed, i)``, so output does not
depend on how sampling is scheduled.  Categorical draws use inverse-CDF
lookup of ``Generator.random()`` doubles, which is reproducible across
platforms.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import softmax

from hmrnn.core import HmmParams, ObservationDataset
from hmrnn.errors import InvalidInputError

GRID_K = (5, 10, 20)
GRID_PSI = (0.6, 0.75, 0.9)
GRID_PII = (0.4, 0.6, 0.8)
TRANSITION_RULES = ("next", "uniform")

# 3-state disease-progression model used by the covariate benchmark.
BENCH_P = np.array([
    [0.90, 0.08, 0.02],
    [0.05, 0.65, 0.30],
    [0.00, 0.02, 0.98],
])
BENCH_PSI = np.array([
    [0.93, 0.065, 0.005],
    [0.40, 0.59, 0.01],
    [0.01, 0.29, 0.70],
])
# Visit-count mix 3/4/5 in proportion 91:106:229.
BENCH_LENGTH_PROBS = np.array([91, 106, 229]) / 426.0
BENCH_AUX_WEIGHT = 4.0
BENCH_AUX_BIAS = -2.5


def derive_seed(*parts: int) -> int:
    """Deterministic 63-bit seed from a tuple of integers."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def _rng(seed, index):
    return np.random.Generator(np.random.PCG64([int(seed), int(index)]))


def _draw(cdf_rows, u):
    # categorical draw by inverse CDF; min() guards against cdf[-1] < 1 by rounding
    return min(int(np.searchsorted(cdf_rows, u, side="right")), cdf_rows.size - 1)


@dataclass(frozen=True)
class ScenarioConfig:
    k: int
    p_ii: float
    psi_ii: float
    T: int = 60
    N: int = 100
    seed: int = 0
    transition_rule: str = "next"

    def __post_init__(self):
        if self.transition_rule not in TRANSITION_RULES:
            raise InvalidInputError(f"unknown transition_rule {self.transition_rule!r}")
        if self.k < 2:
            raise InvalidInputError("k must be at least 2")
        for name in ("p_ii", "psi_ii"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise InvalidInputError(f"{name} must lie in (0, 1], got {v}")
        if self.T < 0 or self.N < 1:
            raise InvalidInputError("T must be >= 0 and N >= 1")

    def to_dict(self):
        return asdict(self)


def study1_grid(ks=GRID_K, psis=GRID_PSI, piis=GRID_PII, T=60, N=100, seed=0, transition_rule="next"):
    """All (k, psi_ii, p_ii) combinations, k-major, as ScenarioConfigs."""
    return [
        ScenarioConfig(k=k, p_ii=p, psi_ii=psi, T=T, N=N, seed=seed, transition_rule=transition_rule)
        for k, psi, p in itertools.product(ks, psis, piis)
    ]


def build_ground_truth(config: ScenarioConfig) -> HmmParams:
    """Progressive chain starting in state 0.

    Row i keeps ``p_ii`` on the diagonal.  The remaining ``1 - p_ii`` goes
    to state i+1 under ``transition_rule="next"`` and is split evenly over
    all higher states under ``"uniform"``.  The last state is absorbing.
    Emissions put ``psi_ii`` on the diagonal and split the rest evenly.
    """
    k = config.k
    P = np.zeros((k, k))
    for i in range(k - 1):
        P[i, i] = config.p_ii
        if config.transition_rule == "next":
            P[i, i + 1] = 1.0 - config.p_ii
        else:
            P[i, i + 1:] = (1.0 - config.p_ii) / (k - 1 - i)
    P[k - 1, k - 1] = 1.0
    Psi = np.full((k, k), (1.0 - config.psi_ii) / (k - 1))
    np.fill_diagonal(Psi, config.psi_ii)
    pi = np.zeros(k)
    pi[0] = 1.0
    return HmmParams(pi, P, Psi)


def _sample_path(params_cdf, rng, T, first_state=None):
    pi_cdf, P_cdf, Psi_cdf = params_cdf
    u = rng.random(2 * (T + 1))
    states = np.empty(T + 1, dtype=np.int64)
    obs = np.empty(T + 1, dtype=np.int64)
    x = _draw(pi_cdf, u[0]) if first_state is None else first_state
    for t in range(T + 1):
        if t > 0:
            x = _draw(P_cdf[x], u[2 * t])
        states[t] = x
        obs[t] = _draw(Psi_cdf[x], u[2 * t + 1])
    return states, obs


def _cdfs(params: HmmParams):
    return (np.cumsum(params.pi), np.cumsum(params.P, axis=1), np.cumsum(params.Psi, axis=1))


def sample_paths(truth: HmmParams, T: int, N: int, seed: int):
    """Latent states and observations, each an (N, T+1) int array."""
    cdfs = _cdfs(truth)
    states = np.empty((N, T + 1), dtype=np.int64)
    obs = np.empty((N, T + 1), dtype=np.int64)
    for i in range(N):
        states[i], obs[i] = _sample_path(cdfs, _rng(seed, i), T)
    return states, obs


def sample_dataset(truth: HmmParams, T: int, N: int, seed: int) -> ObservationDataset:
    """N independent length-(T+1) observation sequences from ``truth``."""
    _, obs = sample_paths(truth, T, N, seed)
    return ObservationDataset(list(obs))


def scenario_data(config: ScenarioConfig):
    """Ground truth, training set and an independent same-size holdout."""
    truth = build_ground_truth(config)
    train = sample_dataset(truth, config.T, config.N, derive_seed(config.seed, 0))
    holdout = sample_dataset(truth, config.T, config.N, derive_seed(config.seed, 1))
    return truth, train, holdout


def default_covariate_weights(d: int) -> np.ndarray:
    """Fixed (d, 3) covariate-to-initial-state weights.

    The first covariate moves patients from state 0 toward state 2; the
    second separates state 0 from state 1, the pair that a single noisy
    first observation confuses most.  Further covariates are pure noise.
    """
    W = np.zeros((d, 3))
    W[0] = [-3.0, 0.0, 3.0]
    if d > 1:
        W[1] = [3.0, -3.0, 0.0]
    return W


@dataclass
class CovariateBenchmark:
    data: ObservationDataset
    truth: HmmParams
    weights: np.ndarray
    bias: np.ndarray
    aux_weight: float
    aux_bias: float
    states: list
    seed: int


def build_covariate_benchmark(
    n_patients: int = 400,
    d: int = 4,
    seed: int = 0,
    weights: Optional[np.ndarray] = None,
    effect_scale: float = 1.0,
    aux_weight: float = BENCH_AUX_WEIGHT,
    aux_bias: float = BENCH_AUX_BIAS,
) -> CovariateBenchmark:
    """Patients with standard-normal covariates, a covariate-driven initial
    state, 3 to 5 visits, and a binary outcome per visit that fires with
    probability ``sigmoid(aux_weight * [state == 2] + aux_bias)``.

    ``effect_scale=0`` removes all covariate influence on the initial state.
    """
    if n_patients < 10:
        raise InvalidInputError("n_patients must be at least 10")
    if d < 1:
        raise InvalidInputError("d must be at least 1")
    W = default_covariate_weights(d) if weights is None else np.asarray(weights, dtype=float)
    W = W * effect_scale
    bias = np.zeros(3)
    truth = HmmParams(np.full(3, 1 / 3), BENCH_P, BENCH_PSI)
    _, P_cdf, Psi_cdf = _cdfs(truth)
    len_cdf = np.cumsum(BENCH_LENGTH_PROBS)

    X = np.empty((n_patients, d))
    seqs, states = [], []
    aux_rows = []
    for i in range(n_patients):
        rng = _rng(seed, i)
        X[i] = rng.standard_normal(d)
        pi_i = softmax(X[i] @ W + bias)
        u = rng.random(2)
        first = _draw(np.cumsum(pi_i), u[0])
        T = 2 + _draw(len_cdf, u[1])
        x, y = _sample_path((None, P_cdf, Psi_cdf), rng, T, first_state=first)
        p_aux = 1.0 / (1.0 + np.exp(-(aux_weight * (x == 2) + aux_bias)))
        aux_rows.append((rng.random(T + 1) < p_aux).astype(float))
        seqs.append(y)
        states.append(x)
    width = max(s.size for s in seqs)
    aux_values = np.zeros((n_patients, width))
    aux_mask = np.zeros((n_patients, width), dtype=bool)
    for i, row in enumerate(aux_rows):
        aux_values[i, : row.size] = row
        aux_mask[i, : row.size] = True
    data = ObservationDataset(
        seqs,
        ids=[f"p{i:04d}" for i in range(n_patients)],
        covariates=X,
        aux_values=aux_values,
        aux_mask=aux_mask,
    )
    return CovariateBenchmark(data, truth, W, bias, aux_weight, aux_bias, states, seed)
