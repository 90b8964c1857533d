import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_force_marginals, random_params
from hmrnn.core import HmmParams, ObservationDataset, dataset_log_likelihood
from hmrnn.em import EmOptions, baum_welch_fit, em_step, expected_counts, init_from_observations
from hmrnn.errors import DegenerateDataError, InvalidInputError, UnsupportedInitializationError
from hmrnn.simgen import ScenarioConfig, scenario_data


def _pairwise_oracle(params, seq):
    """Expected transition counts by direct enumeration of two-slice posteriors."""
    k = params.k
    xi = np.zeros((k, k))
    total = 0.0
    for path in itertools.product(range(k), repeat=len(seq)):
        p = params.pi[path[0]] * params.Psi[path[0], seq[0]]
        for t in range(1, len(seq)):
            p *= params.P[path[t - 1], path[t]] * params.Psi[path[t], seq[t]]
        total += p
        for t in range(1, len(seq)):
            xi[path[t - 1], path[t]] += p
    return xi / total


def test_expected_counts_match_enumeration(rng):
    p = random_params(rng, 3, 2)
    seqs = [[0, 1, 1, 0], [1, 1, 0]]
    ll, pi_counts, trans, emit = expected_counts(p, ObservationDataset(seqs))
    xi = sum(_pairwise_oracle(p, s) for s in seqs)
    gammas = [brute_force_marginals(p, s) for s in seqs]
    emit_oracle = np.zeros((3, 2))
    for s, g in zip(seqs, gammas):
        for t, y in enumerate(s):
            emit_oracle[:, y] += g[t]
    np.testing.assert_allclose(trans, xi, atol=1e-12)
    np.testing.assert_allclose(emit, emit_oracle, atol=1e-12)
    np.testing.assert_allclose(pi_counts, gammas[0][0] + gammas[1][0], atol=1e-12)
    assert ll == pytest.approx(dataset_log_likelihood(p, ObservationDataset(seqs)), abs=1e-12)


def test_single_state_converges_immediately():
    data = ObservationDataset([[0, 1, 1, 0, 1]])
    fit = baum_welch_fit(data, HmmParams([1.0], [[1.0]], [[0.5, 0.5]]))
    assert fit.iterations <= 2
    assert fit.converged
    np.testing.assert_allclose(fit.params.Psi, [[0.4, 0.6]], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 4))
def test_log_likelihood_never_decreases(seed, k):
    rng = np.random.default_rng(seed)
    p = random_params(rng, k, 3)
    data = ObservationDataset([rng.integers(0, 3, size=n) for n in rng.integers(2, 15, size=6)])
    fit = baum_welch_fit(data, p, EmOptions(max_iters=30))
    diffs = np.diff(fit.log_likelihood_trace)
    assert np.all(diffs >= -1e-8 * np.abs(fit.log_likelihood_trace[1:]))


def test_fixed_point_after_convergence():
    truth, train, _ = scenario_data(ScenarioConfig(k=5, p_ii=0.6, psi_ii=0.75, seed=4))
    init = init_from_observations(train, 5, pi=truth.pi)
    fit = baum_welch_fit(train, init, EmOptions(criterion="param", param_tol=1e-9, max_iters=5000, freeze_pi=True))
    again = em_step(fit.params, train, freeze_pi=True)
    for a, b in ((again.P, fit.params.P), (again.Psi, fit.params.Psi)):
        assert np.max(np.abs(a - b)) < 1e-6


def test_freeze_pi_keeps_initial_distribution(rng):
    p = random_params(rng, 3, 3)
    data = ObservationDataset([rng.integers(0, 3, size=10) for _ in range(5)])
    fit = baum_welch_fit(data, p, EmOptions(freeze_pi=True, max_iters=10))
    np.testing.assert_array_equal(fit.params.pi, p.pi)


def test_rel_ll_criterion_stops():
    _, train, _ = scenario_data(ScenarioConfig(k=5, p_ii=0.8, psi_ii=0.9, seed=1))
    fit = baum_welch_fit(train, init_from_observations(train, 5), EmOptions(criterion="rel_ll"))
    assert fit.reason == "rel_ll_tol"
    tr = fit.log_likelihood_trace
    assert tr[-1] - tr[-2] < 1e-5 * abs(tr[-2])


def test_unvisited_state_keeps_its_rows():
    p = HmmParams([1.0, 0.0], [[1.0, 0.0], [0.3, 0.7]], [[0.6, 0.4], [0.2, 0.8]])
    out = em_step(p, ObservationDataset([[0, 1, 1]]))
    np.testing.assert_allclose(out.P[1], [0.3, 0.7])
    np.testing.assert_allclose(out.Psi[1], [0.2, 0.8])


def test_unreachable_symbol_is_degenerate():
    p = HmmParams([1.0, 0.0], np.eye(2), [[1.0, 0.0, 0.0], [0.5, 0.5, 0.0]])
    with pytest.raises(DegenerateDataError):
        baum_welch_fit(ObservationDataset([[0, 2]]), p)


def test_symbol_outside_alphabet():
    p = HmmParams([1.0, 0.0], np.eye(2), np.eye(2))
    with pytest.raises(InvalidInputError):
        baum_welch_fit(ObservationDataset([[0, 3]]), p)


def test_init_k5_off_diagonal_and_counts():
    data = ObservationDataset([[0, 0, 1, 2], [1, 1, 4]])
    init = init_from_observations(data, 5, psi_diag=0.95)
    assert init.Psi[0, 1] == pytest.approx(0.0125)
    np.testing.assert_allclose(np.diag(init.Psi), 0.95)
    # row 0: one 0->0, one 0->1, plus add-one over 5 targets
    np.testing.assert_allclose(init.P[0], np.array([2, 2, 1, 1, 1]) / 7)
    np.testing.assert_allclose(init.P[3], np.full(5, 0.2))
    np.testing.assert_allclose(init.pi, [0.5, 0.5, 0, 0, 0])


def test_init_rejects_mismatched_alphabet():
    with pytest.raises(UnsupportedInitializationError):
        init_from_observations(ObservationDataset([[0, 1]]), 3, c=2)


def test_options_validation():
    with pytest.raises(InvalidInputError):
        EmOptions(criterion="bogus")
    with pytest.raises(InvalidInputError):
        EmOptions(max_iters=0)
