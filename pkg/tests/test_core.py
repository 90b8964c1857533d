import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_force_likelihood, brute_force_marginals, random_params, unscaled_log_likelihood
from hmrnn.core import (
    HmmParams,
    ObservationDataset,
    backward,
    dataset_log_likelihood,
    forward,
    posterior_marginals,
)
from hmrnn.errors import DegenerateDataError, InvalidInputError, InvalidModelError
from hmrnn.simgen import ScenarioConfig, scenario_data


def test_one_state_model_has_zero_log_likelihood():
    p = HmmParams([1.0], [[1.0]], [[1.0]])
    res = forward(p, [0, 0, 0])
    assert res.log_likelihood == 0.0
    assert np.all(backward(p, [0, 0, 0]) == 1.0)


def test_symmetric_chain_with_noiseless_emission():
    p = HmmParams([1.0, 0.0], [[0.5, 0.5], [0.5, 0.5]], np.eye(2))
    res = forward(p, [0, 1])
    assert res.log_likelihood == pytest.approx(np.log(0.5), abs=1e-15)


def test_forward_matches_path_enumeration_k2_T4():
    rng = np.random.default_rng(7)
    p = random_params(rng, 2, 2)
    seq = [0, 1, 1, 0]
    assert np.exp(forward(p, seq).log_likelihood) == pytest.approx(brute_force_likelihood(p, seq), abs=1e-12)


def test_smoothed_marginals_match_path_enumeration():
    rng = np.random.default_rng(8)
    p = random_params(rng, 2, 2)
    seq = [1, 0, 0, 1]
    np.testing.assert_allclose(posterior_marginals(p, seq), brute_force_marginals(p, seq), atol=1e-12)


def test_forward_result_invariants(rng):
    p = random_params(rng, 4, 3)
    seq = rng.integers(0, 3, size=40)
    res = forward(p, seq)
    np.testing.assert_allclose(res.scaled_alphas.sum(axis=1), 1.0, atol=1e-9)
    assert res.log_likelihood == pytest.approx(res.log_scale_terms.sum(), abs=1e-9)
    assert res.log_likelihood <= 0


@settings(max_examples=60, deadline=None)
@given(
    k=st.integers(1, 4),
    c=st.integers(1, 4),
    T=st.integers(0, 20),
    seed=st.integers(0, 2**32 - 1),
)
def test_scaling_matches_unscaled_recursion(k, c, T, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, k, c)
    seq = rng.integers(0, c, size=T + 1)
    assert forward(p, seq).log_likelihood == pytest.approx(unscaled_log_likelihood(p, seq), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(k=st.integers(1, 4), T=st.integers(0, 30), seed=st.integers(0, 2**32 - 1))
def test_posterior_marginals_normalize(k, T, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, k, 3)
    seq = rng.integers(0, 3, size=T + 1)
    gamma = posterior_marginals(p, seq)
    np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-9)
    assert forward(p, seq).log_likelihood <= 0


def test_long_sequences_stay_finite(rng):
    p = random_params(rng, 3, 3)
    seq = rng.integers(0, 3, size=20_001)
    res = forward(p, seq)
    assert np.isfinite(res.log_likelihood)
    assert res.log_likelihood < -1000


def test_dataset_log_likelihood_additivity(rng):
    p = random_params(rng, 3, 3)
    seq = rng.integers(0, 3, size=12)
    single = forward(p, seq).log_likelihood
    assert dataset_log_likelihood(p, ObservationDataset([seq, seq])) == 2 * single
    assert dataset_log_likelihood(p, ObservationDataset([])) == 0.0


def test_dataset_log_likelihood_on_generated_data():
    truth, train, _ = scenario_data(ScenarioConfig(k=5, p_ii=0.6, psi_ii=0.9, seed=11))
    total = dataset_log_likelihood(truth, train)
    per_seq = [forward(truth, s).log_likelihood for s in train.sequences]
    assert np.isfinite(total) and total < 0
    assert total == pytest.approx(sum(per_seq), rel=1e-12)


def test_ragged_dataset(rng):
    p = random_params(rng, 3, 2)
    seqs = [rng.integers(0, 2, size=n) for n in (3, 5, 4, 3, 5)]
    expected = sum(forward(p, s).log_likelihood for s in seqs)
    assert dataset_log_likelihood(p, ObservationDataset(seqs)) == pytest.approx(expected, rel=1e-13)


def test_validation_and_renormalization():
    p = HmmParams([0.5, 0.5 + 5e-10], [[1.0, 0.0], [0.3, 0.7]], [[1.0], [1.0]])
    assert p.pi.sum() == 1.0
    with pytest.raises(InvalidModelError):
        HmmParams([0.5, 0.6], np.eye(2), np.ones((2, 1)))
    with pytest.raises(InvalidModelError):
        HmmParams([1.0, 0.0], [[0.9, 0.2], [0.0, 1.0]], np.ones((2, 1)))
    with pytest.raises(InvalidInputError):
        HmmParams([1.0, 0.0], np.eye(3), np.ones((2, 1)))
    with pytest.raises(ValueError):
        p.P[0, 0] = 0.5


def test_observation_errors():
    p = HmmParams([1.0, 0.0], np.eye(2), np.eye(2))
    with pytest.raises(InvalidInputError):
        forward(p, [0, 2])
    with pytest.raises(InvalidInputError):
        forward(p, [0, np.nan, 1])
    with pytest.raises(InvalidInputError):
        forward(p, [])
    with pytest.raises(DegenerateDataError):
        forward(p, [1])
    with pytest.raises(InvalidInputError, match="sequence 1"):
        dataset_log_likelihood(p, ObservationDataset([[0], [3]]))


def test_dataset_auxiliary_mask_validation():
    with pytest.raises(InvalidInputError):
        ObservationDataset([[0, 1], [1]], aux_values=np.zeros((2, 2)), aux_mask=np.ones((2, 2), bool))
    ds = ObservationDataset([[0, 1], [1]], aux_values=[[1, 0], [0, 0]], aux_mask=[[1, 1], [1, 0]])
    assert ds.aux_mask.sum() == 3
    with pytest.raises(InvalidInputError):
        ObservationDataset([[0], [1]], covariates=np.zeros((3, 2)))
