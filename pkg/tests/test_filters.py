import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dropout_ua.errors import InvalidProbabilityError, ShapeError
from dropout_ua.experiments import two_sigmoid_net
from dropout_ua.filters import (FilterModel, block_bernoulli, dropconnect_model, expectation, from_pmf,
                                matrix_dropconnect, node_dropout_model, pmf, sample, unit_mass)
from dropout_ua.network import network
from dropout_ua.rng import RandomSource
from strategies import block_models


def one_by_one():
    return network(([[1.5]], [0.2], "relu"))


def test_node_dropout_blocks():
    net = network(([[1.0, 2.0]], [0.5], "identity"))
    m = node_dropout_model(net, [0.5])
    assert m.blocks == ((0,), (1,), (2,))
    np.testing.assert_array_equal(m.keep_prob, [0.5, 0.5, 1.0])


def test_node_dropout_columns_share_a_block():
    net = network(([[1.0, 2.0], [3.0, 4.0]], [0.0, 0.0], "relu"), ([[1.0, 1.0]], [0.0], "identity"))
    m = node_dropout_model(net, [0.5, 0.2])
    assert m.blocks[:4] == ((0, 2), (1, 3), (6,), (7,))
    np.testing.assert_allclose(m.keep_prob, [0.5, 0.5, 0.8, 0.8, 1.0])


def test_no_dropout_is_all_ones():
    net = two_sigmoid_net()
    for m in (node_dropout_model(net, [0.0, 0.0]), dropconnect_model(net, 0.0)):
        assert m.prob_all_on() == 1.0
        assert m.deterministic
        np.testing.assert_array_equal(expectation(m), np.ones(net.n_params))


def test_input_weights_only_gives_two_blocks():
    m = dropconnect_model(two_sigmoid_net(), [0.5, 0.0])
    random = [b for b, q in zip(m.blocks, m.keep_prob) if q < 1]
    assert random == [(0,), (1,)]


def test_dropconnect_shapes():
    m = dropconnect_model(one_by_one(), 0.5)
    assert m.blocks == ((0,), (1,))
    np.testing.assert_array_equal(m.keep_prob, [0.5, 1.0])
    m2 = dropconnect_model(network((np.eye(2), [0.0, 0.0], "relu")), 0.3)
    assert m2.r == 5 and sum(q < 1 for q in m2.keep_prob) == 4


def test_expectation_examples():
    net = network(([[1.0, 2.0]], [0.5], "relu"), ([[2.0]], [0.1], "identity"))
    np.testing.assert_array_equal(dropconnect_model(net, 0.5).expectation(), [0.5, 0.5, 1, 0.5, 1])
    np.testing.assert_array_equal(unit_mass(3).expectation(), [1, 1, 1])
    corr = from_pmf(2, [([1, 1], 0.5), ([0, 0], 0.5)])
    np.testing.assert_allclose(corr.expectation(), [0.5, 0.5])


def test_pmf_examples():
    m = matrix_dropconnect(1, 2, 0.5)
    assert pmf(m, [1, 0]) == 0.25
    node = block_bernoulli([[0, 1]], [0.7])
    assert pmf(node, [1, 1]) == pytest.approx(0.7)
    assert pmf(node, [1, 0]) == 0.0
    dc = dropconnect_model(one_by_one(), 0.5)
    assert pmf(dc, [1, 0]) == 0.0  # bias filter switched off
    assert pmf(dc, [0, 1]) == 0.5


def test_validation():
    with pytest.raises(InvalidProbabilityError):
        dropconnect_model(one_by_one(), 1.0)
    with pytest.raises(InvalidProbabilityError):
        block_bernoulli([[0]], [0.0])
    with pytest.raises(InvalidProbabilityError):
        from_pmf(1, [([1], 0.4), ([0], 0.5)])
    with pytest.raises(InvalidProbabilityError):
        from_pmf(1, [([0], 1.0)])  # all-ones outcome must have positive mass
    with pytest.raises(InvalidProbabilityError):
        from_pmf(2, [([1, 0], 0.5), ([1, 1], 0.5)], blocks=[[0, 1]])
    with pytest.raises(ShapeError):
        FilterModel(3, [[0], [2]], keep_prob=[0.5, 0.5])
    with pytest.raises(InvalidProbabilityError):
        matrix_dropconnect(2, 2, 0.6, floor=0.5)


def test_sample_deterministic_cases():
    rng = RandomSource(0)
    m = block_bernoulli([[0, 1], [2]], [1.0, 1.0])
    assert all(sample(m, rng, i).tolist() == [1, 1, 1] for i in range(20))
    u = unit_mass(3, blocks=[[0], [1], [2]])
    assert all(sample(u, rng, i).tolist() == [1, 1, 1] for i in range(20))


def test_unit_mass_off_all_ones_is_rejected():
    # every entry needs a positive chance of being on
    with pytest.raises(InvalidProbabilityError):
        unit_mass(3, [1, 0, 1], blocks=[[0], [1], [2]])


def test_sample_frequency():
    m = block_bernoulli([[0]], [0.25])
    f = m.sample_blocks(RandomSource(1), 100_000)[:, 0]
    assert abs(f.mean() - 0.25) < 0.01


def test_block_constancy_of_samples():
    m = block_bernoulli([[0, 2], [1, 3, 4]], [0.5, 0.3])
    F = m.sample_at(RandomSource(2), np.arange(200))
    assert np.all(F[:, 0] == F[:, 2]) and np.all(F[:, 1] == F[:, 3]) and np.all(F[:, 3] == F[:, 4])


def test_pmf_model_sampling_matches_table():
    m = from_pmf(2, [([1, 1], 0.5), ([0, 0], 0.3), ([1, 0], 0.2)])
    S = m.sample_masks(RandomSource(4), 50_000)
    freq = np.bincount(S, minlength=4) / S.size
    np.testing.assert_allclose(freq, [0.3, 0.2, 0.0, 0.5], atol=0.01)


@given(st.integers(1, 5).flatmap(lambda n: block_models(n)))
def test_enumerated_pmf_sums_to_one_and_matches_expectation(m):
    outcomes = [np.array(f) for f in itertools.product([0, 1], repeat=m.n)]
    probs = np.array([m.pmf(f) for f in outcomes])
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    mean = sum(p * f for p, f in zip(probs, outcomes))
    np.testing.assert_allclose(mean, m.expectation(), atol=1e-12)
    np.testing.assert_allclose(m.block_probabilities(), [m.pmf(m.expand(((S >> np.arange(m.r)) & 1).astype(bool)))
                                                        for S in range(1 << m.r)], atol=1e-15)


@given(st.integers(1, 5).flatmap(lambda n: block_models(n)), st.integers(0, 100))
def test_samples_are_reproducible_and_index_local(m, i):
    rng = RandomSource(9)
    np.testing.assert_array_equal(sample(m, rng, i), m.sample_at(rng, [i])[0])
    np.testing.assert_array_equal(m.sample_masks(rng, 5, i)[0], m.sample_masks(rng, 1, i)[0])


@given(st.integers(1, 5).flatmap(lambda n: block_models(n)))
def test_json_roundtrip(m):
    back = FilterModel.from_json(m.to_json())
    assert back.blocks == m.blocks
    np.testing.assert_array_equal(back.keep_prob, m.keep_prob)


def test_pmf_json_roundtrip():
    m = from_pmf(2, [([1, 1], 0.5), ([0, 0], 0.5)])
    back = FilterModel.from_json(m.to_json())
    np.testing.assert_array_equal(back.block_pmf, m.block_pmf)
