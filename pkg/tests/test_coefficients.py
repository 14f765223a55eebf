import numpy as np
import pytest
from hypothesis import given, strategies as st

from dropout_ua.coefficients import (CoefficientTable, coeffs_closed_form, coeffs_general, mu_identity_check,
                                     mu_values, restricted_marginals, table_for_model, verify_decomposition)
from dropout_ua.errors import InvalidProbabilityError, UnsupportedModelError
from dropout_ua.filters import FilterModel, block_bernoulli, dropconnect_model, from_pmf, unit_mass
from dropout_ua.network import network
from oracles import coefficients_by_lstsq, decomposition_rhs
from strategies import block_models, small_networks

GRID = np.linspace(-2, 2, 64)[:, None]


def test_closed_form_examples():
    np.testing.assert_allclose(coeffs_closed_form([0.5]).entries, [-1.0, 2.0])
    np.testing.assert_allclose(coeffs_closed_form([0.5, 0.5]).entries, [1.0, -2.0, -2.0, 4.0])
    t = coeffs_closed_form(0.5, r=2)
    np.testing.assert_allclose(t.entries, [1.0, -2.0, -2.0, 4.0])
    assert t[{0, 1}] == 4.0 and t[[]] == 1.0


def test_closed_form_no_dropout():
    t = coeffs_closed_form(np.zeros(4))
    expected = np.zeros(16)
    expected[-1] = 1.0
    np.testing.assert_array_equal(t.entries, expected)


def test_closed_form_rejects_certain_drop():
    with pytest.raises(InvalidProbabilityError):
        coeffs_closed_form([0.5, 1.0])


@given(st.floats(0.05, 1.0))
def test_general_single_block(q):
    a = coeffs_general(block_bernoulli([[0]], [q])).entries
    np.testing.assert_allclose(a, [-(1 - q) / q, 1 / q], rtol=1e-12)


def test_correlated_pair_as_one_block():
    m = from_pmf(2, [([1, 1], 0.5), ([0, 0], 0.5)], blocks=[[0, 1]])
    np.testing.assert_allclose(coeffs_general(m).entries, [-1.0, 2.0])
    # 2 E[Psi(w f)] - Psi(0) = Psi(w) for a net whose two parameters share the filter
    net = network(([[1.3]], [-0.4], "relu"))
    assert verify_decomposition(net, coeffs_general(m), m, GRID) < 1e-12


def test_unit_mass_table():
    a = coeffs_general(unit_mass(3, blocks=[[0], [1], [2]])).entries
    expected = np.zeros(8)
    expected[-1] = 1.0
    np.testing.assert_allclose(a, expected, atol=1e-15)


@given(st.lists(st.floats(0.0, 0.9), min_size=1, max_size=5))
def test_general_equals_closed_form(p):
    m = block_bernoulli([[i] for i in range(len(p))], 1.0 - np.array(p))
    g, c = coeffs_general(m), coeffs_closed_form(p)
    np.testing.assert_allclose(g.entries, c.entries, rtol=0, atol=1e-12 * max(1.0, np.abs(c.entries).max()))
    assert g.total() == pytest.approx(1.0, abs=1e-12)


@given(st.integers(1, 4).flatmap(lambda n: block_models(n)))
def test_general_matches_dense_oracle(m):
    np.testing.assert_allclose(coeffs_general(m).entries, coefficients_by_lstsq(m), atol=1e-9)


@given(st.integers(1, 3), st.data())
def test_general_pmf_matches_dense_oracle(r, data):
    w = np.array(data.draw(st.lists(st.floats(0.0, 1.0), min_size=1 << r, max_size=1 << r)))
    w[-1] += 0.1
    m = FilterModel(r, [[i] for i in range(r)], block_pmf=w / w.sum())
    a = coeffs_general(m)
    np.testing.assert_allclose(a.entries, coefficients_by_lstsq(m), atol=1e-8)
    assert a.total() == pytest.approx(1.0, abs=1e-9)


@given(small_networks(), st.data())
def test_decomposition_against_enumeration(net, data):
    m = data.draw(block_models(net.n_params))
    table = table_for_model(m)
    X = np.linspace(-2, 2, 9)[:, None] * np.ones((1, net.input_dim))
    np.testing.assert_allclose(decomposition_rhs(net, table.entries, m, X), net(X), atol=1e-9)
    assert verify_decomposition(net, table, m, X) < 1e-9


def test_per_subset_models():
    net = network(([[0.7, -1.1]], [0.3], "relu"), ([[1.4]], [-0.2], "identity"))
    blocks = [[0], [1], [3], [2, 4]]
    models = {V: FilterModel(5, blocks, keep_prob=[0.3 + 0.04 * V, 0.5, 0.8 - 0.02 * V, 1.0]) for V in range(16)}
    X = np.hstack([GRID, -0.5 * GRID])
    assert verify_decomposition(net, coeffs_general(models), models, X) < 1e-9


def test_constant_network_and_corruption():
    net = network(([[0.0]], [0.0], "relu"), ([[0.0]], [0.6], "identity"))
    m = dropconnect_model(net, 0.5)
    t = table_for_model(m)
    assert verify_decomposition(net, t, m, GRID) < 1e-12
    # no random block selected: only the merged always-on (bias) block survives
    empty = 1 << (m.r - 1)
    bad = t.with_entry(empty, t[empty] + 0.1)
    assert verify_decomposition(net, bad, m, GRID) == pytest.approx(0.1 * 0.6, rel=1e-12)


def test_restricted_marginals_sum_to_one():
    m = block_bernoulli([[0], [1], [2]], [0.2, 0.5, 0.9])
    for V in range(8):
        c = restricted_marginals(m, V)
        assert c.sum() == pytest.approx(1.0)
        assert np.all(c[[K for K in range(8) if K & ~V]] == 0)


def test_table_json_roundtrip(tmp_path):
    t = coeffs_closed_form([0.2, 0.4, 0.1])
    t.save(tmp_path / "t.json")
    back = CoefficientTable.load(tmp_path / "t.json")
    np.testing.assert_array_equal(back.entries, t.entries)


def test_block_limit():
    m = block_bernoulli([[i] for i in range(13)], np.full(13, 0.5))
    with pytest.raises(UnsupportedModelError):
        coeffs_general(m)


def test_mu_examples():
    assert mu_identity_check([0.5, 0.5]) < 1e-12
    np.testing.assert_array_equal(mu_values([1.0]), [0.0, 1.0])


@given(st.lists(st.floats(0.1, 1.0), min_size=1, max_size=6))
def test_mu_identity(q):
    assert mu_identity_check(q) < 1e-10
