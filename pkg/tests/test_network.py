import numpy as np
import pytest
from hypothesis import given, strategies as st

from dropout_ua.errors import ShapeError
from dropout_ua.network import Layer, Network, eval_masked, eval_masked_batch, eval_network, hs_norm, network
from strategies import small_networks


def kink4():
    # x -> 4 relu(x - 1); parameters [w1, b1, c, b2]
    return network(([[1.0]], [-1.0], "relu"), ([[4.0]], [0.0], "identity"))


def test_single_layer_examples():
    assert eval_network(network(([[1.0]], [-1.0], "relu")), [2.0]).tolist() == [1.0]
    assert eval_network(network(([[0.0]], [0.7], "identity")), [5.0]).tolist() == [0.7]


def test_composition():
    net = network(([[2.0]], [0.0], "relu"), ([[1.0]], [0.0], "identity"))
    assert eval_network(net, [3.0]).tolist() == [6.0]


def test_masked_examples():
    net = kink4()
    assert eval_masked(net, [1, 1, 1, 1], [2.0]).tolist() == [4.0]
    # halves on both weights: 4 * 0.5 * relu(0.5 * 4 - 1) = 2
    assert eval_masked(net, [0.5, 1, 0.5, 1], [4.0]).tolist() == [2.0]


def test_parameter_order_is_layer_major():
    net = network(([[1.0, 2.0], [3.0, 4.0]], [5.0, 6.0], "relu"), ([[7.0, 8.0]], [9.0], "identity"))
    np.testing.assert_array_equal(net.flat_params(), np.arange(1.0, 10.0))
    sl = net.param_slices()
    assert [(s[0].start, s[0].stop, s[1].start, s[1].stop) for s in sl] == [(0, 4, 4, 6), (6, 8, 8, 9)]


def test_hs_norm():
    assert hs_norm(np.array([[3.0, 4.0]])) == 5.0
    assert hs_norm(np.eye(2)) == pytest.approx(np.sqrt(2))
    assert hs_norm(np.zeros((3, 2))) == 0.0


def test_shape_errors():
    with pytest.raises(ShapeError):
        Network((Layer(np.ones((2, 1)), np.zeros(2), "relu"), Layer(np.ones((1, 3)), np.zeros(1), "identity")))
    with pytest.raises(ShapeError):
        eval_masked(kink4(), [1, 1, 1], [1.0])
    with pytest.raises(ShapeError):
        eval_network(kink4(), np.ones((3, 2)))


@given(small_networks(), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_all_ones_mask_is_plain_evaluation(net, xs):
    X = np.array(xs[: net.input_dim])[None, :]
    np.testing.assert_array_equal(eval_masked(net, np.ones(net.n_params), X), eval_network(net, X))
    np.testing.assert_array_equal(eval_masked(net, None, X), eval_network(net, X))


@given(small_networks(), st.data())
def test_mask_equals_reparametrisation(net, data):
    m = np.array(data.draw(st.lists(st.floats(0, 1), min_size=net.n_params, max_size=net.n_params)))
    X = np.linspace(-1, 1, 5)[:, None] * np.ones((1, net.input_dim))
    np.testing.assert_allclose(eval_masked(net, m, X), net.with_params(net.flat_params() * m)(X), atol=1e-12)


@given(small_networks(), st.data())
def test_batch_matches_loop(net, data):
    B = data.draw(st.integers(1, 4))
    masks = np.array(data.draw(st.lists(st.lists(st.sampled_from([0.0, 1.0]), min_size=net.n_params,
                                                 max_size=net.n_params), min_size=B, max_size=B)))
    X = np.linspace(-2, 2, 7)[:, None] * np.ones((1, net.input_dim))
    out = eval_masked_batch(net, masks, X)
    for b in range(B):
        np.testing.assert_allclose(out[b], eval_masked(net, masks[b], X), atol=1e-12)


@given(small_networks())
def test_json_roundtrip(net):
    back = Network.from_json(net.to_json())
    np.testing.assert_array_equal(back.flat_params(), net.flat_params())
    assert [l.activation for l in back.layers] == [l.activation for l in net.layers]


def test_save_load(tmp_path):
    net = kink4()
    net.save(tmp_path / "n.json")
    back = Network.load(tmp_path / "n.json")
    np.testing.assert_array_equal(back.flat_params(), net.flat_params())
