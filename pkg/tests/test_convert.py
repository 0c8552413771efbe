import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import frozen, random_shift_weights, shift_network, two_layer_cnn

from denseshift.convert import (
    _exponents,
    convert_layer,
    convert_network,
    is_zero_free,
    shift_network_from,
    verify_equivalence,
)
from denseshift.engine import Network
from denseshift.engine import spec as S
from denseshift.errors import ConversionError, ShapeError


def layer_widths(net):
    return [(i, l.in_channels) for i, l in enumerate(net.spec.layers) if l.kind in S.WEIGHTED]


def test_convert_layer_hand_examples():
    W = np.array([[2.0, 0.0]])
    W2, dup = convert_layer(W)
    assert dup == [1]
    # feature 1 duplicated: zero -> (+1, -1), inputs ordered [0, 1, 1]
    assert W2.tolist() == [[2.0, 1.0, -1.0]]
    W = np.array([[2.0, 1.0], [0.0, -4.0]])
    W2, dup = convert_layer(W)
    assert dup == [0]
    # feature 0 duplicated: +2 -> (+4, -2), 0 -> (+1, -1)
    assert W2.tolist() == [[4.0, 1.0, -2.0], [1.0, -4.0, -1.0]]
    x = np.array([3.0, -5.0])
    assert np.array_equal(W2 @ np.array([3.0, -5.0, 3.0]), W @ x)


def test_convert_layer_zero_free_unchanged():
    W = np.array([[1.0, -2.0], [0.5, 8.0]])
    W2, dup = convert_layer(W)
    assert dup == [] and np.array_equal(W2, W)


def test_convert_layer_rejects_non_power_of_two():
    with pytest.raises(ConversionError):
        convert_layer(np.array([[3.0, 1.0]]))


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6), st.floats(0, 0.9))
def test_convert_layer_preserves_products(seed, o, i, zf):
    rng = np.random.default_rng(seed)
    W = random_shift_weights(rng, (o, i), 3, -1, zf)
    W2, dup = convert_layer(W, exponent_bias=-1)
    x = rng.integers(-50, 50, size=i).astype(np.float64)
    assert np.all(W2 != 0)
    assert W2.shape[1] == i + len(dup) <= 2 * i
    assert np.array_equal(W2 @ np.concatenate([x, x[dup]]), W @ x)
    if W.any():
        assert _exponents(W2).max() <= _exponents(W).max() + 1


def test_zero_free_network_structurally_unchanged():
    spec = S.NetworkSpec((4,), (S.linear(4, 3, weight=frozen(allow_zero=False)), S.relu(),
                                S.linear(3, 2, weight=frozen(allow_zero=False))))
    net = shift_network(spec, np.random.default_rng(0), 0.0)
    out = convert_network(net)
    assert [l.kind for l in out.spec.layers] == [l.kind for l in spec.layers]
    assert layer_widths(out) == layer_widths(net)
    for i in (0, 2):
        np.testing.assert_array_equal(out.weight(i), net.weight(i))


def test_single_layer_integer_inputs_exact():
    spec = S.NetworkSpec((12,), (S.linear(12, 5, weight=frozen(3, 0)),))
    net = shift_network(spec, np.random.default_rng(1), 0.4)
    out = convert_network(net)
    rep = verify_equivalence(net, out, n_inputs=100, integer_inputs=True)
    assert rep.max_abs_diff == 0.0 and rep.passed
    assert is_zero_free(out)


@pytest.mark.parametrize("seed", range(3))
def test_two_layer_cnn_with_thirty_percent_zeros(seed):
    net = shift_network(two_layer_cnn(), np.random.default_rng(seed), 0.3)
    assert not is_zero_free(net)
    out = convert_network(net)
    rep = verify_equivalence(net, out, n_inputs=100, tol=1e-5, seed=seed)
    assert rep.passed, rep
    assert is_zero_free(out)
    for (i, a), (j, b) in zip(layer_widths(net), layer_widths(out)[-len(layer_widths(net)):]):
        assert a <= b <= 2 * a
    for i, j in zip(net.spec.quantized_layers(), out.spec.quantized_layers()):
        assert _exponents(out.weight(j)).max() <= _exponents(net.weight(i)).max() + 1
        assert out.spec.layers[j].weight.exponent_bias == net.spec.layers[i].weight.exponent_bias


def test_input_duplication_uses_gather_prefix():
    net = shift_network(two_layer_cnn(), np.random.default_rng(5), 0.3)
    out = convert_network(net)
    assert out.spec.layers[0].kind == "gather"
    assert out.spec.layers[1].in_channels <= 2 * net.spec.layers[0].in_channels


def test_verify_equivalence_identity_and_perturbation():
    net = shift_network(two_layer_cnn(), np.random.default_rng(2), 0.3)
    assert verify_equivalence(net, net).max_abs_diff == 0.0
    out = convert_network(net)
    j = out.spec.quantized_layers()[-1]
    out.params[j]["frozen"][0, 0] *= 2
    assert not verify_equivalence(net, out).passed


def test_verify_equivalence_shape_mismatch():
    a = shift_network(S.NetworkSpec((4,), (S.linear(4, 2, weight=frozen()),)), np.random.default_rng(0), 0.2)
    b = shift_network(S.NetworkSpec((5,), (S.linear(5, 2, weight=frozen()),)), np.random.default_rng(0), 0.2)
    with pytest.raises(ShapeError):
        verify_equivalence(a, b)


def test_relu_chain_is_transparent():
    spec = S.NetworkSpec((4,), (S.linear(4, 4, weight=frozen()), S.relu(), S.relu(),
                                S.linear(4, 3, weight=frozen())))
    net = shift_network(spec, np.random.default_rng(3), 0.5)
    assert verify_equivalence(net, convert_network(net)).passed


def test_unsupported_layer_on_duplication_path():
    # duplicated flat features cannot be mapped back through a flatten that is
    # not directly in front of the linear layer
    w = frozen()
    spec = S.NetworkSpec((1, 4, 4), (S.conv2d(1, 2, 3, padding=1, weight=w), S.flatten(), S.relu(),
                                     S.linear(32, 3, weight=w)))
    net = shift_network(spec, np.random.default_rng(3), 0.5)
    with pytest.raises(ConversionError, match="layer 1"):
        convert_network(net)


def test_trained_sign_shift_network_converts():
    spec = S.NetworkSpec((6,), (S.linear(6, 5, weight=S.quantizer("sign_shift", 3, exponent_bias=-2)),
                                S.relu(), S.linear(5, 3, weight=S.quantizer("sign_shift", 3, exponent_bias=-2))))
    net = Network(spec, seed=4, dtype=np.float64)
    shift = shift_network_from(net).eval()
    assert not is_zero_free(shift)
    out = convert_network(shift)
    assert is_zero_free(out) and verify_equivalence(shift, out).passed


def test_non_power_of_two_layer_rejected():
    spec = S.NetworkSpec((3,), (S.linear(3, 2, weight=frozen()),))
    net = shift_network(spec, np.random.default_rng(0), 0.0)
    net.params[0]["frozen"][0, 0] = 3.0
    with pytest.raises(ConversionError, match="layer 0"):
        convert_network(net)
