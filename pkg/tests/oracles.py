"""Independent reference implementations shared by the unit and acceptance tests."""
import numpy as np
from conftest import numeric_grad, rel_error

from denseshift.engine import Network, backward, forward, infer_shapes
from denseshift.engine import functional as F
from denseshift.engine import spec as S
from denseshift.engine.models import mlp
from denseshift.engine.network import weight_shape
from denseshift.engine.spec import WeightProviderSpec
from denseshift.reparam import ShiftCodes, num_scale_terms


def random_fp_spec(rng):
    """A small random conv or MLP architecture with full-precision weights."""
    if rng.random() < 0.7:
        c_in, size = int(rng.integers(1, 3)), int(rng.integers(5, 8))
        c1 = int(rng.integers(2, 4))
        k = int(rng.choice([1, 3]))
        pad = int(rng.integers(0, 2))
        layers = [S.conv2d(c_in, c1, k, stride=1, padding=pad, bias=bool(rng.random() < 0.5))]
        if rng.random() < 0.5:
            layers.append(S.batchnorm(c1))
        layers.append(S.relu())
        layers.append(S.maxpool(2) if rng.random() < 0.5 else S.avgpool(2))
        spec = S.NetworkSpec((c_in, size, size), tuple(layers))
        c, h, w = infer_shapes(spec)[-1]
        layers += [S.flatten(), S.linear(c * h * w, 3)]
        return S.NetworkSpec((c_in, size, size), tuple(layers))
    dims = [int(rng.integers(2, 6)) for _ in range(int(rng.integers(2, 4)))] + [3]
    return mlp(dims, batchnorm=bool(rng.random() < 0.5))


def network_gradcheck(spec, seed):
    """Max relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    net = Network(spec, seed=seed, dtype=np.float64)
    for _, _, p in net.parameters():
        p += rng.normal(scale=0.1, size=p.shape)  # move biases/BN params off their init
    x = rng.normal(size=(4,) + tuple(spec.input_shape))
    y = rng.integers(0, 3, size=4)

    def loss():
        return F.softmax_cross_entropy(forward(net, x)[0], y)[0]

    logits, cache = forward(net, x)
    grads = backward(net, cache, F.softmax_cross_entropy(logits, y)[1])
    worst = 0.0
    for i, name, p in net.parameters():
        num = numeric_grad(loss, p, h=1e-4)
        worst = max(worst, rel_error(grads[i][name], num, floor=1e-6))
    return worst


def random_codes(rng, n, bits, zero_fraction=0.0, max_shift=None):
    T = num_scale_terms(bits)
    hi = T if max_shift is None else max_shift
    sign = rng.choice(np.array([-1, 1], np.int8), size=n)
    shift = rng.integers(0, hi + 1, size=n)
    zero = rng.random(n) < zero_fraction if zero_fraction else None
    return ShiftCodes(sign, shift, 0, zero)


def oracle_dot(x, codes):
    """Plain integer dot product of decoded weights (exact in Python ints)."""
    return sum(int(a) * int(w) for a, w in zip(np.asarray(x).ravel(), codes.values().ravel()))


def frozen(bits=3, bias=0, allow_zero=True):
    return WeightProviderSpec("frozen_shift", bits=bits, exponent_bias=bias, allow_zero=allow_zero)


def random_shift_weights(rng, shape, bits, bias, zero_fraction):
    """Zero or +-2**p with p in the zero-code variant's range b..b+T-1."""
    T = num_scale_terms(bits)
    w = rng.choice([-1.0, 1.0], size=shape) * np.ldexp(1.0, rng.integers(bias, bias + T, size=shape))
    w[rng.random(shape) < zero_fraction] = 0.0
    return w


def shift_network(spec, rng, zero_fraction, bn_stats=True):
    net = Network(spec, seed=0, dtype=np.float64)
    for i, l in enumerate(spec.layers):
        if l.kind in S.WEIGHTED and l.weight.kind == "frozen_shift":
            net.params[i]["frozen"] = random_shift_weights(rng, weight_shape(l), l.weight.bits,
                                                           l.weight.exponent_bias, zero_fraction)
            if l.bias:
                net.params[i]["bias"] = rng.normal(size=l.out_channels)
        elif l.kind == "batchnorm" and bn_stats:
            c = l.in_channels
            net.params[i] = {"gamma": rng.uniform(0.5, 2, c), "beta": rng.normal(size=c)}
            net.buffers[i] = {"running_mean": rng.normal(size=c), "running_var": rng.uniform(0.5, 4, c)}
    return net.eval()


def two_layer_cnn(bits=3, bias=-2):
    w = frozen(bits, bias)
    return S.NetworkSpec((2, 8, 8), (
        S.conv2d(2, 6, 3, padding=1, weight=w), S.batchnorm(6), S.relu(), S.maxpool(2),
        S.conv2d(6, 8, 3, padding=1, weight=w), S.relu(), S.avgpool(2),
        S.flatten(), S.linear(8 * 2 * 2, 5),
    ))
