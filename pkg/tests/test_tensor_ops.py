import math

import numpy as np
import pytest

from src.core import functional as F
from src.core.exceptions import ConfigError
from src.core.gradcheck import grad_check
from src.core.tensor import Precision, Tensor, add_bias, channel_mul, concat

D = Precision.DOUBLE


def _param(rng, *shape):
    return Tensor(rng.uniform(-1, 1, shape), trainable=True, precision=D)


def _const(array):
    return Tensor(array, precision=D)


def _weighted(out, rng):
    """Reduce an output to a scalar with fixed random weights."""
    w = _const(rng.uniform(0.5, 1.5, out.shape))
    return (out * w).sum()


def _naive_conv(x, k, b, stride, pad):
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = b[o]
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            acc += xp[c, i * stride + u, j * stride + v] * k[o, c, u, v]
                out[o, i, j] = acc
    return out


def test_backward_accumulates_shared_inputs():
    x = Tensor([3.0], trainable=True, precision=D)
    (x * x).sum().backward()
    assert x.grad[0] == 6.0


def test_constants_receive_no_gradient():
    x = Tensor([1.0, 2.0], trainable=True, precision=D)
    c = Tensor([5.0, 7.0], precision=D)
    (x * c).sum().backward()
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, [5.0, 7.0])


def test_elementwise_shape_mismatch_is_rejected():
    with pytest.raises(ConfigError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_conv2d_sum_of_ones():
    out = F.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 1)
    assert out.data[0, 0, 0] == 9.0


def test_conv2d_identity_kernel():
    x = np.random.default_rng(0).uniform(-1, 1, (1, 5, 4))
    out = F.conv2d(_const(x), _const(np.ones((1, 1, 1, 1))), _const(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("seed", range(12))
def test_conv2d_matches_naive_loop(seed):
    rng = np.random.default_rng(seed)
    c_in, c_out = rng.integers(1, 4, size=2)
    h, w = rng.integers(3, 9, size=2)
    kh, kw = rng.integers(1, 4, size=2)
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    x = rng.uniform(-1, 1, (c_in, h, w))
    k = rng.uniform(-1, 1, (c_out, c_in, kh, kw))
    b = rng.uniform(-1, 1, c_out)

    out = F.conv2d(_const(x), _const(k), _const(b), stride=stride, pad=pad)
    expected = _naive_conv(x, k, b, stride, pad)
    assert out.shape == expected.shape
    assert np.max(np.abs(out.data - expected)) <= 1e-12


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ConfigError, match="input channels"):
        F.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))), Tensor(np.zeros(1)))


def test_conv2d_rejects_oversized_kernel():
    with pytest.raises(ConfigError, match="larger than padded input"):
        F.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))


def test_conv2d_is_deterministic():
    rng = np.random.default_rng(3)
    x, k, b = rng.normal(size=(2, 8, 8)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    a = F.conv2d(Tensor(x), Tensor(k), Tensor(b), pad=1).data
    c = F.conv2d(Tensor(x), Tensor(k), Tensor(b), pad=1).data
    assert a.tobytes() == c.tobytes()


def test_bilinear_resize_identity_is_bit_exact():
    x = np.random.default_rng(1).normal(size=(2, 5, 7)).astype(np.float32)
    out = F.bilinear_resize(Tensor(x), 5, 7)
    assert out.data.tobytes() == x.tobytes()


def test_bilinear_resize_constant_extrapolation():
    out = F.bilinear_resize(_const(np.full((1, 1, 1), 0.37)), 2, 2)
    np.testing.assert_array_equal(out.data, np.full((1, 2, 2), 0.37))


def test_bilinear_resize_hand_evaluated():
    x = _const(np.array([[[0.0, 1.0], [2.0, 3.0]]]))
    out = F.bilinear_resize(x, 4, 4)
    # source coordinates (d + 0.5) * 0.5 - 0.5 clamped to [0, 1]
    pos = np.array([0.0, 0.25, 0.75, 1.0])
    expected = 2.0 * pos[:, None] + pos[None, :]
    np.testing.assert_allclose(out.data[0], expected, atol=1e-15)


def test_bilinear_resize_rejects_zero_target():
    with pytest.raises(ConfigError):
        F.bilinear_resize(Tensor(np.ones((1, 2, 2))), 0, 3)


def test_attention_single_token_returns_v():
    q, k, v = (_const(np.array([[a, b]])) for a, b in [(0.3, -1.0), (2.0, 0.5), (4.0, -7.0)])
    np.testing.assert_allclose(F.attention(q, k, v).data, v.data)


def test_attention_identical_keys_average_values():
    rng = np.random.default_rng(0)
    q = _const(rng.normal(size=(4, 3)))
    k = _const(np.tile(rng.normal(size=(1, 3)), (4, 1)))
    v = _const(rng.normal(size=(4, 3)))
    out = F.attention(q, k, v)
    np.testing.assert_allclose(out.data, np.tile(v.data.mean(axis=0), (4, 1)), atol=1e-12)


def test_attention_two_token_hand_computation():
    q = _const(np.eye(2))
    k = _const(np.eye(2))
    v = _const(np.array([[1.0, 2.0], [3.0, 4.0]]))
    a = 1.0 / math.sqrt(2.0)
    w = math.exp(a) / (math.exp(a) + 1.0)
    expected = np.array([
        [w * 1 + (1 - w) * 3, w * 2 + (1 - w) * 4],
        [(1 - w) * 1 + w * 3, (1 - w) * 2 + w * 4],
    ])
    np.testing.assert_allclose(F.attention(q, k, v).data, expected, atol=1e-12)


def test_attention_rejects_mismatched_heads():
    with pytest.raises(ConfigError):
        F.attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 3))))


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(2).normal(scale=20, size=(6, 9)), precision=D)
    rows = F.softmax(x, axis=-1).data.sum(axis=1)
    assert np.all(np.abs(rows - 1.0) <= 1e-6)


@pytest.mark.parametrize("precision", [Precision.SINGLE, Precision.DOUBLE])
def test_sigmoid_stays_in_open_interval(precision):
    x = Tensor(np.array([-1e4, -50.0, 0.0, 50.0, 1e4]), precision=precision)
    out = F.sigmoid(x).data
    assert np.all(out > 0) and np.all(out < 1)
    assert out[2] == 0.5


def test_layer_norm_normalizes_rows():
    x = Tensor(np.random.default_rng(4).normal(3.0, 2.0, size=(5, 16)), precision=D)
    out = F.layer_norm(x, _const(np.ones(16)), _const(np.zeros(16))).data
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=1), 1.0, atol=1e-5)


def test_max_pool_picks_block_maxima():
    x = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
    out = F.max_pool2d(_const(x)).data
    np.testing.assert_array_equal(out[0], [[5, 7], [13, 15]])


GRAD_CASES = {
    "matmul": lambda rng: ([_param(rng, 3, 4), _param(rng, 4, 2)], lambda a, b: a @ b),
    "div": lambda rng: ([_param(rng, 3), Tensor(rng.uniform(1, 2, 3), trainable=True, precision=D)],
                        lambda a, b: a / b),
    "conv2d": lambda rng: ([_param(rng, 2, 5, 5), _param(rng, 3, 2, 3, 3), _param(rng, 3)],
                           lambda x, k, b: F.conv2d(x, k, b, stride=2, pad=1)),
    "max_pool2d": lambda rng: ([_param(rng, 2, 4, 4)], F.max_pool2d),
    "bilinear_up": lambda rng: ([_param(rng, 2, 3, 2)], lambda x: F.bilinear_resize(x, 7, 5)),
    "bilinear_down": lambda rng: ([_param(rng, 1, 6, 6)], lambda x: F.bilinear_resize(x, 4, 3)),
    "softmax": lambda rng: ([_param(rng, 3, 5)], F.softmax),
    "layer_norm": lambda rng: ([_param(rng, 3, 6), _param(rng, 6), _param(rng, 6)], F.layer_norm),
    "gelu": lambda rng: ([_param(rng, 10)], F.gelu),
    "sigmoid": lambda rng: ([_param(rng, 10)], F.sigmoid),
    "relu": lambda rng: ([_param(rng, 10)], F.relu),
    "attention": lambda rng: ([_param(rng, 3, 2), _param(rng, 3, 2), _param(rng, 3, 2)], F.attention),
    "add_bias": lambda rng: ([_param(rng, 2, 3, 3), _param(rng, 2)], lambda x, b: add_bias(x, b, axis=0)),
    "channel_mul": lambda rng: ([_param(rng, 3, 2, 2), _param(rng, 1, 2, 2)], channel_mul),
    "scale": lambda rng: ([_param(rng, 2, 3), _param(rng, 1)], lambda x, s: x * s),
    "concat_slice": lambda rng: ([_param(rng, 2, 3), _param(rng, 2, 2)],
                                 lambda a, b: concat([a, b], axis=1)[:, 1:4]),
    "exp_log": lambda rng: ([Tensor(rng.uniform(0.5, 2, 4), trainable=True, precision=D)],
                            lambda x: x.log() + x.exp() + x.sqrt()),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_operation_gradients(name):
    rng = np.random.default_rng(7)
    params, op = GRAD_CASES[name](rng)
    out_shape = op(*params).shape
    weights = _const(rng.uniform(0.5, 1.5, out_shape))
    report = grad_check(lambda: (op(*params) * weights).sum(), params, eps=1e-5, op_name=name)
    assert report.max_rel_err <= 1e-4


def test_bce_with_logits_gradient():
    rng = np.random.default_rng(5)
    z = _param(rng, 6)
    y = _const((rng.uniform(size=6) > 0.5).astype(float))
    report = grad_check(lambda: _weighted(F.bce_with_logits(z, y), np.random.default_rng(1)), [z])
    assert report.max_rel_err <= 1e-4
