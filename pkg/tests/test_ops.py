import math

import numpy as np
import pytest

from effbench.engine import ops, oracles
from effbench.engine.ops import BnParams, ConvParams, PoolParams
from effbench.engine.tensor import Rng, Tensor
from effbench.error_handling import GraphStateError, ShapeError

ATOL = 1e-9
CASES = range(100)


def random_input(gen, channels, min_side=3):
    """up to 2 x channels x 16 x 16"""
    batch, height, width = (int(n) for n in gen.integers([1, min_side, min_side], [3, 17, 17]))
    return gen.normal(size=(batch, channels, height, width))


def random_conv(seed):
    gen = np.random.default_rng(seed)
    groups = int(gen.choice([1, 2, 4]))
    in_channels = groups * int(gen.integers(1, 8 // groups + 1))
    out_channels = groups * int(gen.integers(1, 8 // groups + 1))
    kernel_h, kernel_w = (int(k) for k in gen.choice([1, 2, 3], size=2))
    stride_h, stride_w = (int(s) for s in gen.choice([1, 2], size=2))
    padding = str(gen.choice(ops.PADDING_MODES))
    x = random_input(gen, in_channels)
    p = ConvParams(kernel_h, kernel_w, in_channels, out_channels, stride_h, stride_w, padding, groups)
    p.weights = gen.normal(size=p.weight_shape)
    p.bias = gen.normal(size=out_channels) if gen.random() < 0.5 else None
    return x, p


def random_depthwise(seed):
    gen = np.random.default_rng(500 + seed)
    channels, multiplier = int(gen.integers(1, 9)), int(gen.choice([1, 2]))
    kernel_h, kernel_w = (int(k) for k in gen.choice([1, 2, 3], size=2))
    stride_h, stride_w = (int(s) for s in gen.choice([1, 2], size=2))
    p = ConvParams.depthwise(
        channels,
        kernel_h,
        kernel_w,
        depth_multiplier=multiplier,
        stride_h=stride_h,
        stride_w=stride_w,
        padding=str(gen.choice(ops.PADDING_MODES)),
    )
    p.weights = gen.normal(size=p.weight_shape)
    return random_input(gen, channels), p, gen


@pytest.mark.parametrize("seed", CASES)
def test_conv2d_matches_oracle(seed):
    x, p = random_conv(seed)
    out = ops.conv2d(Tensor(x), p).data
    expected = oracles.conv2d_oracle(x, p.weights, p.bias, p.stride, p.padding, p.groups)
    assert out.shape == expected.shape
    assert np.allclose(out, expected, rtol=0, atol=ATOL)


@pytest.mark.parametrize("seed", CASES)
def test_depthwise_conv2d_matches_oracle(seed):
    x, p, gen = random_depthwise(seed)
    out = ops.depthwise_conv2d(Tensor(x), p).data
    expected = oracles.conv2d_oracle(x, p.weights, None, p.stride, p.padding, p.groups)
    assert out.shape == expected.shape
    assert np.allclose(out, expected, rtol=0, atol=ATOL)

    channel = int(gen.integers(0, p.in_channels))
    shifted = x.copy()
    shifted[:, channel] += 1.0
    changed = np.abs(ops.depthwise_conv2d(Tensor(shifted), p).data - out).sum(axis=(0, 2, 3)) > 1e-12
    multiplier = p.out_channels // p.in_channels
    assert list(np.flatnonzero(changed)) == list(range(channel * multiplier, (channel + 1) * multiplier))


@pytest.mark.parametrize("seed", CASES)
def test_max_pool_matches_oracle(seed):
    gen = np.random.default_rng(100 + seed)
    kernel = tuple(int(k) for k in gen.choice([1, 2, 3], size=2))
    stride = tuple(int(s) for s in gen.choice([1, 2], size=2))
    x = random_input(gen, int(gen.integers(1, 9)))
    out = ops.max_pool2d(Tensor(x), PoolParams(*kernel, *stride)).data
    expected = oracles.max_pool2d_oracle(x, kernel, stride)
    assert out.shape == expected.shape
    assert np.allclose(out, expected, rtol=0, atol=ATOL)


@pytest.mark.parametrize("seed", CASES)
def test_batch_norm_matches_oracle(seed):
    gen = np.random.default_rng(200 + seed)
    channels = int(gen.integers(1, 9))
    x = 2.0 + 3.0 * random_input(gen, channels, min_side=2)
    p = BnParams.identity(channels)
    p.gamma, p.beta = gen.normal(size=channels), gen.normal(size=channels)
    out = ops.batch_norm(Tensor(x), p, mode="train").data
    assert np.allclose(out, oracles.batch_norm_oracle(x, p.gamma, p.beta, p.epsilon), rtol=0, atol=ATOL)


@pytest.mark.parametrize("seed", CASES)
@pytest.mark.parametrize("kind", ops.ACTIVATIONS)
def test_activation_matches_oracle(seed, kind):
    gen = np.random.default_rng(300 + seed)
    x = random_input(gen, int(gen.integers(1, 9)), min_side=1)
    alpha = float(gen.uniform(0.0, 0.3))
    out = ops.activation(Tensor(x), kind, alpha).data
    assert np.allclose(out, oracles.activation_oracle(x, kind, alpha), rtol=0, atol=ATOL)


@pytest.mark.parametrize("seed", CASES)
def test_channel_shuffle_matches_oracle(seed):
    gen = np.random.default_rng(600 + seed)
    groups = int(gen.choice([1, 2, 4, 8]))
    x = random_input(gen, groups * int(gen.integers(1, 8 // groups + 1)), min_side=1)
    out = ops.channel_shuffle(Tensor(x), groups).data
    assert (out == oracles.channel_shuffle_oracle(x, groups)).all()


@pytest.mark.parametrize("seed", CASES)
def test_fully_connected_matches_oracle(seed):
    gen = np.random.default_rng(400 + seed)
    x = gen.normal(size=tuple(int(n) for n in gen.integers(1, [3, 9, 5, 5])))
    outputs = int(gen.integers(1, 11))
    weights = gen.normal(size=(int(np.prod(x.shape[1:])), outputs))
    bias = gen.normal(size=outputs) if gen.random() < 0.5 else None
    out = ops.fully_connected(Tensor(x), weights, bias).data
    assert out.shape == (x.shape[0], outputs, 1, 1)
    assert np.allclose(out, oracles.fully_connected_oracle(x, weights, bias), rtol=0, atol=ATOL)


@pytest.mark.parametrize("seed", CASES)
def test_dropout_matches_oracle(seed):
    gen = np.random.default_rng(700 + seed)
    x = random_input(gen, int(gen.integers(1, 9)), min_side=1)
    p_drop = float(gen.uniform(0.0, 0.9))
    out = ops.dropout(Tensor(x), p_drop, "train", Rng(seed)).data
    expected = oracles.dropout_oracle(x, p_drop, Rng(seed).random(x.shape))
    assert np.allclose(out, expected, rtol=0, atol=ATOL)
    assert (ops.dropout(Tensor(x), p_drop, "infer", Rng(seed)).data == x).all()


@pytest.mark.parametrize("seed", CASES)
def test_softmax_cross_entropy_matches_decimal_oracle(seed):
    gen = np.random.default_rng(800 + seed)
    batch, classes = int(gen.integers(1, 5)), int(gen.integers(2, 11))
    logits = gen.normal(0.0, 3.0, size=(batch, classes, 1, 1))
    labels = gen.integers(0, classes, size=batch).tolist()
    loss, probs = ops.softmax_cross_entropy(Tensor(logits), labels)
    assert abs(loss - oracles.softmax_cross_entropy_oracle(logits, labels)) < 1e-10
    assert np.allclose(probs.data.reshape(batch, classes).sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_identity_conv():
    x = np.random.default_rng(0).normal(size=(2, 1, 5, 7))
    p = ConvParams(1, 1, 1, 1, weights=np.ones((1, 1, 1, 1)), bias=np.zeros(1))
    assert (ops.conv2d(Tensor(x), p).data == x).all()


def test_pointwise_conv_floats_out():
    p = ConvParams(1, 1, 3, 32, weights=np.zeros((32, 3, 1, 1)))
    out = ops.conv2d(Tensor(np.zeros((1, 3, 32, 32))), p)
    assert out.shape == (1, 32, 32, 32)
    assert out.floats_out == 32768


def test_strided_two_by_one_conv():
    p = ConvParams(2, 1, 32, 64, stride_h=2, weights=np.zeros((64, 32, 2, 1)))
    out = ops.conv2d(Tensor(np.zeros((1, 32, 32, 16))), p)
    assert out.shape == (1, 64, 16, 16)
    assert out.floats_out == 16384


def test_grouped_conv_equals_sliced_convs():
    gen = np.random.default_rng(5)
    x = gen.normal(size=(1, 4, 8, 8))
    p = ConvParams(3, 3, 4, 6, groups=2, weights=gen.normal(size=(6, 2, 3, 3)))
    out = ops.conv2d(Tensor(x), p).data
    for g in range(2):
        single = ConvParams(3, 3, 2, 3, weights=p.weights[3 * g : 3 * g + 3])
        part = ops.conv2d(Tensor(x[:, 2 * g : 2 * g + 2]), single).data
        assert np.allclose(out[:, 3 * g : 3 * g + 3], part, rtol=0, atol=ATOL)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kernel_h=1, kernel_w=1, in_channels=3, out_channels=4, groups=2),
        dict(kernel_h=0, kernel_w=1, in_channels=1, out_channels=1),
        dict(kernel_h=1, kernel_w=1, in_channels=1, out_channels=1, padding="reflect"),
    ],
)
def test_invalid_conv_params(kwargs):
    with pytest.raises(ShapeError):
        ConvParams(**kwargs)


def test_conv_channel_mismatch():
    p = ConvParams(1, 1, 3, 4, weights=np.zeros((4, 3, 1, 1)))
    with pytest.raises(ShapeError, match="channels"):
        ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), p)


def test_valid_conv_without_output():
    p = ConvParams(5, 5, 1, 1, padding="valid", weights=np.zeros((1, 1, 5, 5)))
    with pytest.raises(ShapeError, match="no output"):
        ops.conv2d(Tensor(np.zeros((1, 1, 3, 3))), p)


def test_depthwise_delta_kernel():
    x = np.random.default_rng(1).normal(size=(1, 1, 4, 6))
    p = ConvParams.depthwise(1, 1, 3, weights=np.array([0.0, 1.0, 0.0]).reshape(1, 1, 1, 3))
    assert (ops.depthwise_conv2d(Tensor(x), p).data == x).all()


def test_depthwise_channel_isolation():
    gen = np.random.default_rng(2)
    x = gen.normal(size=(1, 6, 5, 5))
    p = ConvParams.depthwise(6, 3, 1, depth_multiplier=2, weights=gen.normal(size=(12, 1, 3, 1)))
    out = ops.depthwise_conv2d(Tensor(x), p).data
    assert np.allclose(out, oracles.conv2d_oracle(x, p.weights, groups=6), rtol=0, atol=ATOL)
    shifted = x.copy()
    shifted[:, 0] += 1.0
    changed = np.abs(ops.depthwise_conv2d(Tensor(shifted), p).data - out).sum(axis=(0, 2, 3)) > 0
    assert list(np.flatnonzero(changed)) == [0, 1]


def test_depthwise_requires_depthwise_params():
    p = ConvParams(3, 3, 4, 4, weights=np.zeros((4, 4, 3, 3)))
    with pytest.raises(ShapeError):
        ops.depthwise_conv2d(Tensor(np.zeros((1, 4, 4, 4))), p)


def test_separable_pool_halves_width():
    x = np.random.default_rng(3).normal(size=(1, 2, 4, 6))
    out = ops.max_pool2d(Tensor(x), PoolParams(1, 2, 1, 2)).data
    assert out.shape == (1, 2, 4, 3)
    assert np.allclose(out, oracles.max_pool2d_oracle(x, (1, 2), (1, 2)), rtol=0, atol=ATOL)


def test_pool_constant_and_shapes():
    out = ops.max_pool2d(Tensor(np.full((1, 64, 32, 32), 3.0)), PoolParams(2, 2, 2, 2))
    assert out.shape == (1, 64, 16, 16)
    assert out.floats_out == 16384
    assert (out.data == 3.0).all()
    tall = ops.max_pool2d(Tensor(np.zeros((1, 1, 4, 4))), PoolParams(2, 1, 2, 1))
    assert tall.shape == (1, 1, 2, 4)


def test_pool_unit_kernel_is_identity():
    x = np.random.default_rng(4).normal(size=(1, 2, 3, 3))
    assert (ops.max_pool2d(Tensor(x), PoolParams(1, 1, 1, 1)).data == x).all()


def test_pool_window_larger_than_input():
    with pytest.raises(ShapeError):
        ops.max_pool2d(Tensor(np.zeros((1, 1, 1, 4))), PoolParams(2, 2, 2, 2))


def test_batch_norm_identity_in_infer_mode():
    x = np.random.default_rng(6).normal(size=(2, 3, 4, 4))
    out = ops.batch_norm(Tensor(x), BnParams.identity(3), mode="infer").data
    assert np.allclose(out, x / math.sqrt(1 + 1e-5), rtol=0, atol=ATOL)


def test_batch_norm_train_statistics():
    gen = np.random.default_rng(7)
    x = gen.normal(5.0, 2.0, size=(4, 3, 5, 5))
    p = BnParams.identity(3)
    p.gamma, p.beta = np.array([2.0, -1.0, 0.5]), np.array([0.1, 0.2, 0.3])
    out = ops.batch_norm(Tensor(x), p, mode="train").data
    assert np.allclose(out.mean(axis=(0, 2, 3)), p.beta, atol=1e-6)
    assert np.allclose(out.std(axis=(0, 2, 3)), np.abs(p.gamma), atol=1e-6)
    assert np.allclose(p.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(p.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))


def test_batch_norm_zero_variance_channel():
    out = ops.batch_norm(Tensor(np.ones((2, 1, 2, 2))), BnParams.identity(1), mode="train")
    assert out.is_finite()
    assert not out.data.any()


def test_activation_values():
    x = Tensor(np.array([-2.0, 3.0, -1.0, 0.0]).reshape(1, 4, 1, 1))
    assert ops.activation(x, "relu").flat.tolist() == [0.0, 3.0, 0.0, 0.0]
    assert ops.activation(x, "leaky_relu", 0.01).flat.tolist() == [-0.02, 3.0, -0.01, 0.0]
    assert (ops.activation(x, "linear").data == x.data).all()
    with pytest.raises(ShapeError):
        ops.activation(x, "tanh")


def channel_order(channels, groups):
    x = np.arange(float(channels)).reshape(1, channels, 1, 1)
    return ops.channel_shuffle(Tensor(x), groups).flat.astype(int).tolist()


def test_channel_shuffle_order():
    assert channel_order(6, 1) == [0, 1, 2, 3, 4, 5]
    assert channel_order(6, 2) == [0, 3, 1, 4, 2, 5]


def test_channel_shuffle_composition():
    # groups 4 then groups 2 on 8 channels restores the order
    x = np.arange(8.0).reshape(1, 8, 1, 1)
    once = ops.channel_shuffle(Tensor(x), 4)
    assert (ops.channel_shuffle(once, 2).data == x).all()


def test_channel_shuffle_is_permutation():
    x = np.random.default_rng(8).normal(size=(1, 12, 2, 2))
    out = ops.channel_shuffle(Tensor(x), 3).data
    planes = sorted(map(tuple, x[0].reshape(12, -1)))
    assert sorted(map(tuple, out[0].reshape(12, -1))) == planes


def test_channel_shuffle_divisibility():
    with pytest.raises(ShapeError):
        ops.channel_shuffle(Tensor(np.zeros((1, 6, 1, 1))), 4)


def test_fully_connected_identity_and_head():
    x = np.random.default_rng(9).normal(size=(2, 4, 1, 1))
    assert np.allclose(ops.fully_connected(Tensor(x), np.eye(4), np.zeros(4)).data, x)
    head = ops.fully_connected(Tensor(np.zeros((1, 256, 4, 4))), np.zeros((4096, 10)), np.zeros(10))
    assert head.floats_out == 10
    with pytest.raises(ShapeError):
        ops.fully_connected(Tensor(np.zeros((1, 3, 1, 1))), np.zeros((4, 2)))


def test_dropout_modes(rng):
    x = Tensor(np.random.default_rng(10).normal(size=(2, 3, 4, 4)))
    assert (ops.dropout(x, 0.0, "train", rng).data == x.data).all()
    assert (ops.dropout(x, 0.5, "infer").data == x.data).all()
    with pytest.raises(ShapeError):
        ops.dropout(x, 1.0, "train", rng)


def test_dropout_needs_rng_in_train_mode():
    x = Tensor(np.ones((1, 2, 3, 3)))
    with pytest.raises(GraphStateError, match="needs an rng"):
        ops.dropout(x, 0.5, "train")
    assert (ops.dropout(x, 0.5, "infer").data == 1.0).all()


def test_dropout_statistics(rng):
    out = ops.dropout(Tensor(np.ones((1, 1, 1000, 1000))), 0.5, "train", rng).data
    assert abs(out.mean() - 1.0) < 0.01
    assert abs((out == 0).mean() - 0.5) < 0.01


def test_softmax_cross_entropy_uniform():
    loss, probs = ops.softmax_cross_entropy(Tensor(np.zeros((2, 10, 1, 1))), [3, 7])
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    assert np.allclose(probs.data.reshape(2, 10).sum(axis=1), 1.0, atol=1e-12)


def test_softmax_cross_entropy_large_logit():
    logits = np.zeros((1, 4, 1, 1))
    logits[0, 2] = 1000.0
    loss, probs = ops.softmax_cross_entropy(Tensor(logits), [2])
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert probs.is_finite()


def test_softmax_cross_entropy_label_range():
    with pytest.raises(ShapeError, match="Labels"):
        ops.softmax_cross_entropy(Tensor(np.zeros((1, 3, 1, 1))), [3])


def test_same_padding_split():
    assert ops.same_padding(32, 3, 1) == (1, 1)
    assert ops.same_padding(8, 3, 2) == (0, 1)
    assert ops.same_padding(32, 2, 2) == (0, 0)
