"""Forward layer primitives.

Array kernels (``*_forward``) work on raw float64 ndarrays and hand back the
intermediate values backward needs; the public ops wrap them for ``Tensor``.
"""
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import as_strided

from effbench.consts import BN_EPSILON, BN_MOMENTUM, LEAKY_ALPHA
from effbench.engine.tensor import Rng, Tensor
from effbench.error_handling import GraphStateError, ShapeError

PADDING_MODES = ("same", "valid")
ACTIVATIONS = ("relu", "leaky_relu", "linear")


@dataclass
class ConvParams:
    kernel_h: int
    kernel_w: int
    in_channels: int
    out_channels: int
    stride_h: int = 1
    stride_w: int = 1
    padding: str = "same"
    groups: int = 1
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.padding not in PADDING_MODES:
            raise ShapeError(f"Unknown padding mode {self.padding!r}")
        if self.groups < 1:
            raise ShapeError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"in_channels={self.in_channels} and out_channels={self.out_channels} "
                f"must both be divisible by groups={self.groups}"
            )
        if min(self.kernel_h, self.kernel_w, self.stride_h, self.stride_w) < 1:
            raise ShapeError("Kernel extents and strides must be >= 1")

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (
            self.out_channels,
            self.in_channels // self.groups,
            self.kernel_h,
            self.kernel_w,
        )

    @property
    def stride(self) -> Tuple[int, int]:
        return self.stride_h, self.stride_w

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels

    @property
    def depth_multiplier(self) -> int:
        return self.out_channels // self.in_channels

    @classmethod
    def depthwise(cls, channels, kernel_h, kernel_w, depth_multiplier=1, **kwargs):
        return cls(
            kernel_h=kernel_h,
            kernel_w=kernel_w,
            in_channels=channels,
            out_channels=channels * depth_multiplier,
            groups=channels,
            **kwargs,
        )


@dataclass
class PoolParams:
    kernel_h: int
    kernel_w: int
    stride_h: int
    stride_w: int

    def __post_init__(self):
        if min(self.kernel_h, self.kernel_w, self.stride_h, self.stride_w) < 1:
            raise ShapeError("Pool kernel extents and strides must be >= 1")


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM

    @classmethod
    def identity(cls, channels: int, **kwargs) -> "BnParams":
        return cls(
            gamma=np.ones(channels),
            beta=np.zeros(channels),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            **kwargs,
        )

    @property
    def channels(self) -> int:
        return len(self.gamma)


def same_padding(size: int, kernel: int, stride: int) -> Tuple[int, int]:
    """zero padding (before, after) so the output holds ceil(size / stride) positions"""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_output_extent(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(size / stride)
    return (size - kernel) // stride + 1 if size >= kernel else 0


def pool_output_extent(size: int, kernel: int, stride: int) -> int:
    if size < kernel or (size - kernel) % stride:
        raise ShapeError(
            f"Pooling window {kernel} with stride {stride} does not tile an extent of {size}"
        )
    return (size - kernel) // stride + 1


def conv_output_shape(in_shape: Sequence[int], p: ConvParams) -> Tuple[int, int, int, int]:
    batch, channels, height, width = in_shape
    if channels != p.in_channels:
        raise ShapeError(f"Input has {channels} channels, conv expects {p.in_channels}")
    out_h = conv_output_extent(height, p.kernel_h, p.stride_h, p.padding)
    out_w = conv_output_extent(width, p.kernel_w, p.stride_w, p.padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"Conv {p.kernel_h}x{p.kernel_w} stride {p.stride} ({p.padding}) "
            f"leaves no output for {height}x{width} input"
        )
    return batch, p.out_channels, out_h, out_w


def pool_output_shape(in_shape: Sequence[int], p: PoolParams) -> Tuple[int, int, int, int]:
    batch, channels, height, width = in_shape
    return (
        batch,
        channels,
        pool_output_extent(height, p.kernel_h, p.stride_h),
        pool_output_extent(width, p.kernel_w, p.stride_w),
    )


def pad_input(x: np.ndarray, p: ConvParams) -> Tuple[np.ndarray, Tuple[int, int, int, int]]:
    if p.padding == "valid":
        return x, (0, 0, 0, 0)
    top, bottom = same_padding(x.shape[2], p.kernel_h, p.stride_h)
    left, right = same_padding(x.shape[3], p.kernel_w, p.stride_w)
    if not (top or bottom or left or right):
        return x, (0, 0, 0, 0)
    padded = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    return padded, (top, bottom, left, right)


def im2col(x: np.ndarray, p: ConvParams, out_h: int, out_w: int) -> np.ndarray:
    """columns of shape (B, groups, C/groups * kh * kw, out_h * out_w)"""
    batch, channels = x.shape[:2]
    s_b, s_c, s_h, s_w = x.strides
    patches = as_strided(
        x,
        shape=(batch, channels, p.kernel_h, p.kernel_w, out_h, out_w),
        strides=(s_b, s_c, s_h, s_w, p.stride_h * s_h, p.stride_w * s_w),
        writeable=False,
    )
    per_group = channels // p.groups * p.kernel_h * p.kernel_w
    return patches.reshape(batch, p.groups, per_group, out_h * out_w)


def conv2d_forward(x: np.ndarray, p: ConvParams) -> Tuple[np.ndarray, np.ndarray]:
    """returns (output, columns)"""
    batch, _, out_h, out_w = conv_output_shape(x.shape, p)
    padded, _ = pad_input(x, p)
    cols = im2col(np.ascontiguousarray(padded), p, out_h, out_w)
    w_mat = p.weights.reshape(p.groups, p.out_channels // p.groups, -1)
    out = np.matmul(w_mat[None], cols).reshape(batch, p.out_channels, out_h, out_w)
    if p.bias is not None:
        out = out + p.bias[None, :, None, None]
    return out, cols


def max_pool2d_forward(x: np.ndarray, p: PoolParams) -> Tuple[np.ndarray, np.ndarray]:
    """returns (output, argmax within each window in row-major window order)"""
    batch, channels, out_h, out_w = pool_output_shape(x.shape, p)
    x = np.ascontiguousarray(x)
    s_b, s_c, s_h, s_w = x.strides
    windows = as_strided(
        x,
        shape=(batch, channels, out_h, out_w, p.kernel_h, p.kernel_w),
        strides=(s_b, s_c, p.stride_h * s_h, p.stride_w * s_w, s_h, s_w),
        writeable=False,
    ).reshape(batch, channels, out_h, out_w, p.kernel_h * p.kernel_w)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


@dataclass
class BnCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    mode: str
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)


def batch_norm_forward(x: np.ndarray, p: BnParams, mode: str) -> Tuple[np.ndarray, BnCache]:
    if x.shape[1] != p.channels:
        raise ShapeError(f"Input has {x.shape[1]} channels, batch norm expects {p.channels}")
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean = p.momentum * p.running_mean + (1.0 - p.momentum) * mean
        running_var = p.momentum * p.running_var + (1.0 - p.momentum) * var
    else:
        mean, var = p.running_mean, p.running_var
        running_mean, running_var = p.running_mean, p.running_var
    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = p.gamma[None, :, None, None] * x_hat + p.beta[None, :, None, None]
    return out, BnCache(x_hat, inv_std, mode, running_mean, running_var)


def activation_forward(x: np.ndarray, kind: str, alpha: float = LEAKY_ALPHA) -> np.ndarray:
    if kind == "relu":
        return np.where(x > 0, x, 0.0)
    if kind == "leaky_relu":
        return np.where(x >= 0, x, alpha * x)
    if kind == "linear":
        return x
    raise ShapeError(f"Unknown activation {kind!r}, expected one of {ACTIVATIONS}")


def channel_shuffle_forward(x: np.ndarray, groups: int) -> np.ndarray:
    batch, channels, height, width = x.shape
    if groups < 1 or channels % groups:
        raise ShapeError(f"{channels} channels cannot be split into {groups} groups")
    return (
        x.reshape(batch, groups, channels // groups, height, width)
        .transpose(0, 2, 1, 3, 4)
        .reshape(batch, channels, height, width)
    )


def fully_connected_forward(x: np.ndarray, weights: np.ndarray, bias: Optional[np.ndarray]):
    """returns (output of shape (N, out, 1, 1), flattened input)"""
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"Flattened input has {flat.shape[1]} values, weights expect {weights.shape[0]}"
        )
    out = flat @ weights
    if bias is not None:
        out = out + bias
    return out.reshape(x.shape[0], weights.shape[1], 1, 1), flat


def dropout_forward(x: np.ndarray, p_drop: float, mode: str, rng: Optional[Rng]):
    """returns (output, scaled keep mask or None)"""
    if not 0.0 <= p_drop < 1.0:
        raise ShapeError(f"Drop probability must lie in [0, 1), got {p_drop}")
    if mode != "train" or p_drop == 0.0:
        return x, None
    if rng is None:
        raise GraphStateError(f"Dropout with p={p_drop} in train mode needs an rng")
    mask = (rng.random(x.shape) >= p_drop) / (1.0 - p_drop)
    return x * mask, mask


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def check_labels(labels: np.ndarray, classes: int, batch: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != batch:
        raise ShapeError(f"Got {labels.shape[0]} labels for a batch of {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ShapeError(f"Labels must lie in [0, {classes}), got {labels.min()}..{labels.max()}")
    return labels


# -- Tensor level ops


def conv2d(input: Tensor, p: ConvParams) -> Tensor:
    return Tensor(conv2d_forward(input.data, p)[0])


def depthwise_conv2d(input: Tensor, p: ConvParams) -> Tensor:
    if not p.is_depthwise or p.out_channels % p.in_channels:
        raise ShapeError(
            f"Depthwise conv needs groups == in_channels ({p.groups} != {p.in_channels}) "
            f"and out_channels a multiple of in_channels"
        )
    return conv2d(input, p)


def max_pool2d(input: Tensor, p: PoolParams) -> Tensor:
    return Tensor(max_pool2d_forward(input.data, p)[0])


def batch_norm(input: Tensor, p: BnParams, mode: str = "infer") -> Tensor:
    """In train mode the running statistics of ``p`` are replaced by their moving averages."""
    out, cache = batch_norm_forward(input.data, p, mode)
    p.running_mean, p.running_var = cache.running_mean, cache.running_var
    return Tensor(out)


def activation(input: Tensor, kind: str = "relu", alpha: float = LEAKY_ALPHA) -> Tensor:
    return Tensor(activation_forward(input.data, kind, alpha))


def channel_shuffle(input: Tensor, groups: int) -> Tensor:
    return Tensor(channel_shuffle_forward(input.data, groups))


def fully_connected(input: Tensor, weights: np.ndarray, bias: Optional[np.ndarray] = None) -> Tensor:
    return Tensor(fully_connected_forward(input.data, weights, bias)[0])


def dropout(input: Tensor, p_drop: float, mode: str = "infer", rng: Optional[Rng] = None) -> Tensor:
    return Tensor(dropout_forward(input.data, p_drop, mode, rng)[0])


def softmax_cross_entropy(logits: Tensor, labels) -> Tuple[float, Tensor]:
    batch, classes = logits.shape.batch, logits.shape.floats_out
    flat = logits.data.reshape(batch, classes)
    labels = check_labels(labels, classes, batch)
    log_probs = log_softmax(flat)
    loss = float(-log_probs[np.arange(batch), labels].mean())
    return loss, Tensor(np.exp(log_probs).reshape(batch, classes, 1, 1))
