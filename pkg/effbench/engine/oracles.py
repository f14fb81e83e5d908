"""Brute-force reference implementations of every layer primitive.

Written for clarity over speed: explicit loops over outputs, no strides
tricks, no shared helpers with ``ops``. Used only to cross-check the kernels.
"""
import math
from decimal import Decimal, getcontext

import numpy as np


def _same_pads(size, kernel, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2


def conv2d_oracle(x, weights, bias=None, stride=(1, 1), padding="same", groups=1):
    batch, channels, height, width = x.shape
    out_channels, per_group, kernel_h, kernel_w = weights.shape
    stride_h, stride_w = stride
    if padding == "same":
        out_h, top = _same_pads(height, kernel_h, stride_h)
        out_w, left = _same_pads(width, kernel_w, stride_w)
    else:
        out_h = (height - kernel_h) // stride_h + 1
        out_w = (width - kernel_w) // stride_w + 1
        top = left = 0
    outs_per_group = out_channels // groups
    out = np.zeros((batch, out_channels, out_h, out_w))
    for n in range(batch):
        for co in range(out_channels):
            first_in = (co // outs_per_group) * per_group
            for oh in range(out_h):
                for ow in range(out_w):
                    total = 0.0 if bias is None else bias[co]
                    for ci in range(per_group):
                        for i in range(kernel_h):
                            for j in range(kernel_w):
                                h = oh * stride_h + i - top
                                w = ow * stride_w + j - left
                                if 0 <= h < height and 0 <= w < width:
                                    total += x[n, first_in + ci, h, w] * weights[co, ci, i, j]
                    out[n, co, oh, ow] = total
    return out


def max_pool2d_oracle(x, kernel, stride):
    batch, channels, height, width = x.shape
    kernel_h, kernel_w = kernel
    stride_h, stride_w = stride
    out_h = (height - kernel_h) // stride_h + 1
    out_w = (width - kernel_w) // stride_w + 1
    out = np.empty((batch, channels, out_h, out_w))
    for n in range(batch):
        for c in range(channels):
            for oh in range(out_h):
                for ow in range(out_w):
                    best = -math.inf
                    for i in range(kernel_h):
                        for j in range(kernel_w):
                            best = max(best, x[n, c, oh * stride_h + i, ow * stride_w + j])
                    out[n, c, oh, ow] = best
    return out


def batch_norm_oracle(x, gamma, beta, epsilon):
    """training-mode normalization with statistics from two explicit passes"""
    batch, channels, height, width = x.shape
    count = batch * height * width
    out = np.empty_like(x)
    for c in range(channels):
        total = 0.0
        for n in range(batch):
            for h in range(height):
                for w in range(width):
                    total += x[n, c, h, w]
        mean = total / count
        squares = 0.0
        for n in range(batch):
            for h in range(height):
                for w in range(width):
                    squares += (x[n, c, h, w] - mean) ** 2
        std = math.sqrt(squares / count + epsilon)
        for n in range(batch):
            for h in range(height):
                for w in range(width):
                    out[n, c, h, w] = gamma[c] * (x[n, c, h, w] - mean) / std + beta[c]
    return out


def activation_oracle(x, kind, alpha=0.01):
    def single(v):
        if kind == "relu":
            return v if v > 0 else 0.0
        if kind == "leaky_relu":
            return v if v >= 0 else alpha * v
        return v

    return np.vectorize(single, otypes=[float])(x)


def channel_shuffle_oracle(x, groups):
    channels = x.shape[1]
    per_group = channels // groups
    out = np.empty_like(x)
    for g in range(groups):
        for i in range(per_group):
            out[:, i * groups + g] = x[:, g * per_group + i]
    return out


def dropout_oracle(x, p_drop, uniforms):
    """inverted dropout keeping every element whose uniform draw is >= p_drop"""
    out = np.zeros_like(x)
    for index in np.ndindex(*x.shape):
        if uniforms[index] >= p_drop:
            out[index] = x[index] / (1.0 - p_drop)
    return out


def fully_connected_oracle(x, weights, bias=None):
    flat = x.reshape(x.shape[0], -1)
    inputs, outputs = weights.shape
    out = np.zeros((flat.shape[0], outputs))
    for n in range(flat.shape[0]):
        for o in range(outputs):
            total = 0.0 if bias is None else bias[o]
            for i in range(inputs):
                total += flat[n, i] * weights[i, o]
            out[n, o] = total
    return out.reshape(flat.shape[0], outputs, 1, 1)


def softmax_cross_entropy_oracle(logits, labels, precision=60):
    """mean negative log-likelihood evaluated in arbitrary-precision decimals"""
    getcontext().prec = precision
    rows = logits.reshape(logits.shape[0], -1)
    total = Decimal(0)
    for row, label in zip(rows, labels):
        exps = [Decimal(float(v)).exp() for v in row]
        total += -(exps[int(label)] / sum(exps)).ln()
    return float(total / len(rows))
