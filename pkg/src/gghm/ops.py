"""Neural building blocks composed from the autodiff primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Parameter, Tensor


def uniform_init(rng, shape, fan_in, dtype):
    """Uniform in +-sqrt(1/fan_in), the default for projection/MLP weights."""
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def near_identity_init(rng, n, noise_sigma, dtype):
    """Identity plus small Gaussian noise; keeps temporal mixing near pass-through."""
    return (np.eye(n) + noise_sigma * rng.standard_normal((n, n))).astype(dtype)


def impulse_kernel_init(channels, kernel_size, dtype):
    """Unit impulse per channel: the convolution starts as the identity."""
    k = np.zeros((channels, kernel_size), dtype=dtype)
    k[:, (kernel_size - 1) // 2] = 1.0
    return k


@dataclass
class AttentionParams:
    """Single-head projection set for scaled dot-product self-attention."""

    wq: Parameter
    wk: Parameter
    wv: Parameter
    wo: Parameter

    @classmethod
    def create(cls, rng, channels, name, dtype):
        def proj(suffix):
            return Parameter(uniform_init(rng, (channels, channels), channels, dtype),
                             f"{name}.{suffix}")
        return cls(proj("wq"), proj("wk"), proj("wv"), proj("wo"))

    def parameters(self):
        return [self.wq, self.wk, self.wv, self.wo]


def scaled_dot_attention(x, params):
    """softmax(QK^T / sqrt(c)) V with learned q/k/v/output projections.

    x: [b, n, c] -> [b, n, c]. Single head; attention rows sum to 1.
    """
    c = x.shape[-1]
    if params.wq.shape[0] != c:
        raise DimensionError(
            f"attention channel width {params.wq.shape[0]} != input {c}")
    q = T.matmul(x, params.wq)
    k = T.matmul(x, params.wk)
    v = T.matmul(x, params.wv)
    scores = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(c))
    attn = T.softmax(scores, axis=-1)
    return T.matmul(T.matmul(attn, v), params.wo)


def depthwise_conv1d(x, kernels):
    """Per-channel temporal convolution, zero padded to keep length.

    x: [b, c, t]; kernels: [c, k] with k odd.
    out[..., t] = sum_i kernels[:, i] * x[..., t + i - (k-1)//2].
    """
    c, k = kernels.shape
    if k % 2 == 0:
        raise ConfigError(f"depthwise_conv1d kernel size must be odd, got {k}")
    if x.shape[-2] != c:
        raise DimensionError(
            f"depthwise_conv1d channels {x.shape[-2]} != kernel channels {c}")
    t_len = x.shape[-1]
    pad = (k - 1) // 2

    xd = x.data
    padded = np.zeros(xd.shape[:-1] + (t_len + 2 * pad,), dtype=xd.dtype)
    padded[..., pad:pad + t_len] = xd
    out = np.zeros_like(xd)
    for i in range(k):
        out += kernels.data[:, i:i + 1] * padded[..., i:i + t_len]

    def backward(g):
        if kernels.requires_grad:
            gk = np.empty_like(kernels.data)
            sum_axes = tuple(range(g.ndim - 2)) + (g.ndim - 1,)
            for i in range(k):
                gk[:, i] = (g * padded[..., i:i + t_len]).sum(axis=sum_axes)
            kernels._accumulate(gk)
        if x.requires_grad:
            gpad = np.zeros_like(padded)
            for i in range(k):
                gpad[..., i:i + t_len] += kernels.data[:, i:i + 1] * g
            x._accumulate(gpad[..., pad:pad + t_len])

    return T._make(out, (x, kernels), backward, "depthwise_conv1d")


@dataclass
class LinearParams:
    """Weight (+ optional bias) of an affine map."""

    w: Parameter
    b: Parameter | None = None

    @classmethod
    def create(cls, rng, n_in, n_out, name, dtype, bias=True):
        w = Parameter(uniform_init(rng, (n_in, n_out), n_in, dtype), f"{name}.w")
        bp = Parameter(np.zeros(n_out, dtype=dtype), f"{name}.b") if bias else None
        return cls(w, bp)

    def parameters(self):
        return [self.w] + ([self.b] if self.b is not None else [])


def linear(x, params):
    out = T.matmul(x, params.w)
    if params.b is not None:
        out = T.add(out, params.b)
    return out


@dataclass
class BatchNormParams:
    scale: Parameter
    shift: Parameter

    @classmethod
    def create(cls, n, name, dtype):
        return cls(Parameter(np.ones(n, dtype=dtype), f"{name}.scale"),
                   Parameter(np.zeros(n, dtype=dtype), f"{name}.shift"))

    def parameters(self):
        return [self.scale, self.shift]


def batchnorm(x, params, eps=1e-5):
    """Normalize [batch, features] with the batch's own statistics.

    Always uses the current batch statistics; there are no running averages,
    so train and eval behave identically for a given input set.
    """
    mu = T.mean(x, axis=0, keepdims=True)
    centered = T.sub(x, mu)
    var = T.mean(T.mul(centered, centered), axis=0, keepdims=True)
    inv = T.pow_scalar(T.add(var, eps), -0.5)
    return T.add(T.mul(T.mul(centered, inv), params.scale), params.shift)


def sinusoidal_encoding(n_positions, channels, dtype):
    """Standard sin/cos positional table, position = 0-based index: [n, channels]."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    half = (channels + 1) // 2
    freqs = np.exp(-math.log(10000.0) * (2 * np.arange(half, dtype=np.float64)) / channels)
    angles = pos * freqs[None, :]
    enc = np.zeros((n_positions, 2 * half), dtype=np.float64)
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc[:, :channels].astype(dtype)
