"""Learnable dense temporal modeling.

Enriches per-frame spatial feature maps with temporal relations through two
complementary blocks, then pools to per-frame vectors:

* patch-temporal block: a learnable temporal MLP mixes each patch's T-vector,
  a patch-shift inserts the mixed patches at a stride, and spatial
  self-attention follows (weighted between shifted and unshifted inputs);
* channel-temporal block: a per-channel learnable temporal convolution
  followed by spatial self-attention.

The two block outputs are fused by a convex weight, spatially mean-pooled to
[B, T, C], and temporally mean-pooled to per-video seed vectors [B, C].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .ops import (AttentionParams, depthwise_conv1d, impulse_kernel_init,
                  near_identity_init, scaled_dot_attention)
from .tensor import Parameter, Tensor


@dataclass
class LdtmConfig:
    gap: int = 2
    gamma: float = 0.5
    beta: float = 0.5
    kernel_size: int = 3

    def validate(self):
        if self.gap < 1:
            raise ConfigError(f"gap must be >= 1, got {self.gap}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0,1], got {self.gamma}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0,1], got {self.beta}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigError(
                f"kernel_size must be odd and positive, got {self.kernel_size}")


@dataclass
class LdtmParams:
    w_t1: Parameter        # [T, T] temporal mixing, near-identity init
    w_t2: Parameter        # [T, T]
    patch_attn: AttentionParams   # shared by both spatial-attention calls
    chan_attn: AttentionParams    # attention after the channel conv
    kernels: Parameter     # [C, k] per-channel temporal kernels, impulse init

    @classmethod
    def create(cls, rng, t, c, kernel_size, dtype, prefix="ldtm"):
        return cls(
            w_t1=Parameter(near_identity_init(rng, t, 0.01, dtype),
                           f"{prefix}.ptrm.w_t1"),
            w_t2=Parameter(near_identity_init(rng, t, 0.01, dtype),
                           f"{prefix}.ptrm.w_t2"),
            patch_attn=AttentionParams.create(rng, c, f"{prefix}.ptrm.attn", dtype),
            chan_attn=AttentionParams.create(rng, c, f"{prefix}.ctrm.attn", dtype),
            kernels=Parameter(impulse_kernel_init(c, kernel_size, dtype),
                              f"{prefix}.ctrm.kernels"),
        )

    def parameters(self):
        return ([self.w_t1, self.w_t2]
                + self.patch_attn.parameters()
                + self.chan_attn.parameters()
                + [self.kernels])


@dataclass
class EnhancedFeatures:
    per_frame: Tensor   # [B, T, C], spatially pooled enhanced features
    node_seed: Tensor   # [B, C], temporal mean of per_frame


def temporal_mlp(f_seq, w_t1, w_t2):
    """relu(x . W1) . W2 + x along the trailing T axis. f_seq: [B, HW, C, T]."""
    t = f_seq.shape[-1]
    if w_t1.shape != (t, t) or w_t2.shape != (t, t):
        raise DimensionError(
            f"temporal MLP weights {w_t1.shape}/{w_t2.shape} do not match T={t}")
    return T.add(T.matmul(T.relu(T.matmul(f_seq, w_t1)), w_t2), f_seq)


def patch_shift(f_seq, h_t, gap):
    """Keep patches at indices n % gap == 0, take the rest from h_t."""
    if f_seq.shape != h_t.shape:
        raise DimensionError(
            f"patch_shift operands disagree: {f_seq.shape} vs {h_t.shape}")
    hw = f_seq.shape[1]
    keep = (np.arange(hw) % gap == 0).astype(f_seq.dtype)
    mask = keep.reshape(1, hw, 1, 1)
    return T.add(T.mul(f_seq, mask), T.mul(h_t, 1.0 - mask))


def _to_seq1(f):
    """[B, T, C, H, W] -> [B, HW, C, T]."""
    b, t, c, h, w = f.shape
    return T.reshape(T.transpose(f, (0, 3, 4, 2, 1)), (b, h * w, c, t))


def _seq1_to_tokens(f_seq):
    """[B, HW, C, T] -> [B*T, HW, C] token batches for spatial attention."""
    b, hw, c, t = f_seq.shape
    return T.reshape(T.transpose(f_seq, (0, 3, 1, 2)), (b * t, hw, c))


def ptrm(f, cfg, params):
    """Patch-temporal block: [B, T, C, H, W] -> [B*T, HW, C]."""
    f_seq1 = _to_seq1(f)
    if cfg.gamma == 0.0:
        return scaled_dot_attention(_seq1_to_tokens(f_seq1), params.patch_attn)
    h_t = temporal_mlp(f_seq1, params.w_t1, params.w_t2)
    shifted = patch_shift(f_seq1, h_t, cfg.gap)
    shifted_attn = scaled_dot_attention(_seq1_to_tokens(shifted), params.patch_attn)
    if cfg.gamma == 1.0:
        return shifted_attn
    plain_attn = scaled_dot_attention(_seq1_to_tokens(f_seq1), params.patch_attn)
    return T.add(T.mul(shifted_attn, cfg.gamma), T.mul(plain_attn, 1.0 - cfg.gamma))


def ctrm(f, cfg, params):
    """Channel-temporal block: [B, T, C, H, W] -> [B*T, HW, C]."""
    b, t, c, h, w = f.shape
    f_seq2 = T.reshape(T.transpose(f, (0, 3, 4, 2, 1)), (b * h * w, c, t))
    conv = depthwise_conv1d(f_seq2, params.kernels)
    tokens = T.reshape(
        T.transpose(T.reshape(conv, (b, h * w, c, t)), (0, 3, 1, 2)),
        (b * t, h * w, c))
    return scaled_dot_attention(tokens, params.chan_attn)


def ldtm_forward(f, cfg, params):
    """Full enhancement: [B, T, C, H, W] -> EnhancedFeatures([B,T,C], [B,C])."""
    cfg.validate()
    b, t, c, h, w = f.shape
    if cfg.beta == 1.0:
        fused = ptrm(f, cfg, params)
    elif cfg.beta == 0.0:
        fused = ctrm(f, cfg, params)
    else:
        fused = T.add(T.mul(ptrm(f, cfg, params), cfg.beta),
                      T.mul(ctrm(f, cfg, params), 1.0 - cfg.beta))
    per_frame = T.reshape(T.mean(fused, axis=1), (b, t, c))
    node_seed = T.mean(per_frame, axis=1)
    return EnhancedFeatures(per_frame, node_seed)
