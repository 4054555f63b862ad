"""Hybrid frame/tuple matching with bidirectional mean Hausdorff distances.

Frame-level matching treats each video as an unordered set of per-frame
vectors; tuple-level matching concatenates positional-encoded frame pairs
(i1 < i2) so temporal order matters. The two distances are fused by a convex
weight alpha. Sums of nearest-neighbor terms are reduced in ascending sorted
order, which makes the value exactly invariant to frame permutations and
bit-reproducible against the brute-force oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .ops import sinusoidal_encoding
from .tensor import Tensor

_DISTANCES = ("euclidean", "one_minus_cosine")


@dataclass
class HpmConfig:
    alpha: float = 0.5
    distance: str = "euclidean"
    temperature: float = 1.0

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0,1], got {self.alpha}")
        if self.distance not in _DISTANCES:
            raise ConfigError(
                f"distance must be one of {_DISTANCES}, got {self.distance!r}")
        if self.temperature <= 0:
            raise ConfigError(
                f"temperature must be positive, got {self.temperature}")


@dataclass
class MatchResult:
    distances: Tensor          # [N_Q, N_S] hybrid distances
    predicted: np.ndarray      # [N_Q] argmin class per query
    loss: Tensor               # scalar cross-entropy
    frame_distances: Tensor    # [N_Q, N_S]
    tuple_distances: Tensor    # [N_Q, N_S]


def _mean_hausdorff(a, b, distance):
    """Bidirectional mean Hausdorff over the trailing two axes.

    a: [..., m, c]; b: [..., m, c] (equal set sizes). The 2m nearest-neighbor
    terms are sorted ascending before summation (canonical reduction order).
    """
    m = a.shape[-2]
    if m == 0:
        raise DimensionError("mean Hausdorff over an empty sequence")
    if a.shape[-2:] != b.shape[-2:]:
        raise DimensionError(
            f"mean Hausdorff operands disagree: {a.shape} vs {b.shape}")
    pd = T.pairwise_distance(a, b, distance)
    fwd = T.min_(pd, axis=-1)
    rev = T.min_(pd, axis=-2)
    mins = T.sort_last(T.concat([fwd, rev], axis=-1))
    return T.mul(T.sum_(mins, axis=-1), 1.0 / m)


def frame_hausdorff(s, q, distance="euclidean"):
    """Frame-set distance between two [T, C] videos (scalar Tensor)."""
    return _mean_hausdorff(s, q, distance)


def build_tuples(x, encoding=None):
    """All ordered frame pairs i1 < i2, positional-encoded and concatenated.

    x: [..., T, C] -> [..., L, 2C] with L = T(T-1)/2, pairs in lexicographic
    order. The encoding is the standard sinusoidal table (0-based positions).
    """
    t, c = x.shape[-2], x.shape[-1]
    if t < 2:
        raise ConfigError(f"tuples need at least 2 frames, got T={t}")
    if encoding is None:
        encoding = sinusoidal_encoding(t, c, x.dtype)
    xpe = T.add(x, encoding)
    i1, i2 = np.triu_indices(t, k=1)
    axis = x.ndim - 2
    first = T.take(xpe, i1, axis=axis)
    second = T.take(xpe, i2, axis=axis)
    return T.concat([first, second], axis=-1)


def tuple_count(t):
    return t * (t - 1) // 2


def tuple_hausdorff(ts, tq, distance="euclidean"):
    """Tuple-set distance between two [L, 2C] tuple sets (scalar Tensor)."""
    return _mean_hausdorff(ts, tq, distance)


def hybrid_distance(s, q, cfg):
    """alpha * tuple distance + (1 - alpha) * frame distance for [T, C] videos."""
    cfg.validate()
    d_frame = frame_hausdorff(s, q, cfg.distance)
    if cfg.alpha == 0.0:
        return d_frame
    d_tuple = tuple_hausdorff(build_tuples(s), build_tuples(q), cfg.distance)
    if cfg.alpha == 1.0:
        return d_tuple
    return T.add(T.mul(d_tuple, cfg.alpha), T.mul(d_frame, 1.0 - cfg.alpha))


def fuse_distances(d_frame, d_tuple, alpha):
    """Convex fusion with exact endpoints at alpha 0 and 1."""
    if alpha == 0.0:
        return d_frame
    if alpha == 1.0:
        return d_tuple
    return T.add(T.mul(d_tuple, alpha), T.mul(d_frame, 1.0 - alpha))


def episode_distance_matrices(task, cfg):
    """Frame- and tuple-level distances per (query, class): two [N_Q, N_S]."""
    n_q, n_s, t, c = task.support.shape
    qry = T.reshape(task.query, (n_q, 1, t, c))
    d_frame = _mean_hausdorff(task.support, qry, cfg.distance)
    enc = sinusoidal_encoding(t, c, task.support.dtype)
    sup_tuples = build_tuples(task.support, enc)
    qry_tuples = build_tuples(qry, enc)
    d_tuple = _mean_hausdorff(sup_tuples, qry_tuples, cfg.distance)
    return d_frame, d_tuple


def classify_and_loss(task, query_labels, cfg):
    """Hybrid distances to every class, softmax loss, argmin predictions."""
    cfg.validate()
    query_labels = np.asarray(query_labels)
    d_frame, d_tuple = episode_distance_matrices(task, cfg)
    distances = fuse_distances(d_frame, d_tuple, cfg.alpha)
    logits = T.mul(distances, -1.0 / cfg.temperature)
    loss = T.softmax_cross_entropy(logits, query_labels)
    predicted = np.argmin(distances.data, axis=1)
    return MatchResult(distances, predicted, loss, d_frame, d_tuple)
