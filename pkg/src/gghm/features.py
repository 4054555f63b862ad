"""Synthetic feature-map datasets and the binary feature file format.

A dataset is a flat list of records, each a [T_raw, C, H, W] float32 feature
sequence with a class id. The generator builds class-structured data around
per-frame-slot prototypes; videos of a class differ only by noise. A chosen
fraction of classes comes in reversed pairs: both classes in a pair share the
same set of frame prototypes, one in forward and one in reversed temporal
order, so they can only be told apart by temporal order.

The noise is modeled after what made real-video features hard in the first
place: most of the per-video variance is a static per-channel offset (think
background/lighting, constant across frames and space); the remainder is
per-frame iid jitter. Temporal modeling can learn to cancel the static part;
a fresh model cannot, which keeps untrained matching at chance level.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, SamplingError

MAGIC = b"GGHMFEAT"
VERSION = 1

# share of per-element noise variance carried by the static per-video channel
# offset; the rest is per-frame iid jitter
STATIC_NOISE_FRACTION = 0.85


@dataclass
class SyntheticSpec:
    n_classes: int
    videos_per_class: int
    t_raw: int
    c: int
    h: int
    w: int
    noise_sigma: float
    order_pair_fraction: float
    seed: int

    def validate(self):
        if self.n_classes <= 0 or self.videos_per_class <= 0:
            raise ConfigError("n_classes and videos_per_class must be positive")
        if min(self.t_raw, self.c, self.h, self.w) <= 0:
            raise ConfigError("all feature dimensions must be positive")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.order_pair_fraction <= 1.0:
            raise ConfigError(
                f"order_pair_fraction must be in [0,1], got {self.order_pair_fraction}")
        n_order = self.order_pair_fraction * self.n_classes
        if abs(n_order - round(n_order)) > 1e-9 or round(n_order) % 2 != 0:
            raise ConfigError(
                "order_pair_fraction * n_classes must be an even integer, "
                f"got {n_order}")


@dataclass
class FeatureRecord:
    class_id: int
    video_id: int
    frames: np.ndarray  # [T_raw, C, H, W] float32


@dataclass
class FeatureDataset:
    t_raw: int
    c: int
    h: int
    w: int
    records: list[FeatureRecord] = field(default_factory=list)

    @property
    def n_classes(self):
        return 1 + max((r.class_id for r in self.records), default=-1)

    def by_class(self):
        groups: dict[int, list[FeatureRecord]] = {}
        for r in self.records:
            groups.setdefault(r.class_id, []).append(r)
        return groups


def _slot_prototype(rng, c, h, w):
    # standard normal, then L2-normalized per frame-slot; the norm target
    # sqrt(H*W) gives unit RMS per spatial position so that separability is
    # governed by noise_sigma alone, independent of spatial size
    p = rng.standard_normal((c, h, w))
    return p * (np.sqrt(h * w) / np.linalg.norm(p))


def generate_synthetic(spec: SyntheticSpec) -> FeatureDataset:
    """Build a class-structured synthetic dataset; same seed => same bytes."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_order = round(spec.order_pair_fraction * spec.n_classes)

    protos = np.empty((spec.n_classes, spec.t_raw, spec.c, spec.h, spec.w))
    for cls in range(spec.n_classes):
        if cls < n_order and cls % 2 == 1:
            protos[cls] = protos[cls - 1][::-1]  # reversed partner
            continue
        for t in range(spec.t_raw):
            protos[cls, t] = _slot_prototype(rng, spec.c, spec.h, spec.w)

    sigma_static = spec.noise_sigma * np.sqrt(STATIC_NOISE_FRACTION)
    sigma_jitter = spec.noise_sigma * np.sqrt(1.0 - STATIC_NOISE_FRACTION)

    ds = FeatureDataset(spec.t_raw, spec.c, spec.h, spec.w)
    video_id = 0
    for cls in range(spec.n_classes):
        for _ in range(spec.videos_per_class):
            static = sigma_static * rng.standard_normal(spec.c)
            jitter = sigma_jitter * rng.standard_normal(
                (spec.t_raw, spec.c, spec.h, spec.w))
            frames = protos[cls] + static[None, :, None, None] + jitter
            ds.records.append(FeatureRecord(
                cls, video_id, frames.astype(np.float32)))
            video_id += 1
    return ds


def write_features(dataset: FeatureDataset, path):
    """Write the dataset; round-trips are bit-identical."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(dataset.records)))
        fh.write(struct.pack("<IIII", dataset.t_raw, dataset.c,
                             dataset.h, dataset.w))
        for rec in dataset.records:
            fh.write(struct.pack("<II", rec.class_id, rec.video_id))
            fh.write(np.ascontiguousarray(rec.frames, dtype="<f4").tobytes())


def read_features(path) -> FeatureDataset:
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, n, what):
        if offset + n > len(blob):
            raise FormatError(
                f"feature file truncated at byte {len(blob)} reading {what} "
                f"(needed {offset + n})")
        return blob[offset:offset + n]

    if blob[:8] != MAGIC:
        raise FormatError(f"bad feature file magic at byte 0: {blob[:8]!r}")
    version, n_records = struct.unpack("<II", need(8, 8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported feature file version {version} at byte 8")
    t_raw, c, h, w = struct.unpack("<IIII", need(16, 16, "dims"))
    ds = FeatureDataset(t_raw, c, h, w)
    frame_bytes = 4 * t_raw * c * h * w
    off = 32
    for _ in range(n_records):
        class_id, video_id = struct.unpack("<II", need(off, 8, "record header"))
        off += 8
        payload = need(off, frame_bytes, f"payload of video {video_id}")
        off += frame_bytes
        frames = np.frombuffer(payload, dtype="<f4").reshape(
            t_raw, c, h, w).astype(np.float32)
        ds.records.append(FeatureRecord(class_id, video_id, frames))
    return ds


def tsn_sample(record: FeatureRecord, t: int, mode: str, rng=None) -> np.ndarray:
    """Segment-based frame selection: one index from each of t equal segments.

    train mode draws uniformly inside each segment; eval takes the segment
    center floor((start+end)//2). Indices are strictly increasing.
    """
    t_raw = record.frames.shape[0]
    if t_raw < t:
        raise SamplingError(
            f"video {record.video_id} has {t_raw} frames, needs >= {t}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown sampling mode {mode!r}")
    idx = np.empty(t, dtype=np.int64)
    for s in range(t):
        start = s * t_raw // t
        end = (s + 1) * t_raw // t
        if mode == "eval":
            idx[s] = (start + end) // 2
        else:
            idx[s] = rng.integers(start, end)
    return record.frames[idx]
