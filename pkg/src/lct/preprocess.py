"""Normalization, overlapping segmentation, labeling, and time-contiguous stratified splitting."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError
from .ingest import RawClassData
from .util import round_half_away

_SEG_MAGIC = b"LCTSEG01"


def zscore_normalize(x: np.ndarray) -> np.ndarray:
    """(x - mean) / std with both statistics over every entry jointly.

    Std is the population form (divide by count).  Constant input has no
    scale to normalize by, so it is rejected rather than fudged with an
    epsilon that would silently amplify numerical noise.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DataError("cannot normalize an empty array")
    mu = x.mean()
    sigma = x.std()
    if sigma < 1e-12:
        raise DataError(f"constant input: standard deviation {sigma:g} is below 1e-12")
    return (x - mu) / sigma


def segment(x: np.ndarray, seg_len: int, overlap_fraction: float) -> np.ndarray:
    """Cut [N, T] into overlapping windows -> [K, N, seg_len].

    step = round(seg_len * (1 - overlap)), ties away from zero; window k
    covers columns [k*step, k*step + seg_len), and a trailing remainder
    shorter than seg_len is dropped.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise DataError(f"segment() expects [channels, samples], got shape {x.shape}")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ConfigError(f"overlap fraction must lie in [0, 1), got {overlap_fraction}")
    if seg_len < 1:
        raise ConfigError(f"segment length must be >= 1 sample, got {seg_len}")
    n, t = x.shape
    if seg_len > t:
        raise DataError(f"segment length {seg_len} exceeds the {t} available samples")
    step = round_half_away(seg_len * (1.0 - overlap_fraction))
    if step < 1:
        raise ConfigError(f"overlap {overlap_fraction} leaves a zero-sample step "
                          f"at segment length {seg_len}")
    k = (t - seg_len) // step + 1
    starts = np.arange(k) * step
    index = starts[:, None] + np.arange(seg_len)[None, :]
    return np.ascontiguousarray(x[:, index].transpose(1, 0, 2))


@dataclass
class SegmentSet:
    segments: np.ndarray  # [K, n_channels, seg_len] float64
    labels: np.ndarray    # [K] uint8, 0 = interictal, 1 = ictal

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.segments.ndim != 3:
            raise DataError(f"segments must be [K, channels, samples], got {self.segments.shape}")
        if self.labels.shape != (self.segments.shape[0],):
            raise DataError(f"{self.labels.shape[0]} labels for {self.segments.shape[0]} segments")

    def __len__(self) -> int:
        return self.segments.shape[0]

    def subset(self, indices: np.ndarray) -> "SegmentSet":
        return SegmentSet(self.segments[indices], self.labels[indices])


@dataclass
class SplitSet:
    train: SegmentSet
    val: SegmentSet
    test: SegmentSet
    seed: int


def build_segment_set(data: RawClassData, seg_len: int, overlap_fraction: float) -> SegmentSet:
    """Per-class z-score, then windowing, then truncation to equal class counts.

    Normalization statistics come from each class stack as a whole (all
    channels jointly) before any windowing, so every window of a class shares
    one affine rescaling.  Output order is the interictal block then the
    ictal block, each in window order.
    """
    try:
        inter = segment(zscore_normalize(data.interictal), seg_len, overlap_fraction)
    except DataError as err:
        raise DataError(f"interictal class: {err}") from err
    try:
        ictal = segment(zscore_normalize(data.ictal), seg_len, overlap_fraction)
    except DataError as err:
        raise DataError(f"ictal class: {err}") from err
    k = min(inter.shape[0], ictal.shape[0])
    segments = np.concatenate([inter[:k], ictal[:k]], axis=0)
    labels = np.concatenate([np.zeros(k, dtype=np.uint8), np.ones(k, dtype=np.uint8)])
    return SegmentSet(segments, labels)


def split(segset: SegmentSet, seed: int) -> SplitSet:
    """Seeded, stratified split into time-contiguous runs: 25% test, then
    10% of the remainder as val.

    Sizes round half away from zero: |test| = round(0.25 * K) and
    |val| = round(0.10 * (K - |test|)).  Both carve-outs take half from each
    class (class 0 receives the odd extra), so every split keeps the class
    balance within one segment.

    Within each class the windows stay in recording order and the three
    parts are contiguous runs starting from a seeded point on the ring.
    Windows overlap and the signals carry long-range correlations, so a
    random per-window split leaks labels: a model can score above chance on
    held-out windows by memorizing their training-set neighbors.  Contiguous
    runs confine that adjacency to the two run boundaries per class.  The
    same seed always yields the same membership.
    """
    total = len(segset)
    n_test = round_half_away(0.25 * total)
    n_val = round_half_away(0.10 * (total - n_test))
    n_train = total - n_test - n_val
    if n_test < 1 or n_val < 1 or n_train < 1:
        raise DataError(f"{total} segments are too few to populate train/val/test "
                        f"(got {n_train}/{n_val}/{n_test})")

    rng = np.random.default_rng(seed)
    by_class = []
    for c in (0, 1):
        idx = np.flatnonzero(segset.labels == c)
        if len(idx):
            idx = np.roll(idx, -int(rng.integers(len(idx))))
        by_class.append(idx)

    def carve(count: int) -> list[np.ndarray]:
        need = [count - count // 2, count // 2]  # class 0 takes the odd extra
        taken = []
        for c in (0, 1):
            if need[c] > len(by_class[c]):
                raise DataError(f"class {c} has only {len(by_class[c])} segments left, "
                                f"cannot stratify a carve-out of {count}")
            taken.append(by_class[c][:need[c]])
            by_class[c] = by_class[c][need[c]:]
        return taken

    test_idx = np.concatenate(carve(n_test))
    val_idx = np.concatenate(carve(n_val))
    train_idx = np.concatenate(by_class)
    for idx in (test_idx, val_idx, train_idx):
        rng.shuffle(idx)
    return SplitSet(
        train=segset.subset(train_idx),
        val=segset.subset(val_idx),
        test=segset.subset(test_idx),
        seed=seed,
    )


def save_segment_set(segset: SegmentSet, path) -> None:
    """Binary layout: magic, u32 K, u32 n_channels, u32 seg_len, K label
    bytes, then float32 little-endian segment data row-major."""
    k, n, length = segset.segments.shape
    header = _SEG_MAGIC + struct.pack("<III", k, n, length)
    body = segset.labels.tobytes() + segset.segments.astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def load_segment_set(path) -> SegmentSet:
    raw = Path(path).read_bytes()
    head = len(_SEG_MAGIC) + 12
    if len(raw) < head or raw[:len(_SEG_MAGIC)] != _SEG_MAGIC:
        raise DataError(f"{path}: not a segment set file (bad magic)")
    k, n, length = struct.unpack("<III", raw[len(_SEG_MAGIC):head])
    expected = head + k + 4 * k * n * length
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {k} segments of "
                        f"{n}x{length}, got {len(raw)}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=k, offset=head)
    data = np.frombuffer(raw, dtype="<f4", count=k * n * length, offset=head + k)
    return SegmentSet(data.reshape(k, n, length).astype(np.float64), labels.copy())
