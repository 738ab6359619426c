"""Channel selection, seizure-interval extraction, and class-balanced assembly.

The output of this stage is a RawClassData: two [n_channels, T] float64
matrices (interictal and ictal) in a fixed channel order, ready for
normalization and windowing.  Scalp recordings are expected at 256 Hz with
the 18 bipolar channels below; interval sidecars list one seizure per line
as 'start_s end_s' in seconds from recording start.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .edf import Recording, read_edf
from .exceptions import DataError
from .util import round_half_away

CANONICAL_CHANNELS: tuple[str, ...] = (
    "C3-P3", "F7-T7", "P7-O1", "FP1-F7", "FP1-F3", "P3-O1",
    "FP2-F8", "T7-P7", "F3-C3", "T8-P8", "F4-C4", "F8-T8",
    "FP2-F4", "CZ-PZ", "P8-O2", "C4-P4", "FZ-CZ", "P4-O2",
)
CANONICAL_SAMPLING_RATE_HZ = 256.0

_RAW_MAGIC = b"LCTRAW01"


def _norm_label(label: str) -> str:
    # labels vary in case and spacing between recordings
    return "".join(label.split()).upper()


@dataclass
class SeizureInterval:
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.start_s < 0:
            raise DataError(f"interval start {self.start_s} is negative")
        if self.end_s <= self.start_s:
            raise DataError(f"interval [{self.start_s}, {self.end_s}] is not ascending")


@dataclass
class RawClassData:
    interictal: np.ndarray  # [n_channels, T0] float64
    ictal: np.ndarray       # [n_channels, T1] float64
    channel_order: tuple[str, ...]

    def __post_init__(self):
        self.interictal = np.asarray(self.interictal, dtype=np.float64)
        self.ictal = np.asarray(self.ictal, dtype=np.float64)
        n = len(self.channel_order)
        if self.interictal.ndim != 2 or self.ictal.ndim != 2:
            raise DataError("class matrices must be 2-D [channels, samples]")
        if self.interictal.shape[0] != n or self.ictal.shape[0] != n:
            raise DataError(f"class matrices have {self.interictal.shape[0]}/"
                            f"{self.ictal.shape[0]} rows for {n} channels")


def select_channels(recording: Recording, wanted=CANONICAL_CHANNELS) -> np.ndarray:
    """Rows of the recording reordered to `wanted`; fails naming absent channels.

    Matching is case-insensitive and whitespace-insensitive.  When a label
    appears twice the first occurrence wins.
    """
    index: dict[str, int] = {}
    for i, label in enumerate(recording.channel_labels):
        index.setdefault(_norm_label(label), i)
    missing = [w for w in wanted if _norm_label(w) not in index]
    if missing:
        raise DataError(f"recording is missing channel(s): {', '.join(missing)}")
    rows = [index[_norm_label(w)] for w in wanted]
    return recording.data[rows].astype(np.float64)


def parse_interval_file(text: str, origin: str = "intervals") -> list[SeizureInterval]:
    """One 'start_s end_s' pair per line; '#' comments and blank lines skipped.

    Returned intervals are sorted by start time.
    """
    out: list[SeizureInterval] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise DataError(f"{origin} line {lineno}: expected 'start_s end_s', got {line!r}")
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError:
            raise DataError(f"{origin} line {lineno}: non-numeric interval bounds {line!r}")
        out.append(SeizureInterval(start, end))
    return sorted(out, key=lambda iv: iv.start_s)


def extract_intervals(matrix: np.ndarray, intervals, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Split columns into (ictal, complement) by second-based intervals.

    Intervals must be sorted and non-overlapping and must fit inside the
    recording.  Boundaries round half away from zero to sample indices; the
    two outputs always repartition every input column.
    """
    n, t = matrix.shape
    duration = t / fs
    prev_end = 0.0
    ictal_parts: list[np.ndarray] = []
    complement_parts: list[np.ndarray] = []
    cursor = 0
    for iv in intervals:
        if iv.start_s < prev_end:
            raise DataError(f"intervals overlap or are unsorted near {iv.start_s} s")
        if iv.end_s > duration + 1e-9:
            raise DataError(f"interval [{iv.start_s}, {iv.end_s}] s exceeds the "
                            f"{duration:g} s recording")
        start = round_half_away(iv.start_s * fs)
        end = min(round_half_away(iv.end_s * fs), t)
        complement_parts.append(matrix[:, cursor:start])
        ictal_parts.append(matrix[:, start:end])
        cursor = end
        prev_end = iv.end_s
    complement_parts.append(matrix[:, cursor:])
    empty = np.empty((n, 0), dtype=matrix.dtype)
    ictal = np.concatenate(ictal_parts, axis=1) if ictal_parts else empty
    complement = np.concatenate(complement_parts, axis=1) if complement_parts else matrix.copy()
    return ictal, complement


def assemble_balanced(parts, seed: int,
                      channel_order: tuple[str, ...] = CANONICAL_CHANNELS) -> RawClassData:
    """Combine per-recording (ictal, complement) pairs into balanced class stacks.

    All ictal material is kept.  Interictal material is drawn as one seeded
    contiguous block per recording, sized proportionally (largest remainder)
    so the totals match exactly.
    """
    if not parts:
        raise DataError("no recordings to assemble")
    n = len(channel_order)
    for ictal, comp in parts:
        if ictal.shape[0] != n or comp.shape[0] != n:
            raise DataError(f"recording has {ictal.shape[0]} channels, expected {n}")
    total_ictal = sum(ic.shape[1] for ic, _ in parts)
    if total_ictal == 0:
        raise DataError("no ictal samples in any recording")
    avail = [comp.shape[1] for _, comp in parts]
    total_avail = sum(avail)
    if total_avail < total_ictal:
        raise DataError(f"insufficient interictal material: need {total_ictal} samples, "
                        f"recordings hold {total_avail}")

    shares = _largest_remainder(avail, total_ictal, total_avail)
    rng = np.random.default_rng(seed)
    blocks: list[np.ndarray] = []
    for (_, comp), share in zip(parts, shares):
        if share == 0:
            continue
        start = int(rng.integers(0, comp.shape[1] - share + 1))
        blocks.append(comp[:, start:start + share])
    interictal = np.concatenate(blocks, axis=1)
    ictal = np.concatenate([ic for ic, _ in parts if ic.shape[1] > 0], axis=1)
    return RawClassData(interictal, ictal, channel_order)


def _largest_remainder(avail: list[int], want: int, total: int) -> list[int]:
    raw = [a * want / total for a in avail]
    base = [int(np.floor(r)) for r in raw]
    base = [min(b, a) for b, a in zip(base, avail)]
    leftover = want - sum(base)
    order = sorted(range(len(avail)), key=lambda i: (base[i] - raw[i], i))
    for i in order:
        if leftover == 0:
            break
        if base[i] < avail[i]:
            base[i] += 1
            leftover -= 1
    if leftover != 0:
        raise DataError("could not allocate interictal shares; recordings too short")
    return base


def ictal_seconds(data: RawClassData, fs: float = CANONICAL_SAMPLING_RATE_HZ) -> float:
    return data.ictal.shape[1] / fs


def ingest_recordings(paths, seed: int) -> RawClassData:
    """EDF files plus '<name>.intervals' sidecars to balanced class stacks.

    A recording without a sidecar contributes no seizures (all interictal).
    Recordings must be sampled at the canonical 256 Hz and contain the 18
    canonical channels.
    """
    parts = []
    for rec_path in paths:
        recording = read_edf(rec_path)
        if abs(recording.sampling_rate_hz - CANONICAL_SAMPLING_RATE_HZ) > 1e-9:
            raise DataError(f"{rec_path}: sampling rate {recording.sampling_rate_hz:g} Hz, "
                            f"expected {CANONICAL_SAMPLING_RATE_HZ:g}")
        matrix = select_channels(recording)
        sidecar = Path(rec_path).with_suffix(".intervals")
        intervals = (parse_interval_file(sidecar.read_text(), str(sidecar))
                     if sidecar.exists() else [])
        parts.append(extract_intervals(matrix, intervals, recording.sampling_rate_hz))
    return assemble_balanced(parts, seed)


def save_raw_class_data(data: RawClassData, path) -> None:
    """Binary layout: magic, u16 channel count, channel names (u16 length +
    utf-8 each), then per class (0 then 1): u8 class id, u64 sample count,
    float64 little-endian samples row-major."""
    chunks = [_RAW_MAGIC, struct.pack("<H", len(data.channel_order))]
    for name in data.channel_order:
        enc = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(enc)))
        chunks.append(enc)
    for class_id, matrix in ((0, data.interictal), (1, data.ictal)):
        chunks.append(struct.pack("<BQ", class_id, matrix.shape[1]))
        chunks.append(np.ascontiguousarray(matrix, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_raw_class_data(path) -> RawClassData:
    raw = Path(path).read_bytes()
    if len(raw) < len(_RAW_MAGIC) + 2 or raw[:len(_RAW_MAGIC)] != _RAW_MAGIC:
        raise DataError(f"{path}: not a raw class data file (bad magic)")
    pos = len(_RAW_MAGIC)

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(raw):
            raise DataError(f"{path}: truncated raw class data")
        piece = raw[pos:pos + count]
        pos += count
        return piece

    (n,) = struct.unpack("<H", take(2))
    names = []
    for _ in range(n):
        (length,) = struct.unpack("<H", take(2))
        names.append(take(length).decode("utf-8"))
    matrices: dict[int, np.ndarray] = {}
    for _ in range(2):
        class_id, t = struct.unpack("<BQ", take(9))
        if class_id in matrices:
            raise DataError(f"{path}: duplicate class id {class_id}")
        block = take(8 * n * t)
        matrices[class_id] = np.frombuffer(block, dtype="<f8").reshape(n, t).astype(np.float64)
    if set(matrices) != {0, 1}:
        raise DataError(f"{path}: expected class ids 0 and 1, got {sorted(matrices)}")
    if pos != len(raw):
        raise DataError(f"{path}: {len(raw) - pos} trailing bytes")
    return RawClassData(matrices[0], matrices[1], tuple(names))
