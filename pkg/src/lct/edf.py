"""Reading (and fixture writing) of EDF, the European Data Format.

Only the plain EDF layout is handled: a 256-byte fixed header, 256 bytes of
header per signal, then data records of 2-byte little-endian two's-complement
samples, channel blocks concatenated within each record.  Digital values map
to physical units linearly per signal:

    physical = phys_min + (digital - dig_min) * (phys_max - phys_min) / (dig_max - dig_min)

Annotation signals (label 'EDF Annotations') are dropped when building a
Recording; all retained signals must share one sampling rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError

_FIXED_HEADER = 256
_PER_SIGNAL = 256
_ANNOTATION_LABEL = "EDF ANNOTATIONS"


@dataclass
class EdfHeader:
    version: str
    patient_id: str
    recording_id: str
    start_date: str
    start_time: str
    header_bytes: int
    n_records: int
    record_duration_s: float
    n_signals: int
    labels: list[str]
    transducers: list[str]
    phys_dims: list[str]
    phys_mins: list[float]
    phys_maxs: list[float]
    dig_mins: list[int]
    dig_maxs: list[int]
    prefilters: list[str]
    samples_per_record: list[int]


@dataclass
class Recording:
    channel_labels: list[str]
    sampling_rate_hz: float
    data: np.ndarray  # [n_channels, n_samples] in physical units, float64
    duration_s: float


def _ascii(raw: bytes, offset: int, length: int, what: str) -> str:
    piece = raw[offset:offset + length]
    try:
        return piece.decode("ascii")
    except UnicodeDecodeError:
        raise DataError(f"non-ASCII bytes in EDF header field '{what}'")


def _number(raw: bytes, offset: int, length: int, what: str, conv):
    text = _ascii(raw, offset, length, what).strip()
    try:
        return conv(text)
    except ValueError:
        raise DataError(f"non-numeric EDF header field '{what}': {text!r}")


def parse_edf_header(raw: bytes) -> EdfHeader:
    if len(raw) < _FIXED_HEADER:
        raise DataError(f"truncated file: EDF fixed header needs {_FIXED_HEADER} bytes, "
                        f"got {len(raw)}")
    n_signals = _number(raw, 252, 4, "number of signals", int)
    if n_signals < 1:
        raise DataError(f"EDF declares {n_signals} signals")
    if len(raw) < _FIXED_HEADER + n_signals * _PER_SIGNAL:
        raise DataError(f"truncated file: header for {n_signals} signals needs "
                        f"{_FIXED_HEADER + n_signals * _PER_SIGNAL} bytes, got {len(raw)}")

    def signal_strings(block_offset: int, width: int, what: str) -> list[str]:
        base = _FIXED_HEADER + block_offset * n_signals
        return [_ascii(raw, base + i * width, width, what).rstrip() for i in range(n_signals)]

    def signal_numbers(block_offset: int, what: str, conv) -> list:
        base = _FIXED_HEADER + block_offset * n_signals
        return [_number(raw, base + i * 8, 8, f"{what} of signal {i}", conv)
                for i in range(n_signals)]

    header = EdfHeader(
        version=_ascii(raw, 0, 8, "version").rstrip(),
        patient_id=_ascii(raw, 8, 80, "patient id").rstrip(),
        recording_id=_ascii(raw, 88, 80, "recording id").rstrip(),
        start_date=_ascii(raw, 168, 8, "start date").rstrip(),
        start_time=_ascii(raw, 176, 8, "start time").rstrip(),
        header_bytes=_number(raw, 184, 8, "header byte count", int),
        n_records=_number(raw, 236, 8, "record count", int),
        record_duration_s=_number(raw, 244, 8, "record duration", float),
        n_signals=n_signals,
        labels=signal_strings(0, 16, "label"),
        transducers=signal_strings(16, 80, "transducer"),
        phys_dims=signal_strings(96, 8, "physical dimension"),
        phys_mins=signal_numbers(104, "physical minimum", float),
        phys_maxs=signal_numbers(112, "physical maximum", float),
        dig_mins=signal_numbers(120, "digital minimum", int),
        dig_maxs=signal_numbers(128, "digital maximum", int),
        prefilters=signal_strings(136, 80, "prefilter"),
        samples_per_record=signal_numbers(216, "samples per record", int),
    )
    expected_header = _FIXED_HEADER + n_signals * _PER_SIGNAL
    if header.header_bytes != expected_header:
        raise DataError(f"EDF header byte count {header.header_bytes} does not match "
                        f"{expected_header} for {n_signals} signals")
    if header.record_duration_s <= 0:
        raise DataError(f"EDF record duration must be positive, got {header.record_duration_s}")
    if any(s < 1 for s in header.samples_per_record):
        raise DataError("EDF signal declares fewer than one sample per record")
    return header


def parse_edf(raw: bytes) -> Recording:
    """Parse EDF bytes into a physically scaled multi-channel recording."""
    header = parse_edf_header(raw)
    per_record = sum(header.samples_per_record)
    record_bytes = 2 * per_record
    n_records = header.n_records
    body_bytes = len(raw) - header.header_bytes
    if n_records == -1:
        # unknown-length recordings store -1; infer from the file size
        n_records = body_bytes // record_bytes
    if n_records < 1:
        raise DataError(f"EDF contains no data records (declared {header.n_records})")
    if body_bytes < n_records * record_bytes:
        raise DataError(f"truncated file: {n_records} records need {n_records * record_bytes} "
                        f"bytes of samples, got {body_bytes}")

    keep = [i for i, label in enumerate(header.labels)
            if " ".join(label.split()).upper() != _ANNOTATION_LABEL]
    if not keep:
        raise DataError("EDF contains only annotation signals")
    rates = {header.samples_per_record[i] for i in keep}
    if len(rates) != 1:
        raise DataError(f"retained EDF signals disagree on samples per record: {sorted(rates)}")
    for i in keep:
        if header.dig_mins[i] == header.dig_maxs[i]:
            raise DataError(f"signal '{header.labels[i]}' has degenerate digital range "
                            f"[{header.dig_mins[i]}, {header.dig_maxs[i]}]")

    flat = np.frombuffer(raw, dtype="<i2", count=n_records * per_record,
                         offset=header.header_bytes)
    records = flat.reshape(n_records, per_record)
    offsets = np.cumsum([0] + header.samples_per_record)
    channels = []
    for i in keep:
        digital = records[:, offsets[i]:offsets[i + 1]].reshape(-1).astype(np.float64)
        span = header.phys_maxs[i] - header.phys_mins[i]
        dig_span = header.dig_maxs[i] - header.dig_mins[i]
        channels.append(header.phys_mins[i] + (digital - header.dig_mins[i]) * span / dig_span)

    samples_per_record = header.samples_per_record[keep[0]]
    return Recording(
        channel_labels=[header.labels[i] for i in keep],
        sampling_rate_hz=samples_per_record / header.record_duration_s,
        data=np.stack(channels),
        duration_s=n_records * header.record_duration_s,
    )


def read_edf(path) -> Recording:
    return parse_edf(Path(path).read_bytes())


def _field(value, width: int, what: str) -> bytes:
    text = str(value)
    encoded = text.encode("ascii")
    if len(encoded) > width:
        raise ValueError(f"EDF header field '{what}' ({text!r}) exceeds {width} bytes")
    return encoded.ljust(width)


def write_edf(labels, digital, samples_per_record: int, record_duration_s: float = 1.0,
              phys_mins=None, phys_maxs=None, dig_min: int = -32768, dig_max: int = 32767,
              patient_id: str = "X", recording_id: str = "X",
              start_date: str = "01.01.01", start_time: str = "00.00.00") -> bytes:
    """Serialize integer channel data to EDF bytes (test fixtures, synth export).

    digital: [n_channels, T] integers within [dig_min, dig_max]; T must divide
    evenly into records of samples_per_record.  Every channel shares one
    digital range; physical ranges default to +/-1000.
    """
    digital = np.asarray(digital)
    n, t = digital.shape
    if len(labels) != n:
        raise ValueError(f"{len(labels)} labels for {n} channels")
    if t % samples_per_record != 0:
        raise ValueError(f"{t} samples do not divide into records of {samples_per_record}")
    if digital.min() < dig_min or digital.max() > dig_max:
        raise ValueError("digital samples fall outside the declared digital range")
    n_records = t // samples_per_record
    phys_mins = [-1000.0] * n if phys_mins is None else list(phys_mins)
    phys_maxs = [1000.0] * n if phys_maxs is None else list(phys_maxs)

    def fmt(x: float) -> str:
        text = f"{x:.8g}"
        return text if len(text) <= 8 else f"{x:.3g}"

    header = b"".join([
        _field("0", 8, "version"),
        _field(patient_id, 80, "patient id"),
        _field(recording_id, 80, "recording id"),
        _field(start_date, 8, "start date"),
        _field(start_time, 8, "start time"),
        _field(_FIXED_HEADER + n * _PER_SIGNAL, 8, "header bytes"),
        _field("", 44, "reserved"),
        _field(n_records, 8, "record count"),
        _field(fmt(record_duration_s), 8, "record duration"),
        _field(n, 4, "signal count"),
        b"".join(_field(lab, 16, "label") for lab in labels),
        b"".join(_field("", 80, "transducer") for _ in range(n)),
        b"".join(_field("uV", 8, "physical dimension") for _ in range(n)),
        b"".join(_field(fmt(v), 8, "physical minimum") for v in phys_mins),
        b"".join(_field(fmt(v), 8, "physical maximum") for v in phys_maxs),
        b"".join(_field(dig_min, 8, "digital minimum") for _ in range(n)),
        b"".join(_field(dig_max, 8, "digital maximum") for _ in range(n)),
        b"".join(_field("", 80, "prefilter") for _ in range(n)),
        b"".join(_field(samples_per_record, 8, "samples per record") for _ in range(n)),
        b"".join(_field("", 32, "reserved") for _ in range(n)),
    ])
    body = (digital.astype("<i2")
            .reshape(n, n_records, samples_per_record)
            .transpose(1, 0, 2)
            .tobytes())
    return header + body
