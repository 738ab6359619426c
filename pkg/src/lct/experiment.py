"""Config-driven experiment runs: data source -> segments -> training -> report.

An experiment is a grid over model variants and window lengths on one data
source.  Each cell trains from scratch, evaluates on the held-out test split,
appends one line to report.txt, and saves its checkpoint, model config, and
epoch history.  metrics.json collects one record per cell with exactly the
keys {variant, layers, heads, segment_len_s, accuracy, precision, recall,
f1, epochs_run, seconds}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError, LctError
from .checkpoint import save_checkpoint
from .ingest import (CANONICAL_SAMPLING_RATE_HZ, ingest_recordings,
                     load_raw_class_data)
from .models import (ModelConfig, build_model, parse_kv_text,
                     parse_variant_spec, save_model_config)
from .optim import OptimizerConfig
from .preprocess import (SplitSet, build_segment_set, load_segment_set, split)
from .synth import SynthConfig, generate_synthetic
from .train import Metrics, TrainConfig, evaluate, train
from .util import round_half_away


@dataclass
class ExperimentConfig:
    variants: list[tuple[str, int, int]] = field(default_factory=lambda: [("lct", 1, 2)])
    segment_lens_s: list[float] = field(default_factory=lambda: [0.5])
    source: str = "synth"
    overlap: float = 0.25
    seed: int = 0
    batch_size: int = 300
    max_epochs: int = 300
    patience: int = 30
    base_lr: float = 1e-3
    dropout_rate: float = 0.1
    dtype: str = "float64"
    use_positional_embedding: bool = True
    synth_channels: int = 18
    synth_duration_s: float = 375.0
    synth_gain: float = 3.0
    synth_spike_freq_hz: float = 3.0
    synth_alpha: float = 1.0

    def __post_init__(self):
        if not self.variants:
            raise ConfigError("experiment needs at least one variant")
        if not self.segment_lens_s:
            raise ConfigError("experiment needs at least one segment length")
        if any(w <= 0 for w in self.segment_lens_s):
            raise ConfigError(f"segment lengths must be positive, got {self.segment_lens_s}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


_FLOAT_KEYS = {"overlap", "base_lr", "dropout_rate", "synth_duration_s",
               "synth_gain", "synth_spike_freq_hz", "synth_alpha"}
_INT_KEYS = {"seed", "batch_size", "max_epochs", "patience", "synth_channels"}


def experiment_config_from_kv(values: dict[str, str], origin: str = "config") -> ExperimentConfig:
    kwargs: dict = {}
    variant_parts: dict[str, str] = {}
    for key, raw in values.items():
        if key in ("variant", "layers", "heads"):
            variant_parts[key] = raw
        elif key == "variants":
            kwargs["variants"] = [parse_variant_spec(v) for v in raw.split(",") if v.strip()]
        elif key in ("segment_len_s", "segment_lens_s"):
            try:
                kwargs["segment_lens_s"] = [float(v) for v in raw.split(",") if v.strip()]
            except ValueError:
                raise ConfigError(f"{origin}: segment lengths must be numbers, got {raw!r}")
        elif key == "source":
            kwargs["source"] = raw
        elif key == "dtype":
            kwargs["dtype"] = raw.lower()
        elif key == "use_positional_embedding":
            if raw.lower() not in ("true", "false"):
                raise ConfigError(f"{origin}: use_positional_embedding must be true or false")
            kwargs["use_positional_embedding"] = raw.lower() == "true"
        elif key in _FLOAT_KEYS:
            try:
                kwargs[key] = float(raw)
            except ValueError:
                raise ConfigError(f"{origin}: key '{key}' must be a number, got {raw!r}")
        elif key in _INT_KEYS:
            try:
                kwargs[key] = int(raw)
            except ValueError:
                raise ConfigError(f"{origin}: key '{key}' must be an integer, got {raw!r}")
        else:
            raise ConfigError(f"{origin}: unknown experiment config key '{key}'")
    if variant_parts:
        if "variants" in kwargs:
            raise ConfigError(f"{origin}: give either 'variant' or 'variants', not both")
        name = variant_parts.get("variant", "lct")
        base = parse_variant_spec(name)
        layers = int(variant_parts.get("layers", base[1]))
        heads = int(variant_parts.get("heads", base[2]))
        kwargs["variants"] = [(base[0], layers, heads)]
    return ExperimentConfig(**kwargs)


def load_experiment_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    return experiment_config_from_kv(parse_kv_text(text, str(path)), str(path))


def _resolve_splits(config: ExperimentConfig, window_s: float) -> tuple[SplitSet, int, int]:
    """Produce train/val/test splits plus (n_channels, segment_samples)."""
    source = config.source
    if source == "synth":
        synth = SynthConfig(
            n_channels=config.synth_channels,
            duration_s=config.synth_duration_s,
            spike_freq_hz=config.synth_spike_freq_hz,
            amplitude_gain=config.synth_gain,
            noise_alpha=config.synth_alpha,
            seed=config.seed,
        )
        raw = generate_synthetic(synth)
    elif source.endswith(".edf") or ".edf," in source:
        raw = ingest_recordings([p.strip() for p in source.split(",") if p.strip()], config.seed)
    else:
        path = Path(source)
        if path.is_dir():
            return _load_presplit(path)
        if path.suffix == ".segset":
            segset = load_segment_set(path)
            splits = split(segset, config.seed)
            return splits, segset.segments.shape[1], segset.segments.shape[2]
        if path.suffix == ".raw":
            raw = load_raw_class_data(path)
        else:
            raise ConfigError(f"data source must be 'synth', .edf path(s), a .raw file, "
                              f"a .segset file, or a split directory, got {source!r}")
    seg_len = round_half_away(CANONICAL_SAMPLING_RATE_HZ * window_s)
    segset = build_segment_set(raw, seg_len, config.overlap)
    splits = split(segset, config.seed)
    return splits, segset.segments.shape[1], seg_len


def _load_presplit(path: Path) -> tuple[SplitSet, int, int]:
    names = {part: path / f"{part}.segset" for part in ("train", "val", "test")}
    missing = [str(p) for p in names.values() if not p.exists()]
    if missing:
        raise DataError(f"split directory {path} lacks: {', '.join(missing)}")
    parts = {k: load_segment_set(p) for k, p in names.items()}
    shapes = {k: v.segments.shape[1:] for k, v in parts.items()}
    if len(set(shapes.values())) != 1:
        raise DataError(f"split files disagree on segment shape: {shapes}")
    n, seg_len = parts["train"].segments.shape[1:]
    return SplitSet(parts["train"], parts["val"], parts["test"], seed=0), n, seg_len


def _run_tag(variant: str, layers: int, heads: int, window_s: float) -> str:
    return f"{variant}-{layers}-{heads}_w{window_s:g}s"


def format_report_line(row: dict) -> str:
    return (f"{row['variant']}-{row['layers']}/{row['heads']}  "
            f"w={row['segment_len_s']:g}s  "
            f"acc={row['accuracy']:.4f}  p={row['precision']:.4f}  "
            f"r={row['recall']:.4f}  f1={row['f1']:.4f}  "
            f"epochs={row['epochs_run']}  t={row['seconds']:.1f}s")


def run_experiment(config: ExperimentConfig, out_dir, log=None) -> list[dict]:
    """Run the whole grid; returns the metrics records it also writes to disk."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    report_lines: list[str] = []

    for window_s in config.segment_lens_s:
        try:
            splits, n_channels, seg_len = _resolve_splits(config, window_s)
        except LctError as err:
            raise type(err)(f"data stage (window {window_s:g}s): {err}") from err
        if log is not None:
            log(f"window {window_s:g}s: {len(splits.train)}/{len(splits.val)}/"
                f"{len(splits.test)} train/val/test segments of {n_channels}x{seg_len}")
        for variant, layers, heads in config.variants:
            model_config = ModelConfig(
                variant=variant,
                encoder_layers=layers,
                heads=heads,
                n_channels=n_channels,
                segment_samples=seg_len,
                dropout_rate=config.dropout_rate,
                use_positional_embedding=config.use_positional_embedding,
                seed=config.seed,
            )
            model = build_model(model_config, dtype=config.np_dtype)
            train_config = TrainConfig(
                batch_size=config.batch_size,
                max_epochs=config.max_epochs,
                early_stop_patience=config.patience,
                seed=config.seed,
                optimizer=OptimizerConfig(base_lr=config.base_lr),
            )
            tag = _run_tag(variant, layers, heads, window_s)
            if log is not None:
                log(f"training {tag}: {model.param_count} parameters")
            try:
                model, history = train(model, splits, train_config, log=log)
                metrics = evaluate(model, splits.test, config.batch_size)
            except LctError as err:
                raise type(err)(f"train stage ({tag}): {err}") from err
            row = {
                "variant": variant,
                "layers": layers,
                "heads": heads,
                "segment_len_s": window_s,
                "accuracy": metrics.accuracy,
                "precision": metrics.precision,
                "recall": metrics.recall,
                "f1": metrics.f1,
                "epochs_run": history.epochs_run,
                "seconds": round(history.seconds, 3),
            }
            rows.append(row)
            report_lines.append(format_report_line(row))
            if log is not None:
                log(report_lines[-1])
            save_checkpoint(model.parameters(), out / f"{tag}.ckpt")
            save_model_config(model_config, out / f"{tag}.model.cfg")
            history.to_csv(out / f"{tag}.history.csv")

    (out / "report.txt").write_text("\n".join(report_lines) + "\n")
    (out / "metrics.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows


def evaluate_checkpoint(model_config: ModelConfig, arrays: dict, segset, batch_size: int = 300,
                        dtype=np.float64) -> Metrics:
    """Rebuild a model from config, load weights, and score a segment set."""
    from .checkpoint import apply_checkpoint
    model = build_model(model_config, dtype=dtype)
    apply_checkpoint(model.parameters(), arrays)
    return evaluate(model, segset, batch_size)
