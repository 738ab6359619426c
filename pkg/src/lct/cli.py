"""Command line interface.

Subcommands mirror the pipeline stages:

    synth   generate synthetic two-class data              -> .raw
    ingest  EDF recordings + interval sidecars             -> .raw
    prep    normalize, window, and split                   -> dir of .segset
    train   train one model and report test metrics        -> run dir
    eval    score a saved checkpoint on a segment set
    sweep   grid of variants x window lengths from a config -> run dir

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .exceptions import ConfigError, DataError, LctError
from .experiment import (ExperimentConfig, evaluate_checkpoint,
                         load_experiment_config, run_experiment)
from .ingest import (CANONICAL_SAMPLING_RATE_HZ, ingest_recordings,
                     load_raw_class_data, save_raw_class_data)
from .models import load_model_config, parse_variant_spec
from .preprocess import build_segment_set, load_segment_set, save_segment_set, split
from .synth import SynthConfig, generate_synthetic
from .util import round_half_away


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage through the package error taxonomy."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="lct", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic two-class data")
    p.add_argument("--out", required=True, help="output .raw path")
    p.add_argument("--duration-s", type=float, default=375.0,
                   help="seconds of data per class (default 375)")
    p.add_argument("--gain", type=float, default=3.0,
                   help="ictal amplitude gain, 1.0 = null control (default 3)")
    p.add_argument("--channels", type=int, default=18)
    p.add_argument("--spike-freq-hz", type=float, default=3.0)
    p.add_argument("--noise-alpha", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="EDF recordings to balanced class stacks")
    p.add_argument("recordings", nargs="+", help="EDF file paths; each may have a "
                   "sidecar <name>.intervals listing 'start_s end_s' seizures")
    p.add_argument("--out", required=True, help="output .raw path")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for interictal block placement (default 0)")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("prep", help="normalize, window, and split a .raw file")
    p.add_argument("data", help="input .raw path")
    p.add_argument("--out", required=True, help="output directory for train/val/test.segset")
    p.add_argument("--segment-len-s", type=float, required=True)
    p.add_argument("--overlap", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_prep)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("data", help="'synth', a .raw file, a .segset file, or a prep directory")
    p.add_argument("--out", required=True, help="output run directory")
    p.add_argument("--variant", default=None, help="vit, lvt, or lct (default lct)")
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--segment-len-s", type=float, default=None)
    p.add_argument("--overlap", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="experiment config file; flags override it")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a segment set")
    p.add_argument("checkpoint", help="path to a .ckpt written by train/sweep")
    p.add_argument("--data", required=True, help=".segset to score")
    p.add_argument("--model-config", default=None,
                   help="model config path (default: checkpoint path with .model.cfg)")
    p.add_argument("--out", default=None, help="optional metrics JSON path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="run a variant x window grid from a config file")
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--out", required=True, help="output run directory")
    p.set_defaults(func=_cmd_sweep)
    return parser


def _cmd_synth(args) -> int:
    config = SynthConfig(
        n_channels=args.channels,
        duration_s=args.duration_s,
        spike_freq_hz=args.spike_freq_hz,
        amplitude_gain=args.gain,
        noise_alpha=args.noise_alpha,
        seed=args.seed,
    )
    data = generate_synthetic(config)
    save_raw_class_data(data, args.out)
    print(f"wrote {args.out}: {data.interictal.shape[1]} interictal and "
          f"{data.ictal.shape[1]} ictal samples x {len(data.channel_order)} channels")
    return 0


def _cmd_ingest(args) -> int:
    data = ingest_recordings(args.recordings, args.seed)
    save_raw_class_data(data, args.out)
    print(f"wrote {args.out}: {data.ictal.shape[1]} samples per class "
          f"from {len(args.recordings)} recording(s)")
    return 0


def _cmd_prep(args) -> int:
    data = load_raw_class_data(args.data)
    seg_len = round_half_away(CANONICAL_SAMPLING_RATE_HZ * args.segment_len_s)
    segset = build_segment_set(data, seg_len, args.overlap)
    splits = split(segset, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", splits.train), ("val", splits.val), ("test", splits.test)):
        save_segment_set(part, out / f"{name}.segset")
    print(f"wrote {out}/: {len(splits.train)}/{len(splits.val)}/{len(splits.test)} "
          f"train/val/test segments of {segset.segments.shape[1]}x{seg_len}")
    return 0


def _cmd_train(args) -> int:
    if args.config is not None:
        config = load_experiment_config(args.config)
    else:
        config = ExperimentConfig()
    config.source = args.data
    if args.variant is not None or args.layers is not None or args.heads is not None:
        base = config.variants[0] if len(config.variants) == 1 else ("lct", 1, 2)
        parsed = base if args.variant is None else parse_variant_spec(args.variant)
        layers = args.layers if args.layers is not None else parsed[1]
        heads = args.heads if args.heads is not None else parsed[2]
        config.variants = [(parsed[0], layers, heads)]
    if len(config.variants) != 1:
        raise ConfigError("train runs a single variant; use sweep for grids")
    if args.segment_len_s is not None:
        config.segment_lens_s = [args.segment_len_s]
    if len(config.segment_lens_s) != 1:
        raise ConfigError("train runs a single window length; use sweep for grids")
    if args.overlap is not None:
        config.overlap = args.overlap
    if args.seed is not None:
        config.seed = args.seed
    run_experiment(config, args.out, log=lambda line: print(line, flush=True))
    return 0


def _cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if args.model_config:
        config_path = Path(args.model_config)
    else:
        # strip the literal extension; with_suffix would eat '.5s' in 'w0.5s'
        stem = ckpt_path.name[:-5] if ckpt_path.name.endswith(".ckpt") else ckpt_path.name
        config_path = ckpt_path.with_name(stem + ".model.cfg")
    if not config_path.exists():
        raise DataError(f"model config {config_path} not found; pass --model-config")
    model_config = load_model_config(config_path)
    arrays = load_checkpoint(ckpt_path)
    segset = load_segment_set(args.data)
    dtype = np.float64 if next(iter(arrays.values())).dtype == np.float64 else np.float32
    metrics = evaluate_checkpoint(model_config, arrays, segset, dtype=dtype)
    line = (f"acc={metrics.accuracy:.4f}  p={metrics.precision:.4f}  "
            f"r={metrics.recall:.4f}  f1={metrics.f1:.4f}  "
            f"(tp={metrics.tp} fp={metrics.fp} tn={metrics.tn} fn={metrics.fn})")
    print(line)
    if args.out:
        Path(args.out).write_text(json.dumps(metrics.as_dict(), indent=2) + "\n")
    return 0


def _cmd_sweep(args) -> int:
    config = load_experiment_config(args.config)
    run_experiment(config, args.out, log=lambda line: print(line, flush=True))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except LctError as err:
        kind = {1: "config error", 2: "data error", 3: "numeric error"}[err.exit_code]
        print(f"{kind}: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"data error: {err}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
