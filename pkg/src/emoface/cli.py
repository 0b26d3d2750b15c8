"""Command-line entry point.

Commands map one-to-one onto pipeline stages. Exit codes: 0 success,
2 configuration error, 3 missing prerequisite, 4 numerical failure.
The output root defaults to $EMOFACE_OUT_ROOT (falling back to ./runs).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ConfigError, RunConfig, apply_overrides, defaults_reference, load_config
from .metrics import ConstantInputError, MinSamplesError, NonPsdError
from .pipeline import (
    ABLATE_VARIANTS,
    MissingPrerequisiteError,
    NumericalFailureError,
    Paths,
    stage_ablate,
    stage_eval,
    stage_gen_data,
    stage_sample,
    stage_swap,
    stage_train_dee,
    stage_train_gen,
    stage_train_vqvae,
)

ENV_OUT_ROOT = "EMOFACE_OUT_ROOT"


def _out_root() -> str:
    return os.environ.get(ENV_OUT_ROOT, os.path.join(os.getcwd(), "runs"))


def _default_out() -> str:
    return os.path.join(_out_root(), "run")


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file; omitted fields use documented defaults")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config field (repeatable), e.g. --set gen.stage1_epochs=5",
    )
    p.add_argument("--out", help=f"run directory (default: ${ENV_OUT_ROOT}/run or ./runs/run)")


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    return apply_overrides(cfg, args.overrides) if getattr(args, "overrides", None) else cfg


def _resolve_run_dir(checkpoint: str) -> str:
    """Accept a run directory, its checkpoints/ subdirectory, or a .ckpt file."""
    path = os.path.abspath(checkpoint)
    if os.path.isfile(path):
        path = os.path.dirname(path)
    if os.path.basename(path) == "checkpoints":
        path = os.path.dirname(path)
    return path


def _config_for_run(args, paths: Paths) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif os.path.exists(paths.config_snapshot):
        cfg = load_config(paths.config_snapshot)
    else:
        cfg = RunConfig()
    return apply_overrides(cfg, args.overrides) if getattr(args, "overrides", None) else cfg


def _parse_alpha(text: str):
    if text == "mean":
        return "mean"
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"--alpha must be 'mean' or a number, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emoface",
        description="Speech-driven emotional facial-motion toolkit on a synthetic benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("gen-data", "synthesize and write the train/val datasets"),
        ("train-dee", "train the joint audio/motion emotion embedder"),
        ("train-vqvae", "train the two-level quantized motion prior"),
        ("train-gen", "train the motion generator (two stages)"),
        ("eval", "compute the full metrics report with figures"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_args(p)

    p = sub.add_parser("ablate", help="train/evaluate one model variant and update the comparison table")
    p.add_argument("variant", choices=ABLATE_VARIANTS)
    _add_config_args(p)

    p = sub.add_parser("sample", help="generate motion for one audio file")
    p.add_argument("checkpoint", help="run directory (or its checkpoints dir / a .ckpt inside it)")
    p.add_argument("audio_file", help="input audio feature file (.aud)")
    p.add_argument("--alpha", default="mean", help="'mean' for deterministic style, or a positive scale for sampling")
    p.add_argument("--tau-t", type=float, default=1.0, help="top-level code sampling temperature")
    p.add_argument("--tau-b", type=float, default=1.0, help="bottom-level code sampling temperature")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (ignored when --alpha mean)")
    p.add_argument("--identity", type=int, default=0, help="speaker identity index")
    p.add_argument("--output", help="output motion file (default: <run>/samples/<audio-stem>.mot)")
    p.add_argument("--config", help="override the run's resolved config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("swap-emotion", help="cross-render two clips with each other's emotion embedding")
    p.add_argument("checkpoint", help="run directory (or its checkpoints dir / a .ckpt inside it)")
    p.add_argument("audio_a", help="first audio feature file")
    p.add_argument("audio_b", help="second audio feature file")
    p.add_argument("--identity", type=int, default=0, help="speaker identity index")
    p.add_argument("--output-dir", help="directory for the two motion files (default: <run>/samples/swap)")
    p.add_argument("--config", help="override the run's resolved config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("defaults", help="print the documented config defaults reference")
    p.add_argument("--output", help="write to a file instead of stdout")

    return parser


def _log_line(entry: dict):
    parts = [f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in entry.items()]
    print("  " + " ".join(parts), flush=True)


def _dispatch(args) -> int:
    if args.command == "defaults":
        text = defaults_reference()
        if args.output:
            with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        else:
            print(text, end="")
        return 0

    if args.command in ("sample", "swap-emotion"):
        run_dir = _resolve_run_dir(args.checkpoint)
        paths = Paths(run_dir)
        cfg = _config_for_run(args, paths)
        if args.command == "sample":
            stem = os.path.splitext(os.path.basename(args.audio_file))[0]
            out_path = args.output or os.path.join(paths.samples, f"{stem}.mot")
            written = stage_sample(
                cfg,
                paths,
                args.audio_file,
                out_path,
                alpha=_parse_alpha(args.alpha),
                tau_t=args.tau_t,
                tau_b=args.tau_b,
                seed=args.seed,
                identity=args.identity,
            )
            print(written)
        else:
            out_dir = args.output_dir or os.path.join(paths.samples, "swap")
            path_a, path_b = stage_swap(cfg, paths, args.audio_a, args.audio_b, out_dir, identity=args.identity)
            print(path_a)
            print(path_b)
        return 0

    cfg = _resolve_config(args)
    paths = Paths(args.out or _default_out())
    stage = {
        "gen-data": stage_gen_data,
        "train-dee": stage_train_dee,
        "train-vqvae": stage_train_vqvae,
        "train-gen": stage_train_gen,
        "eval": stage_eval,
        "ablate": stage_ablate,
    }[args.command]
    if args.command == "gen-data":
        result = stage(cfg, paths)
    elif args.command == "eval":
        result = stage(cfg, paths)
    elif args.command == "ablate":
        result = stage(cfg, paths, args.variant, log=_log_line)
    else:
        result = stage(cfg, paths, log=_log_line)
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingPrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalFailureError, NonPsdError, MinSamplesError, ConstantInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
