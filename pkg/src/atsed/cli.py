"""Command-line entry point: ``atsed <command> ...`` or ``python -m atsed``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .audio import AudioError
from .config import ConfigError, load_config, write_config
from .labels import ManifestError
from .numerics.checkpoint import CheckpointError
from .synth import SYNTH_CLASSES, make_corpus


def _overrides(items):
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def cmd_synthdata(args) -> int:
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    if args.n_clips < 4:
        raise ConfigError("--n-clips must be at least 4 (one per split)")
    out = Path(args.out)
    lo, _, hi = args.event_gain.partition(",")
    manifests = make_corpus(out, args.n_clips, classes, args.seed, (float(lo), float(hi or lo)))
    write_config(out / "run.ini", {
        "paths": {"audio_root": "audio", "strong": manifests["strong"].name, "weak": manifests["weak"].name,
                  "unlabeled": manifests["unlabeled"].name, "validation": manifests["validation"].name,
                  "output_dir": "out"},
        "run": {"seed": args.seed, "classes": ",".join(classes)},
    })
    print(f"wrote {args.n_clips} clips and manifests to {out}; config template {out / 'run.ini'}")
    return 0


def _with_config(fn):
    def run(args) -> int:
        cfg = load_config(args.config, _overrides(args.set))
        result = fn(cfg, args)
        if result is not None:
            print(result)
        return 0
    return run


COMMANDS = {
    "train-stage1": (_with_config(lambda cfg, a: pipeline.train_stage1_cmd(cfg)),
                     "train the audio-tagging model (stage 1)"),
    "infer-pseudo": (_with_config(lambda cfg, a: pipeline.infer_pseudo_cmd(cfg)),
                     "write pseudo-weak labels for the unlabeled manifest"),
    "train-stage2": (_with_config(lambda cfg, a: pipeline.train_stage2_cmd(cfg)),
                     "train the event-detection model (stage 2)"),
    "evaluate": (_with_config(lambda cfg, a: pipeline.evaluate_cmd(
        cfg, Path(a.predictions) if a.predictions else None, a.stage)),
                 "PSDS of both scenarios on the validation manifest"),
    "report": (_with_config(lambda cfg, a: pipeline.report_cmd(cfg)),
               "collect scores, training logs and ROC curves into CSV files"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atsed", description="Two-stage sound event detection pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synthdata", help="generate a synthetic corpus with manifests")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-clips", type=int, default=40)
    p.add_argument("--classes", default=",".join(SYNTH_CLASSES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--event-gain", default="0.1,0.3", help="min,max peak amplitude of events")
    p.set_defaults(func=cmd_synthdata)
    for name, (fn, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, action="append",
                       help="INI run configuration; repeat to layer presets (later files win)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        if name == "evaluate":
            p.add_argument("--predictions", help="score a strong-format events TSV instead of the model")
            p.add_argument("--stage", type=int, choices=(1, 2), default=2,
                           help="which trained model to score (default 2)")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ManifestError, CheckpointError, AudioError, pipeline.PipelineError,
            OSError, ValueError) as exc:
        print(f"atsed {args.command}: error: {exc}", file=sys.stderr)
        return 2
