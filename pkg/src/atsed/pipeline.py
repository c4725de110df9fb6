"""Two-stage pipeline steps operating on a :class:`RunConfig`.

Artifacts under ``output_dir``::

    stage1/model.bin(.json)  stage1/log.csv  stage1/summary.json
    pseudo_weak.tsv
    stage2/model.bin(.json)  stage2/log.csv  stage2/summary.json
    eval/psds_scenario1.json eval/psds_scenario2.json eval/events.tsv eval/roc.csv
    report/summary.csv report/training_log.csv report/roc.csv
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .config import RunConfig, StageConfig
from .labels import EventList, PseudoLabelConfig, parse_manifest, pseudo_labels, weakify, \
    write_strong_manifest, write_weak_manifest
from .models import AtBackboneConfig, CrnnConfig, build_model
from .numerics.checkpoint import load_model, read_architecture, save_model
from .numerics.tensor import default_dtype
from .postprocess import MedianConfig, median_durations, posteriors_to_events
from .psds import SCENARIOS, compute_psds, psds_from_events, roc_csv_rows
from .training.data import ClipSet, FeatureExtractor, multi_hot, output_hop, strong_set, \
    unlabeled_set, weak_set
from .training.trainer import StageData, StageRecipe, TrainConfig, predict, train_stage1, \
    train_stage2

log = logging.getLogger(__name__)

EVAL_THRESHOLD = 0.5


class PipelineError(RuntimeError):
    """A prerequisite artifact or input is missing."""


def paths(cfg: RunConfig) -> Dict[str, Path]:
    o = cfg.output_dir
    return {
        "stage1": o / "stage1" / "model.bin",
        "pseudo": o / "pseudo_weak.tsv",
        "stage2": o / "stage2" / "model.bin",
        "eval": o / "eval",
        "report": o / "report",
    }


def _require(path: Path, command: str, what: str) -> None:
    if not path.exists():
        raise PipelineError(f"{what} not found at {path}; run `{command}` first")


def _manifest(cfg: RunConfig, kind: str, required: bool = True):
    p = cfg.manifests.get(kind)
    if p is None:
        if required:
            raise PipelineError(f"config [paths] has no {kind} manifest")
        return None
    parse_kind = "strong" if kind == "validation" else kind
    return parse_manifest(p, parse_kind, cfg.classes)


def architecture(stage: StageConfig, n_classes: int) -> dict:
    if stage.model == "at":
        model = build_model({"kind": "at", **asdict(AtBackboneConfig.desk(
            stage.width_divisor, n_mels=stage.n_mels, n_classes=n_classes))})
    elif stage.model in ("crnn", "fdy_crnn"):
        base = CrnnConfig(n_mels=stage.n_mels, n_classes=n_classes, n_basis=stage.n_basis,
                          temperature=stage.temperature)
        model = build_model({"kind": stage.model, **asdict(base.scaled(stage.width_divisor))})
    else:
        raise PipelineError(f"unknown model {stage.model!r}; expected at, crnn or fdy_crnn")
    return json.loads(json.dumps(model.architecture()))  # same form as a checkpoint sidecar


def _train_config(cfg: RunConfig, stage: StageConfig, log_csv: Path) -> TrainConfig:
    return TrainConfig(epochs=stage.epochs, batch_size=stage.batch_size, lr=stage.lr,
                       seed=cfg.seed + 1000 * stage.stage, precision=cfg.precision,
                       val_thresholds=cfg.psds_thresholds, log_csv=str(log_csv))


def _median(cfg: RunConfig, strong_events, hop: float) -> MedianConfig:
    fixed = {c: cfg.fixed_window for c in cfg.classes} if cfg.fixed_window else {}
    return MedianConfig(median_durations(strong_events, cfg.classes), hop,
                        {c: cfg.beta for c in cfg.classes}, {**fixed, **cfg.window_overrides})


def _write_summary(path: Path, result, n_params: int) -> None:
    summary = {"best_epoch": result.best_epoch, "best_score": result.best_score,
               "epochs_run": len(result.history), "n_parameters": n_params}
    path.write_text(json.dumps(summary, indent=1, sort_keys=True))


def _extractor(cfg: RunConfig, n_mels: int) -> FeatureExtractor:
    return FeatureExtractor(cfg.audio_root, n_mels, cfg.feature_cache)


# -- commands ---------------------------------------------------------------

def train_stage1_cmd(cfg: RunConfig) -> Path:
    st = cfg.stage1
    strong = _manifest(cfg, "strong", required=False) or {}
    weak = _manifest(cfg, "weak", required=False) or {}
    unlabeled = _manifest(cfg, "unlabeled", required=False) or []
    validation = _manifest(cfg, "validation", required=False)
    if not strong and not weak:
        raise PipelineError("stage 1 needs a strong (weakified) or weak manifest")
    ext = _extractor(cfg, st.n_mels)
    vocab = cfg.classes
    s = strong_set(list(strong.values()), ext, vocab)
    val = None
    if validation:
        v = list(validation.values())
        val = ClipSet([e.clip_id for e in v], ext.many([e.clip_id for e in v]),
                      multi_hot([weakify(e) for e in v], vocab), v)
    data = StageData(vocab, s, weak_set(list(weak.values()), ext, vocab), unlabeled_set(unlabeled, ext), val)
    recipe = StageRecipe(stage=1, model=architecture(st, len(vocab)), sources=("weakified", "weak", "unlabeled"),
                         augment=st.augment, loss="bce", strong_frames=st.strong_frames)
    out = paths(cfg)["stage1"]
    out.parent.mkdir(parents=True, exist_ok=True)
    result = _run(cfg, st, data, recipe, out, train_stage1)
    _write_summary(out.parent / "summary.json", result, result.model.num_parameters())
    return out


def _run(cfg, st, data, recipe, out, trainer_fn, **kw):
    tcfg = _train_config(cfg, st, out.parent / "log.csv")
    if recipe.stage == 1 and cfg.pretrained_stage1 is not None:
        if not Path(cfg.pretrained_stage1).exists():
            raise PipelineError(f"pretrained_stage1 checkpoint not found: {cfg.pretrained_stage1}")
        tcfg.init_checkpoint = str(cfg.pretrained_stage1)
    result = trainer_fn(data, recipe, st.ssl, tcfg, **kw)
    save_model(out, result.model, recipe.model)
    return result


def load_checkpoint(path: Path, precision: str = "float32"):
    arch = read_architecture(path)
    dtype = np.float32 if precision == "float32" else np.float64
    with default_dtype(dtype):
        model = build_model(arch)
    load_model(path, model)
    return model, arch


def infer_pseudo_cmd(cfg: RunConfig) -> Path:
    p = paths(cfg)
    _require(p["stage1"], "train-stage1", "stage-1 checkpoint")
    unlabeled = _manifest(cfg, "unlabeled")
    if not unlabeled:
        raise PipelineError("unlabeled manifest is empty; nothing to pseudo-label")
    model, arch = load_checkpoint(p["stage1"], cfg.precision)
    ext = _extractor(cfg, arch["n_mels"])
    with default_dtype(np.float32 if cfg.precision == "float32" else np.float64):
        _, clip = predict(model, ext.many(unlabeled))
    labels = pseudo_labels(unlabeled, clip, cfg.classes,
                           PseudoLabelConfig(cfg.stage1.pseudo_threshold, cfg.stage1.keep_empty_pseudo))
    write_weak_manifest(p["pseudo"], labels)
    return p["pseudo"]


def train_stage2_cmd(cfg: RunConfig) -> Path:
    st = cfg.stage2
    p = paths(cfg)
    strong = _manifest(cfg, "strong")
    weak = _manifest(cfg, "weak", required=False) or {}
    validation = _manifest(cfg, "validation", required=False)
    vocab = cfg.classes
    ext = _extractor(cfg, st.n_mels)
    if st.use_pseudo:
        _require(p["pseudo"], "infer-pseudo",
                 "pseudo-weak label file (set stage2.use_pseudo = false for the no-pseudo ablation)")
        pseudo = parse_manifest(p["pseudo"], "weak", vocab)
        third = weak_set(list(pseudo.values()), ext, vocab)
        sources = ("strong", "weak", "pseudo-weak")
    else:
        unlabeled = _manifest(cfg, "unlabeled", required=False) or []
        third = unlabeled_set(unlabeled, ext)
        sources = ("strong", "weak", "unlabeled")
    val = None
    if validation:
        val = strong_set(list(validation.values()), ext, vocab)
    data = StageData(vocab, strong_set(list(strong.values()), ext, vocab),
                     weak_set(list(weak.values()), ext, vocab), third, val)
    arch = architecture(st, len(vocab))
    recipe = StageRecipe(stage=2, model=arch, sources=sources, augment=st.augment, loss=st.loss, afl=st.afl)
    hop = output_hop(build_model(arch).cfg.time_downsample)
    median = _median(cfg, list(strong.values()), hop)
    out = p["stage2"]
    out.parent.mkdir(parents=True, exist_ok=True)
    result = _run(cfg, st, data, recipe, out, train_stage2, median=median)
    _write_summary(out.parent / "summary.json", result, result.model.num_parameters())
    return out


def _scenario_configs(cfg: RunConfig):
    ths = tuple(float(t) for t in np.round(np.linspace(0.01, 0.99, cfg.psds_thresholds), 4))
    return {name: replace(sc, thresholds=ths, e_max=cfg.e_max) for name, sc in SCENARIOS.items()}


def evaluate_cmd(cfg: RunConfig, predictions: Optional[Path] = None, stage: int = 2) -> Dict[str, float]:
    """PSDS of a trained model (or of a fixed events TSV) on the validation manifest.

    ``stage=1`` scores the frame output of the stage-1 model, as in the
    stage-1 ablation rows.
    """
    if stage not in (1, 2):
        raise PipelineError(f"stage must be 1 or 2, got {stage}")
    p = paths(cfg)
    refs = _manifest(cfg, "validation")
    vocab = cfg.classes
    out = p["eval"]
    scores = {}
    if predictions is not None:
        dets = parse_manifest(predictions, "strong", vocab)
        reports = {name: psds_from_events(dets, refs, vocab, sc, scenario=name)
                   for name, sc in _scenario_configs(cfg).items()}
        events = [dets.get(c, EventList(c, [])) for c in refs]
    else:
        key = f"stage{stage}"
        _require(p[key], f"train-{key}", f"stage-{stage} checkpoint")
        model, arch = load_checkpoint(p[key], cfg.precision)
        strong = _manifest(cfg, "strong")
        ext = _extractor(cfg, arch["n_mels"])
        ids = list(refs)
        with default_dtype(np.float32 if cfg.precision == "float32" else np.float64):
            frame, _ = predict(model, ext.many(ids))
        hop = output_hop(model.cfg.time_downsample)
        windows = _median(cfg, list(strong.values()), hop).windows(vocab)
        post = dict(zip(ids, frame))
        reports = {name: compute_psds(post, refs, vocab, windows, hop, sc, scenario=name)
                   for name, sc in _scenario_configs(cfg).items()}
        events = [posteriors_to_events(post[c], EVAL_THRESHOLD, windows, hop, c, vocab) for c in ids]
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, rep in reports.items():
        (out / f"psds_{name}.json").write_text(rep.to_json())
        rows.extend(roc_csv_rows(rep))
        scores[name] = rep.score
    with open(out / "roc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "efpr", "etpr"])
        w.writerows([[s, f"{x:.6g}", f"{y:.6g}"] for s, x, y in rows])
    write_strong_manifest(out / "events.tsv", events)
    return scores


def report_cmd(cfg: RunConfig) -> Path:
    """Collect evaluation scores, training summaries and curves into CSV files."""
    p = paths(cfg)
    ev = p["eval"]
    for name in SCENARIOS:
        _require(ev / f"psds_{name}.json", "evaluate", f"{name} PSDS report")
    out = p["report"]
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in SCENARIOS:
        rep = json.loads((ev / f"psds_{name}.json").read_text())
        rows.append(["eval", f"psds_{name}", f"{rep['score']:.6f}"])
    for stage in ("stage1", "stage2"):
        summ = cfg.output_dir / stage / "summary.json"
        if summ.exists():
            for k, v in sorted(json.loads(summ.read_text()).items()):
                rows.append([stage, k, f"{v:.6g}" if isinstance(v, float) else str(v)])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["section", "metric", "value"])
        w.writerows(rows)
    with open(out / "training_log.csv", "w", newline="") as fh:
        w = None
        for stage in ("stage1", "stage2"):
            logp = cfg.output_dir / stage / "log.csv"
            if not logp.exists():
                continue
            with open(logp, newline="") as src:
                for rec in csv.DictReader(src):
                    if w is None:
                        w = csv.DictWriter(fh, fieldnames=["stage"] + list(rec))
                        w.writeheader()
                    w.writerow({"stage": stage, **rec})
    (out / "roc.csv").write_bytes((ev / "roc.csv").read_bytes())
    return out / "summary.csv"
