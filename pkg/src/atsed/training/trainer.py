"""Stage-1 (audio tagging) and Stage-2 (SED) training loops."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .. import augment as aug
from ..labels import BatchComposer, BatchPlan, EventList
from ..models import build_model
from ..numerics import functional as F
from ..numerics.checkpoint import import_pretrained
from ..numerics.nn import Dropout
from ..numerics.optim import Adam
from ..numerics.tensor import Tensor, backward, default_dtype, no_grad
from ..postprocess import MedianConfig, median_durations
from ..psds import SCENARIO_1, SCENARIO_2, compute_psds
from .data import ClipSet, normalize, output_hop
from .losses import AflConfig, afl_loss, bce_loss, mse
from .ssl import SslConfig, make_teacher, update_teacher, warmup_coefficient

log = logging.getLogger(__name__)

STAGE1_SOURCES = ("weakified", "weak", "unlabeled")
STAGE2_SOURCES = ("strong", "weak", "pseudo-weak")


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    precision: str = "float32"
    val_every: int = 1
    val_thresholds: int = 50
    log_csv: Optional[str] = None
    init_checkpoint: Optional[str] = None  # weights imported by matching name and shape


@dataclass
class StageRecipe:
    stage: int
    model: dict  # architecture dict understood by build_model
    sources: tuple = STAGE1_SOURCES
    augment: aug.AugmentConfig = field(default_factory=aug.AugmentConfig.stage1)
    loss: str = "bce"  # frame-level loss on strong clips: "bce" or "afl"
    afl: AflConfig = field(default_factory=AflConfig)
    strong_frames: bool = False  # Stage 1 only: also use frame targets of the strong set

    def __post_init__(self):
        if self.stage == 1 and not set(self.sources) <= set(STAGE1_SOURCES) | {"strong"}:
            raise ValueError(f"Stage-1 sources must come from {STAGE1_SOURCES}")
        if self.stage == 2 and not set(self.sources) <= set(STAGE2_SOURCES) | {"unlabeled"}:
            raise ValueError(f"Stage-2 sources must come from {STAGE2_SOURCES}")
        if self.loss not in ("bce", "afl"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class StageData:
    """Three batch slots plus an optional validation set.

    ``strong`` slot: strong clips (Stage 2) or strong clips used as
    weakified labels (Stage 1). ``weak`` slot: weak clips. ``third`` slot:
    unlabeled clips (Stage 1) or pseudo-weak clips (Stage 2).
    """

    vocabulary: List[str]
    strong: ClipSet
    weak: ClipSet
    third: ClipSet
    validation: Optional[ClipSet] = None


@dataclass
class TrainResult:
    model: object
    teacher: object
    history: List[dict]
    best_epoch: int
    best_score: float


def _empty(vocab_size):
    return ClipSet([], [], np.zeros((0, vocab_size)))


# -- inference --------------------------------------------------------------

def predict(model, features: Sequence[np.ndarray], batch_size: int = 8):
    """Eval-mode frame (``N x T' x K``) and clip (``N x K``) probabilities."""
    model.eval()
    frames, clips = [], []
    with no_grad():
        for i in range(0, len(features), batch_size):
            x = np.stack([normalize(f) for f in features[i:i + batch_size]])
            out = model(x)
            frames.append(out.frame.data.astype(np.float64))
            clips.append(out.clip.data.astype(np.float64))
    model.train()
    if not frames:
        return np.zeros((0, 0, 0)), np.zeros((0, 0))
    return np.concatenate(frames), np.concatenate(clips)


def macro_f1(pred: np.ndarray, truth: np.ndarray) -> float:
    """Macro F1 over classes that occur in either ``pred`` or ``truth``."""
    pred, truth = np.asarray(pred) > 0.5, np.asarray(truth) > 0.5
    axes = tuple(range(pred.ndim - 1))
    tp = (pred & truth).sum(axis=axes)
    fp = (pred & ~truth).sum(axis=axes)
    fn = (~pred & truth).sum(axis=axes)
    active = (tp + fp + fn) > 0
    if not active.any():
        return 1.0
    f1 = 2 * tp[active] / (2 * tp[active] + fp[active] + fn[active])
    return float(f1.mean())


def micro_f1(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred) > 0.5, np.asarray(truth) > 0.5
    tp = (pred & truth).sum()
    denom = 2 * tp + (pred & ~truth).sum() + (~pred & truth).sum()
    return 1.0 if denom == 0 else float(2 * tp / denom)


# -- training ---------------------------------------------------------------

class StageTrainer:
    def __init__(self, data: StageData, recipe: StageRecipe, ssl: SslConfig, cfg: TrainConfig,
                 median: Optional[MedianConfig] = None):
        self.data, self.recipe, self.ssl, self.cfg = data, recipe, ssl, cfg
        self.vocab = list(data.vocabulary)
        root = np.random.default_rng(cfg.seed)
        seeds = root.integers(0, 2**63 - 1, size=5)
        self.rng_init, self.rng_batch, self.rng_aug, self.rng_ict, self.rng_teacher = (
            np.random.default_rng(int(s)) for s in seeds)
        self.dtype = np.float32 if cfg.precision == "float32" else np.float64
        with default_dtype(self.dtype):
            self.model = build_model(recipe.model, self.rng_init)
            if cfg.init_checkpoint:
                loaded = import_pretrained(cfg.init_checkpoint, self.model)
                log.info("imported %d tensors from %s", len(loaded), cfg.init_checkpoint)
            self.teacher = make_teacher(self.model)
        for _, child in _walk(self.teacher):
            if isinstance(child, Dropout):
                child.rng = self.rng_teacher
        self.ds = self.model.cfg.time_downsample
        self.hop = output_hop(self.ds)
        n_in = data.strong.features[0].shape[0] if len(data.strong) else (
            data.weak.features[0].shape[0] if len(data.weak) else data.third.features[0].shape[0])
        self.n_out = n_in // self.ds
        self.use_frames = recipe.stage == 2 or recipe.strong_frames
        self.strong_frames = (data.strong.frame_labels(self.n_out, self.hop, self.vocab)
                              if self.use_frames and len(data.strong) else None)
        self.third_labeled = data.third.clip_labels is not None
        if recipe.stage == 1 and len(data.strong) + len(data.weak) == 0:
            raise ValueError("Stage 1 needs at least one labeled source (weakified or weak)")
        self.median = median or MedianConfig(median_durations(data.strong.events or [], self.vocab),
                                             self.hop)
        self.composer = BatchComposer({"strong": len(data.strong), "weak": len(data.weak),
                                       "unlabeled": len(data.third)},
                                      BatchPlan.from_batch_size(cfg.batch_size), self.rng_batch)
        self.optimizer = Adam(self.model.parameters(), lr=cfg.lr)
        self.step = 0

    # -- batch assembly ----------------------------------------------------
    def _sets(self):
        return {"strong": self.data.strong, "weak": self.data.weak, "unlabeled": self.data.third}

    def make_batch(self, pairs):
        sets = self._sets()
        rng, acfg = self.rng_aug, self.recipe.augment
        use = {name: (getattr(acfg, name) and rng.random() < acfg.apply_prob)
               for name in ("frame_shift", "filter_augment", "time_mask", "gaussian_noise", "mixup")}
        xs, frame_y, clip_y, groups = [], [], [], []
        for source, i in pairs:
            s = sets[source]
            x = s.features[i]
            fy = self.strong_frames[i] if (source == "strong" and self.strong_frames is not None) else None
            if source == "strong":
                cy = s.clip_labels[i]
            elif source == "weak" or self.third_labeled:
                cy = s.clip_labels[i]
            else:
                cy = None
            if use["frame_shift"]:
                x, fy = aug.frame_shift(x, fy, rng, acfg, label_ratio=self.ds if fy is not None else 1)
            if use["filter_augment"]:
                x = aug.filter_augment(x, rng, acfg)
            x = normalize(x)
            if use["time_mask"]:
                x = aug.time_mask(x, rng, acfg)
            if use["gaussian_noise"]:
                x = aug.add_gaussian_noise(x, rng, acfg)
            xs.append(x)
            frame_y.append(fy)
            clip_y.append(cy)
            groups.append(source)
        if use["mixup"]:
            lam = aug.sample_mixup_lambda(rng, acfg)
            for g in ("strong", "weak", "unlabeled"):
                idx = [k for k, src in enumerate(groups) if src == g]
                if len(idx) < 2:
                    continue
                perm = rng.permutation(idx)
                mixed = [aug.mixup((xs[a], frame_y[a]), (xs[b], frame_y[b]), lam) for a, b in zip(idx, perm)]
                mixed_c = [None if clip_y[a] is None else lam * clip_y[a] + (1 - lam) * clip_y[b]
                           for a, b in zip(idx, perm)]
                for k, (a, (mx, my)) in enumerate(zip(idx, mixed)):
                    xs[a], frame_y[a] = mx, my
                for a, c in zip(idx, mixed_c):
                    clip_y[a] = c
        return np.stack(xs), frame_y, clip_y, groups

    # -- one optimisation step --------------------------------------------
    def train_step(self, epoch: int) -> Dict[str, float]:
        pairs = self.composer.next_batch()
        x, frame_y, clip_y, groups = self.make_batch(pairs)
        ramp = warmup_coefficient(epoch, self.ssl.warmup_epochs)
        w_clip = self.ssl.consistency_weight_max * ramp
        w_frame = self.ssl.frame_consistency_weight_max * ramp
        out = self.model(Tensor(x))
        terms: Dict[str, float] = {}
        loss = None

        frame_idx = [k for k, fy in enumerate(frame_y) if fy is not None]
        if self.recipe.stage == 2 or self.recipe.strong_frames:
            clip_idx = [k for k, (g, cy) in enumerate(zip(groups, clip_y)) if cy is not None and g != "strong"]
        else:
            clip_idx = [k for k, cy in enumerate(clip_y) if cy is not None]
        if frame_idx:
            target = np.stack([frame_y[k] for k in frame_idx])
            pf = F.index(out.frame, np.array(frame_idx))
            lf = afl_loss(pf, target, self.recipe.afl) if self.recipe.loss == "afl" else bce_loss(pf, target)
            loss = lf
            terms["frame_loss"] = float(lf.data)
        if clip_idx:
            target = np.stack([clip_y[k] for k in clip_idx])
            lc = bce_loss(F.index(out.clip, np.array(clip_idx)), target)
            loss = lc if loss is None else loss + lc
            terms["clip_loss"] = float(lc.data)
        terms["n_frame_terms"] = len(frame_idx)
        terms["n_clip_terms"] = len(clip_idx)

        if w_clip > 0 or w_frame > 0:
            with no_grad():
                t_out = self.teacher(x)
            cons = mse(out.clip, F.stop_gradient(t_out.clip)) * w_clip + \
                mse(out.frame, F.stop_gradient(t_out.frame)) * w_frame
            loss = cons if loss is None else loss + cons
            terms["consistency"] = float(cons.data)
            if self.ssl.ict_enabled:
                lam = float(self.rng_ict.beta(self.ssl.ict_alpha, self.ssl.ict_alpha))
                perm = self.rng_ict.permutation(len(x))
                s_mix = self.model(Tensor(lam * x + (1 - lam) * x[perm]))
                tgt_clip = lam * t_out.clip.data + (1 - lam) * t_out.clip.data[perm]
                tgt_frame = lam * t_out.frame.data + (1 - lam) * t_out.frame.data[perm]
                ict = mse(s_mix.clip, tgt_clip) * w_clip + mse(s_mix.frame, tgt_frame) * w_frame
                loss = ict if loss is None else loss + ict
                terms["ict"] = float(ict.data)
        if loss is None:
            return terms
        self.optimizer.zero_grad()
        backward(loss)
        self.optimizer.step(lr=self.cfg.lr * ramp)
        update_teacher(self.teacher, self.model, self.ssl.ema_decay, self.step)
        self.step += 1
        terms["loss"] = float(loss.data)
        terms["lr"] = self.cfg.lr * ramp
        terms["consistency_weight"] = w_clip
        return terms

    # -- validation --------------------------------------------------------
    def validate(self) -> Dict[str, float]:
        val = self.data.validation
        if val is None or len(val) == 0:
            return {}
        frame, clip = predict(self.model, val.features)
        if self.recipe.stage == 1:
            return {"val_clip_f1": macro_f1(clip >= 0.5, val.clip_labels), "val_score": macro_f1(clip >= 0.5, val.clip_labels)}
        refs = {e.clip_id: e for e in val.events}
        post = dict(zip(val.ids, frame))
        windows = self.median.windows(self.vocab)
        ths = tuple(float(t) for t in np.round(np.linspace(0.01, 0.99, self.cfg.val_thresholds), 4))
        s1 = compute_psds(post, refs, self.vocab, windows, self.hop, _with_thresholds(SCENARIO_1, ths)).score
        s2 = compute_psds(post, refs, self.vocab, windows, self.hop, _with_thresholds(SCENARIO_2, ths)).score
        return {"val_psds1": s1, "val_psds2": s2, "val_score": s1 + s2}

    def run(self) -> TrainResult:
        history = []
        best_score, best_epoch, best_state = -np.inf, -1, None
        steps = self.composer.steps_per_epoch()
        with default_dtype(self.dtype):
            for epoch in range(self.cfg.epochs):
                acc: Dict[str, List[float]] = {}
                for _ in range(steps):
                    for k, v in self.train_step(epoch).items():
                        acc.setdefault(k, []).append(v)
                row = {"epoch": epoch, "steps": steps}
                row.update({k: float(np.mean(v)) for k, v in acc.items()})
                if (epoch + 1) % self.cfg.val_every == 0 or epoch == self.cfg.epochs - 1:
                    row.update(self.validate())
                score = row.get("val_score")
                if score is not None and score > best_score:
                    best_score, best_epoch = score, epoch
                    best_state = {k: v.copy() for k, v in self.model.state_dict().items()}
                history.append(row)
                log.info("stage %d epoch %d %s", self.recipe.stage, epoch,
                         " ".join(f"{k}={v:.4g}" for k, v in row.items() if isinstance(v, float)))
                if self.cfg.log_csv:
                    _append_csv(self.cfg.log_csv, row, first=epoch == 0)
        if best_state is not None:
            self.model.load_state_dict(best_state)
        else:
            best_epoch = self.cfg.epochs - 1
        return TrainResult(self.model, self.teacher, history, best_epoch,
                           float(best_score) if best_state is not None else float("nan"))


_LOG_FIELDS = ["epoch", "steps", "loss", "lr", "consistency_weight", "frame_loss", "clip_loss",
               "consistency", "ict", "n_frame_terms", "n_clip_terms", "val_clip_f1", "val_psds1",
               "val_psds2", "val_score"]


def _append_csv(path, row, first):
    path = Path(path)
    mode = "w" if first or not path.exists() else "a"
    with open(path, mode, newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_LOG_FIELDS, extrasaction="ignore")
        if mode == "w":
            w.writeheader()
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})


def _with_thresholds(cfg, ths):
    from dataclasses import replace
    return replace(cfg, thresholds=ths)


def _walk(module, prefix=""):
    yield prefix, module
    for key, child in module.children():
        yield from _walk(child, f"{prefix}{key}.")


def train_stage1(data: StageData, recipe: StageRecipe, ssl: SslConfig, cfg: TrainConfig) -> TrainResult:
    """Audio tagging on weakified + weak labels with MT/ICT consistency on all clips."""
    if recipe.stage != 1:
        raise ValueError("train_stage1 needs a Stage-1 recipe")
    return StageTrainer(data, recipe, ssl, cfg).run()


def train_stage2(data: StageData, recipe: StageRecipe, ssl: SslConfig, cfg: TrainConfig,
                 median: Optional[MedianConfig] = None) -> TrainResult:
    """SED on strong (frame loss) plus weak and pseudo-weak (clip loss) labels."""
    if recipe.stage != 2:
        raise ValueError("train_stage2 needs a Stage-2 recipe")
    return StageTrainer(data, recipe, ssl, cfg, median).run()
