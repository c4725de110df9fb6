"""Run configuration: an INI file of ``key = value`` pairs in sections.

Sections and keys (defaults in parentheses)::

    [paths]      audio_root, strong, weak, unlabeled, validation, output_dir (out),
                 feature_cache (none), pretrained_stage1 (none)
    [run]        seed (0), precision (float32 | float64), classes (DESED 10),
                 deterministic (true)
    [stage1]     model (at), width_divisor (8), n_mels (64), epochs (40), batch_size (16),
                 lr (0.001), strong_frames (false), pseudo_threshold (0.5),
                 keep_empty_pseudo (true), + SSL and augmentation keys below
    [stage2]     model (fdy_crnn), width_divisor (1), n_mels (128), n_basis (4),
                 temperature (31), loss (afl), afl_gamma (0.625), afl_zeta (1.0),
                 use_pseudo (true), epochs, batch_size, lr, + SSL and augmentation keys
    SSL keys:    ema_decay (0.999), consistency_weight (2.0), frame_consistency_weight (2.0),
                 warmup_epochs (epochs // 4: 50 of 200, 10 of 40), ict (true), ict_alpha (0.5)
    augmentation keys: time_mask, frame_shift, mixup, gaussian_noise, filter_augment (flags;
                 stage defaults), time_mask_max_frames (62), frame_shift_max (16),
                 mixup_alpha (0.2), noise_sigma (0.05), filter_aug_bands (2,5),
                 filter_aug_db (-6,6), augment_prob (0.5)
    [postprocess] beta (0.3333333), windows (per-class overrides, ``Dog:5,Cat:9``),
                 fixed_window (none; one odd window for every class)
    [psds]       thresholds (50), e_max (100)

Several files may be given; later ones override earlier ones key by key,
so a preset without ``[paths]`` can be layered on a corpus config.
Relative paths resolve against the directory of the first file. The
``ATSED_OUTPUT_DIR`` environment variable overrides ``paths.output_dir``.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .augment import AugmentConfig
from .labels import DESED_CLASSES
from .training.losses import AflConfig
from .training.ssl import SslConfig

OUTPUT_ENV = "ATSED_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class StageConfig:
    stage: int
    model: str
    width_divisor: int
    n_mels: int
    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-3
    ssl: SslConfig = field(default_factory=SslConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: str = "bce"
    afl: AflConfig = field(default_factory=AflConfig)
    n_basis: int = 4
    temperature: float = 31.0
    strong_frames: bool = False
    use_pseudo: bool = True
    pseudo_threshold: float = 0.5
    keep_empty_pseudo: bool = True


@dataclass
class RunConfig:
    audio_root: Path
    manifests: Dict[str, Optional[Path]]
    output_dir: Path
    classes: List[str]
    stage1: StageConfig
    stage2: StageConfig
    seed: int = 0
    precision: str = "float32"
    feature_cache: Optional[Path] = None
    pretrained_stage1: Optional[Path] = None
    beta: float = 1.0 / 3.0
    window_overrides: Dict[str, int] = field(default_factory=dict)
    fixed_window: Optional[int] = None
    psds_thresholds: int = 50
    e_max: float = 100.0
    # every step already runs serially, so both settings give identical results
    deterministic: bool = True


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _pair(s: str, typ):
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected two comma-separated values, got {s!r}")
    return typ(parts[0]), typ(parts[1])


def _stage(sec: configparser.SectionProxy, stage: int) -> StageConfig:
    defaults = {
        1: dict(model="at", width_divisor=8, n_mels=64, loss="bce"),
        2: dict(model="fdy_crnn", width_divisor=1, n_mels=128, loss="afl"),
    }[stage]
    known = {"model", "width_divisor", "n_mels", "epochs", "batch_size", "lr", "loss", "afl_gamma",
             "afl_zeta", "n_basis", "temperature", "strong_frames", "use_pseudo", "pseudo_threshold",
             "keep_empty_pseudo", "ema_decay", "consistency_weight", "frame_consistency_weight",
             "warmup_epochs", "ict", "ict_alpha", "time_mask", "frame_shift", "mixup", "gaussian_noise",
             "filter_augment", "time_mask_max_frames", "frame_shift_max", "mixup_alpha", "noise_sigma",
             "filter_aug_bands", "filter_aug_db", "augment_prob"}
    unknown = set(sec.keys()) - known
    if unknown:
        raise ConfigError(f"[stage{stage}]: unknown keys {sorted(unknown)}")
    g = sec.get
    epochs = int(g("epochs", "40"))
    ssl = SslConfig(
        ema_decay=float(g("ema_decay", "0.999")),
        consistency_weight_max=float(g("consistency_weight", "2.0")),
        frame_consistency_weight_max=float(g("frame_consistency_weight", "2.0")),
        warmup_epochs=int(g("warmup_epochs", str(epochs // 4))),
        ict_enabled=_bool(g("ict", "true")),
        ict_alpha=float(g("ict_alpha", "0.5")),
    )
    base = AugmentConfig.stage1() if stage == 1 else AugmentConfig.stage2()
    augment = AugmentConfig(
        time_mask_max_frames=int(g("time_mask_max_frames", str(base.time_mask_max_frames))),
        frame_shift_max=int(g("frame_shift_max", str(base.frame_shift_max))),
        mixup_alpha=float(g("mixup_alpha", str(base.mixup_alpha))),
        noise_sigma=float(g("noise_sigma", str(base.noise_sigma))),
        filter_aug_bands=_pair(g("filter_aug_bands", "2,5"), int),
        filter_aug_db=_pair(g("filter_aug_db", "-6,6"), float),
        time_mask=_bool(g("time_mask", str(base.time_mask))),
        frame_shift=_bool(g("frame_shift", str(base.frame_shift))),
        mixup=_bool(g("mixup", str(base.mixup))),
        gaussian_noise=_bool(g("gaussian_noise", str(base.gaussian_noise))),
        filter_augment=_bool(g("filter_augment", str(base.filter_augment))),
        apply_prob=float(g("augment_prob", "0.5")),
    )
    return StageConfig(
        stage=stage,
        model=g("model", defaults["model"]),
        width_divisor=int(g("width_divisor", str(defaults["width_divisor"]))),
        n_mels=int(g("n_mels", str(defaults["n_mels"]))),
        epochs=epochs,
        batch_size=int(g("batch_size", "16")),
        lr=float(g("lr", "0.001")),
        ssl=ssl,
        augment=augment,
        loss=g("loss", defaults["loss"]),
        afl=AflConfig(float(g("afl_gamma", "0.625")), float(g("afl_zeta", "1.0"))),
        n_basis=int(g("n_basis", "4")),
        temperature=float(g("temperature", "31")),
        strong_frames=_bool(g("strong_frames", "false")),
        use_pseudo=_bool(g("use_pseudo", "true")),
        pseudo_threshold=float(g("pseudo_threshold", "0.5")),
        keep_empty_pseudo=_bool(g("keep_empty_pseudo", "true")),
    )


def load_config(path, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Parse one config file or a list of layered files.

    ``overrides`` maps ``section.key`` to a value and wins over every file.
    """
    files = [Path(p) for p in (path if isinstance(path, (list, tuple)) else [path])]
    if not files:
        raise ConfigError("no config file given")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for f in files:
        if not f.exists():
            raise ConfigError(f"config file not found: {f}")
        try:
            cp.read(f)
        except configparser.Error as exc:
            raise ConfigError(f"{f}: {exc}") from None
    path = files[0]
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override must be section.key=value, got {dotted!r}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)
    for s in ("paths", "run", "stage1", "stage2", "postprocess", "psds"):
        if not cp.has_section(s):
            cp.add_section(s)
    base = path.parent
    paths = cp["paths"]

    def resolve(key, required=False):
        v = paths.get(key, "").strip()
        if not v:
            if required:
                raise ConfigError(f"[paths] {key} is required")
            return None
        p = Path(v)
        return p if p.is_absolute() else (base / p)

    out_dir = os.environ.get(OUTPUT_ENV) or paths.get("output_dir", "out")
    out = Path(out_dir)
    if not out.is_absolute():
        out = base / out
    classes = [c.strip() for c in cp["run"].get("classes", ",".join(DESED_CLASSES)).split(",") if c.strip()]
    overrides_w: Dict[str, int] = {}
    for item in cp["postprocess"].get("windows", "").split(","):
        if item.strip():
            name, _, w = item.partition(":")
            overrides_w[name.strip()] = int(w)
    cfg = RunConfig(
        audio_root=resolve("audio_root", required=True),
        manifests={k: resolve(k) for k in ("strong", "weak", "unlabeled", "validation")},
        output_dir=out,
        classes=classes,
        stage1=_stage(cp["stage1"], 1),
        stage2=_stage(cp["stage2"], 2),
        seed=int(cp["run"].get("seed", "0")),
        precision=cp["run"].get("precision", "float32"),
        feature_cache=resolve("feature_cache"),
        pretrained_stage1=resolve("pretrained_stage1"),
        beta=float(cp["postprocess"].get("beta", str(1.0 / 3.0))),
        window_overrides=overrides_w,
        fixed_window=int(cp["postprocess"]["fixed_window"]) if cp["postprocess"].get("fixed_window") else None,
        psds_thresholds=int(cp["psds"].get("thresholds", "50")),
        e_max=float(cp["psds"].get("e_max", "100")),
        deterministic=_bool(cp["run"].get("deterministic", "true")),
    )
    if cfg.precision not in ("float32", "float64"):
        raise ConfigError(f"[run] precision must be float32 or float64, got {cfg.precision!r}")
    if not cfg.audio_root.exists():
        raise ConfigError(f"audio_root does not exist: {cfg.audio_root}")
    for k, p in cfg.manifests.items():
        if p is not None and not p.exists():
            raise ConfigError(f"[paths] {k} manifest does not exist: {p}")
    return cfg


def write_config(path, values: Dict[str, Dict[str, object]]) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for section, items in values.items():
        cp[section] = {k: str(v) for k, v in items.items()}
    with open(path, "w") as fh:
        cp.write(fh)
