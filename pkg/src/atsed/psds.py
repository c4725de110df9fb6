"""Polyphonic sound detection score with intersection-based matching.

Matching per clip:

* a detection passes the detection tolerance criterion (DTC) when the
  fraction of its duration covered by same-class references is at least
  ``rho_dtc``; failing detections are false positives;
* a reference is a true positive when the fraction of its duration covered
  by DTC-passing same-class detections is at least ``rho_gtc``;
* a DTC-failing detection is a cross-trigger on class ``c'`` when the
  fraction of its duration covered by ``c'`` references is at least
  ``rho_cttc``.

Per class and operating point the TPR and the effective FP rate
(``FP/h + alpha_ct * mean_c' CT/h``) form a ROC staircase. The effective TPR
curve ``max(0, mean_c TPR_c - alpha_st * std_c TPR_c)`` is integrated on
``[0, e_max]`` and normalised by ``e_max``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Mapping, Sequence

import numpy as np

from .labels import CLIP_SECONDS, EventList
from .postprocess import posteriors_to_events

DEFAULT_THRESHOLDS = tuple(float(t) for t in np.round(np.linspace(0.01, 0.99, 50), 4))


@dataclass(frozen=True)
class PsdsConfig:
    rho_dtc: float
    rho_gtc: float
    rho_cttc: float = 0.3
    alpha_st: float = 1.0
    alpha_ct: float = 0.0
    e_max: float = 100.0
    thresholds: tuple = DEFAULT_THRESHOLDS

    def __post_init__(self):
        for name in ("rho_dtc", "rho_gtc", "rho_cttc"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.e_max <= 0:
            raise ValueError("e_max must be positive")
        th = np.asarray(self.thresholds)
        if th.size == 0 or np.any(np.diff(th) <= 0):
            raise ValueError("thresholds must be strictly increasing")


SCENARIO_1 = PsdsConfig(rho_dtc=0.7, rho_gtc=0.7, rho_cttc=0.3, alpha_st=1.0, alpha_ct=0.0, e_max=100.0)
SCENARIO_2 = PsdsConfig(rho_dtc=0.1, rho_gtc=0.1, rho_cttc=0.3, alpha_st=1.0, alpha_ct=0.5, e_max=100.0)
SCENARIOS = {"scenario1": SCENARIO_1, "scenario2": SCENARIO_2}


@dataclass
class ClipCounts:
    tp: np.ndarray  # K, references matched
    fp: np.ndarray  # K, detections failing DTC
    n_ref: np.ndarray  # K
    ct: np.ndarray  # K x K, [detected class, reference class]


@dataclass
class PsdsReport:
    score: float
    scenario: str
    thresholds: List[float]
    classes: List[str]
    tp: List[List[int]]  # per threshold, per class
    fp: List[List[int]]
    ct: List[List[List[int]]]
    n_ref: List[int]
    tpr: List[List[float]]
    efpr: List[List[float]]
    curve_efpr: List[float] = field(default_factory=list)
    curve_etpr: List[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def _arrays(events, index):
    cls = np.array([index[c] for c, _, _ in events], dtype=int)
    on = np.array([e[1] for e in events], dtype=np.float64)
    off = np.array([e[2] for e in events], dtype=np.float64)
    return cls, on, off


def _check(events, clip_id):
    for c, on, off in events:
        if not (off > on and on >= 0):
            raise ValueError(f"{clip_id}: invalid event ({c}, {on}, {off})")


def match_dtc_gtc(detections: Sequence, refs: Sequence, rho_dtc: float, rho_gtc: float,
                  vocabulary: Sequence[str], rho_cttc: float | None = None) -> ClipCounts:
    """Match one clip's detections against its references.

    ``detections`` and ``refs`` are ``(class, onset, offset)`` sequences.
    Cross-triggers are counted only when ``rho_cttc`` is given.
    """
    _check(detections, "detections")
    _check(refs, "references")
    index = {c: k for k, c in enumerate(vocabulary)}
    k = len(vocabulary)
    dc, don, doff = _arrays(detections, index)
    rc, ron, roff = _arrays(refs, index)
    n_ref = np.bincount(rc, minlength=k)
    tp = np.zeros(k, dtype=int)
    fp = np.zeros(k, dtype=int)
    ct = np.zeros((k, k), dtype=int)
    if len(dc) == 0:
        return ClipCounts(tp, fp, n_ref, ct)
    if len(rc) == 0:
        fp = np.bincount(dc, minlength=k)
        return ClipCounts(tp, fp, n_ref, ct)
    inter = np.maximum(0.0, np.minimum(doff[:, None], roff[None, :]) - np.maximum(don[:, None], ron[None, :]))
    same = dc[:, None] == rc[None, :]
    ddur = doff - don
    rdur = roff - ron
    dtc_pass = (inter * same).sum(axis=1) / ddur >= rho_dtc
    gtc = (inter * same * dtc_pass[:, None]).sum(axis=0) / rdur >= rho_gtc
    tp = np.bincount(rc[gtc], minlength=k)
    fp = np.bincount(dc[~dtc_pass], minlength=k)
    if rho_cttc is not None:
        for i in np.flatnonzero(~dtc_pass):
            for other in range(k):
                if other == dc[i]:
                    continue
                cover = inter[i, rc == other].sum() / ddur[i]
                if cover >= rho_cttc:
                    ct[dc[i], other] += 1
    return ClipCounts(tp, fp, n_ref, ct)


def psds_from_operating_points(detections: Sequence[Mapping[str, EventList]],
                               refs: Mapping[str, EventList], vocabulary: Sequence[str],
                               cfg: PsdsConfig, duration_s: float | None = None,
                               scenario: str = "") -> PsdsReport:
    """PSDS over a list of operating points (one ``{clip: EventList}`` per threshold).

    ``refs`` defines the evaluated clips; ``duration_s`` defaults to 10 s per clip.
    """
    clips = list(refs)
    if duration_s is None:
        duration_s = CLIP_SECONDS * len(clips)
    if duration_s <= 0:
        raise ValueError("dataset duration must be positive")
    hours = duration_s / 3600.0
    k = len(vocabulary)
    n_ops = len(detections)
    tp = np.zeros((n_ops, k), dtype=int)
    fp = np.zeros((n_ops, k), dtype=int)
    ct = np.zeros((n_ops, k, k), dtype=int)
    n_ref = np.zeros(k, dtype=int)
    for ci, clip in enumerate(clips):
        ref_events = refs[clip].events
        for oi, op in enumerate(detections):
            det = op.get(clip)
            counts = match_dtc_gtc(det.events if det is not None else [], ref_events, cfg.rho_dtc,
                                   cfg.rho_gtc, vocabulary, cfg.rho_cttc if cfg.alpha_ct > 0 else None)
            tp[oi] += counts.tp
            fp[oi] += counts.fp
            ct[oi] += counts.ct
            if oi == 0:
                n_ref += counts.n_ref
        if n_ops == 0:
            n_ref += match_dtc_gtc([], ref_events, cfg.rho_dtc, cfg.rho_gtc, vocabulary).n_ref
    score, tpr, efpr, xs, ys = _psds_from_counts(tp, fp, ct, n_ref, hours, cfg)
    thresholds = list(cfg.thresholds) if len(cfg.thresholds) == n_ops else list(range(n_ops))
    return PsdsReport(score, scenario, [float(t) for t in thresholds], list(vocabulary), tp.tolist(),
                      fp.tolist(), ct.tolist(), n_ref.tolist(), tpr.tolist(), efpr.tolist(),
                      xs.tolist(), ys.tolist())


def _psds_from_counts(tp, fp, ct, n_ref, hours, cfg: PsdsConfig):
    n_ops, k = tp.shape
    valid = n_ref > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        tpr = np.where(valid[None, :], tp / np.maximum(n_ref, 1)[None, :], 0.0)
    efpr = fp / hours
    if cfg.alpha_ct > 0 and k > 1:
        off_diag = ~np.eye(k, dtype=bool)
        ctr = ct / hours
        mean_ct = np.array([[ctr[o, c][off_diag[c]].mean() for c in range(k)] for o in range(n_ops)])
        efpr = efpr + cfg.alpha_ct * mean_ct
    if not valid.any() or n_ops == 0:
        return 0.0, tpr, efpr, np.array([0.0, cfg.e_max]), np.array([0.0, 0.0])
    xs = np.unique(np.concatenate([[0.0], efpr[:, valid].ravel()]))
    xs = xs[xs <= cfg.e_max]
    per_class = np.zeros((len(xs), k))
    for c in np.flatnonzero(valid):
        # best TPR reachable at eFPR <= x
        order = np.argsort(efpr[:, c], kind="stable")
        fx = efpr[order, c]
        best = np.maximum.accumulate(tpr[order, c])
        pos = np.searchsorted(fx, xs, side="right") - 1
        per_class[:, c] = np.where(pos >= 0, best[np.maximum(pos, 0)], 0.0)
    vals = per_class[:, valid]
    etpr = np.maximum(0.0, vals.mean(axis=1) - cfg.alpha_st * vals.std(axis=1))
    widths = np.diff(np.concatenate([xs, [cfg.e_max]]))
    score = float(np.sum(etpr * widths) / cfg.e_max)
    return min(max(score, 0.0), 1.0), tpr, efpr, xs, etpr


def compute_psds(posteriors: Mapping[str, np.ndarray], refs: Mapping[str, EventList],
                 vocabulary: Sequence[str], windows: Sequence[int], frame_hop_s: float,
                 cfg: PsdsConfig, duration_s: float | None = None, scenario: str = "") -> PsdsReport:
    """PSDS from frame posteriors: threshold, median-filter and decode at every threshold."""
    ops = []
    for thr in cfg.thresholds:
        ops.append({clip: posteriors_to_events(probs, thr, windows, frame_hop_s, clip, vocabulary)
                    for clip, probs in posteriors.items()})
    return psds_from_operating_points(ops, refs, vocabulary, cfg, duration_s, scenario)


def psds_from_events(detections: Mapping[str, EventList], refs: Mapping[str, EventList],
                     vocabulary: Sequence[str], cfg: PsdsConfig, duration_s: float | None = None,
                     scenario: str = "") -> PsdsReport:
    """PSDS of a single fixed detection set (the same events at every threshold)."""
    single = PsdsConfig(cfg.rho_dtc, cfg.rho_gtc, cfg.rho_cttc, cfg.alpha_st, cfg.alpha_ct, cfg.e_max, (0.5,))
    return psds_from_operating_points([dict(detections)], refs, vocabulary, single, duration_s, scenario)


def roc_csv_rows(report: PsdsReport) -> List[List]:
    return [[report.scenario, x, y] for x, y in zip(report.curve_efpr, report.curve_etpr)]
