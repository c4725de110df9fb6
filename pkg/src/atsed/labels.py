"""Manifests, weak/strong label handling, batching and pseudo-labels.

Manifests follow the DESED tab-separated conventions:

* strong: ``filename  onset  offset  event_label``
* weak: ``filename  event_labels`` (comma-joined)
* unlabeled: ``filename``
"""

from __future__ import annotations

import csv
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

CLIP_SECONDS = 10.0

DESED_CLASSES = (
    "Alarm_bell_ringing", "Blender", "Cat", "Dishes", "Dog",
    "Electric_shaver_toothbrush", "Frying", "Running_water", "Speech", "Vacuum_cleaner",
)

Event = Tuple[str, float, float]


class ManifestError(ValueError):
    pass


@dataclass
class EventList:
    clip_id: str
    events: List[Event] = field(default_factory=list)

    def validate(self, vocabulary: Sequence[str] | None = None) -> None:
        for cls, on, off in self.events:
            if not (0.0 <= on < off <= CLIP_SECONDS + 1e-9):
                raise ValueError(f"{self.clip_id}: invalid event ({cls}, {on}, {off})")
            if vocabulary is not None and cls not in vocabulary:
                raise ValueError(f"{self.clip_id}: class {cls!r} not in vocabulary")


@dataclass
class WeakLabel:
    clip_id: str
    classes: frozenset = frozenset()

    def multi_hot(self, vocabulary: Sequence[str]) -> np.ndarray:
        return np.array([c in self.classes for c in vocabulary], dtype=np.float64)


@dataclass(frozen=True)
class BatchPlan:
    n_strong: int
    n_weak: int
    n_unlabeled: int

    @property
    def size(self) -> int:
        return self.n_strong + self.n_weak + self.n_unlabeled

    @classmethod
    def from_batch_size(cls, batch_size: int) -> "BatchPlan":
        """Quarter strong, quarter weak, half unlabeled."""
        q = batch_size // 4
        return cls(q, q, batch_size - 2 * q)


@dataclass(frozen=True)
class PseudoLabelConfig:
    threshold: float = 0.5
    keep_empty: bool = True

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"pseudo-label threshold must be in (0, 1), got {self.threshold}")


# -- manifests --------------------------------------------------------------

_HEADERS = {
    "strong": ["filename", "onset", "offset", "event_label"],
    "weak": ["filename", "event_labels"],
    "unlabeled": ["filename"],
}


def parse_manifest(path, kind: str, vocabulary: Sequence[str] | None = None):
    """Load a manifest.

    Returns an ordered ``{clip_id: EventList}`` for strong manifests,
    ``{clip_id: WeakLabel}`` for weak ones and a list of clip ids for
    unlabeled ones. Errors carry the 1-based line number.
    """
    if kind not in _HEADERS:
        raise ValueError(f"unknown manifest kind {kind!r}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows:
        raise ManifestError(f"{path}: empty manifest")
    header = [h.strip() for h in rows[0]]
    if header != _HEADERS[kind]:
        raise ManifestError(f"{path}:1: expected header {_HEADERS[kind]}, got {header}")
    width = len(header)
    vocab = set(vocabulary) if vocabulary is not None else None

    if kind == "unlabeled":
        out_u: List[str] = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != 1 or not row[0]:
                raise ManifestError(f"{path}:{lineno}: expected 1 column, got {len(row)}")
            out_u.append(row[0])
        return out_u

    out: "OrderedDict[str, object]" = OrderedDict()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if kind == "strong" and len(row) == 4 and row[1] == "" and row[2] == "" and row[3] == "":
            out.setdefault(row[0], EventList(row[0]))  # clip with no events
            continue
        if len(row) != width:
            raise ManifestError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        name = row[0]
        if kind == "strong":
            try:
                on, off = float(row[1]), float(row[2])
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: onset/offset not numeric") from exc
            cls = row[3]
            if not on < off:
                raise ManifestError(f"{path}:{lineno}: onset {on} >= offset {off}")
            if on < 0 or off > CLIP_SECONDS + 1e-9:
                raise ManifestError(f"{path}:{lineno}: event outside [0, {CLIP_SECONDS}] s")
            if vocab is not None and cls not in vocab:
                raise ManifestError(f"{path}:{lineno}: unknown class {cls!r}")
            out.setdefault(name, EventList(name)).events.append((cls, on, off))
        else:
            classes = frozenset(c for c in row[1].split(",") if c)
            if vocab is not None and not classes <= vocab:
                raise ManifestError(f"{path}:{lineno}: unknown class(es) {sorted(classes - vocab)}")
            if name in out:
                raise ManifestError(f"{path}:{lineno}: duplicate clip {name!r}")
            out[name] = WeakLabel(name, classes)
    return out


def write_strong_manifest(path, event_lists: Iterable[EventList]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(_HEADERS["strong"])
        for el in event_lists:
            if not el.events:
                w.writerow([el.clip_id, "", "", ""])
            for cls, on, off in el.events:
                w.writerow([el.clip_id, f"{on:.3f}", f"{off:.3f}", cls])


def write_weak_manifest(path, labels: Iterable[WeakLabel]) -> None:
    """Also the pseudo-label output format, so Stage-2 reads it unchanged."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(_HEADERS["weak"])
        for lab in labels:
            w.writerow([lab.clip_id, ",".join(sorted(lab.classes))])


def write_unlabeled_manifest(path, clip_ids: Iterable[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(_HEADERS["unlabeled"])
        for c in clip_ids:
            w.writerow([c])


# -- label transforms ---------------------------------------------------------

def weakify(e: EventList) -> WeakLabel:
    """Drop timestamps, keep the set of event classes."""
    return WeakLabel(e.clip_id, frozenset(cls for cls, _, _ in e.events))


def frame_targets(e: EventList, n_frames: int, frame_hop_s: float,
                  vocabulary: Sequence[str]) -> np.ndarray:
    """Binary ``n_frames x K`` matrix; frame ``i`` is active when its centre
    ``(i + 0.5) * hop`` lies in ``[onset, offset)``."""
    if frame_hop_s <= 0:
        raise ValueError("frame_hop_s must be positive")
    index = {c: k for k, c in enumerate(vocabulary)}
    out = np.zeros((n_frames, len(vocabulary)))
    centres = (np.arange(n_frames) + 0.5) * frame_hop_s
    for cls, on, off in e.events:
        out[(centres >= on) & (centres < off), index[cls]] = 1.0
    return out


def pseudo_labels(clip_ids: Sequence[str], probs: np.ndarray, vocabulary: Sequence[str],
                  cfg: PseudoLabelConfig = PseudoLabelConfig()) -> List[WeakLabel]:
    """Threshold clip-level posteriors (inclusive) into weak labels."""
    probs = np.asarray(probs)
    if probs.shape != (len(clip_ids), len(vocabulary)):
        raise ValueError(f"posteriors shape {probs.shape} != ({len(clip_ids)}, {len(vocabulary)})")
    out = []
    for cid, row in zip(clip_ids, probs):
        classes = frozenset(c for c, p in zip(vocabulary, row) if p >= cfg.threshold)
        if classes or cfg.keep_empty:
            out.append(WeakLabel(cid, classes))
    return out


# -- batching ---------------------------------------------------------------

SOURCES = ("strong", "weak", "unlabeled")


class BatchComposer:
    """Draws fixed-proportion batches from three sources.

    Each source is traversed in a fresh random permutation (sampling without
    replacement); when it is exhausted a new permutation starts. A source
    that is empty has its share redistributed to the others in proportion.
    """

    def __init__(self, sizes: Mapping[str, int], plan: BatchPlan, rng: np.random.Generator):
        self.sizes = {s: int(sizes.get(s, 0)) for s in SOURCES}
        if not any(self.sizes.values()):
            raise ValueError("all data sources are empty")
        self.plan = _fallback_plan(plan, self.sizes)
        self.rng = rng
        self._perm: Dict[str, np.ndarray] = {}
        self._pos: Dict[str, int] = {}

    def counts(self) -> Dict[str, int]:
        return {"strong": self.plan.n_strong, "weak": self.plan.n_weak, "unlabeled": self.plan.n_unlabeled}

    def steps_per_epoch(self) -> int:
        return max(-(-self.sizes[s] // n) for s, n in self.counts().items() if n > 0)

    def _draw(self, source: str, k: int) -> List[int]:
        out: List[int] = []
        while len(out) < k:
            perm = self._perm.get(source)
            pos = self._pos.get(source, 0)
            if perm is None or pos >= len(perm):
                perm = self.rng.permutation(self.sizes[source])
                pos = 0
                self._perm[source] = perm
            take = min(k - len(out), len(perm) - pos)
            out.extend(int(i) for i in perm[pos:pos + take])
            self._pos[source] = pos + take
        return out

    def next_batch(self) -> List[Tuple[str, int]]:
        """Return ``(source, index)`` pairs, strong first, then weak, then unlabeled."""
        batch = []
        for source, k in self.counts().items():
            batch.extend((source, i) for i in self._draw(source, k))
        return batch


def _fallback_plan(plan: BatchPlan, sizes: Mapping[str, int]) -> BatchPlan:
    counts = {"strong": plan.n_strong, "weak": plan.n_weak, "unlabeled": plan.n_unlabeled}
    empty = [s for s in SOURCES if sizes[s] == 0 and counts[s] > 0]
    if not empty:
        return plan
    total = plan.size
    alive = {s: counts[s] for s in SOURCES if sizes[s] > 0}
    if sum(alive.values()) == 0:
        alive = {s: 1 for s in SOURCES if sizes[s] > 0}
    weight = sum(alive.values())
    new = {s: 0 for s in SOURCES}
    for s, c in alive.items():
        new[s] = total * c // weight
    # remainder goes to the largest share, ties by source order
    rest = total - sum(new.values())
    order = sorted(alive, key=lambda s: (-alive[s], SOURCES.index(s)))
    for i in range(rest):
        new[order[i % len(order)]] += 1
    return BatchPlan(new["strong"], new["weak"], new["unlabeled"])


def compose_batch(sizes: Mapping[str, int], plan: BatchPlan, rng: np.random.Generator):
    """One batch of ``(source, index)`` pairs; see :class:`BatchComposer`."""
    return BatchComposer(sizes, plan, rng).next_batch()
