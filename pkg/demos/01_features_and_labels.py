"""From a synthetic clip to model inputs and targets.

Generates a small corpus, extracts log-mel features for one clip, and shows
how one strong annotation becomes a weak label and a frame-target matrix.

    python3 demos/01_features_and_labels.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from atsed.audio import load_audio, logmel
from atsed.labels import frame_targets, parse_manifest, weakify
from atsed.synth import SYNTH_CLASSES, make_corpus

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
paths = make_corpus(work, n_clips=8, seed=0)
strong = parse_manifest(paths["strong"], "strong", SYNTH_CLASSES)
clip_id, events = next(iter(strong.items()))
print(f"corpus in {work}; first strong clip {clip_id}")
for cls, on, off in events.events:
    print(f"  {cls:20s} {on:6.3f} - {off:6.3f} s")

wave = load_audio(work / "audio" / clip_id)
for n_mels in (64, 128):
    feats = logmel(wave, n_mels)
    print(f"log-mel with {n_mels} bands: {feats.frames.shape[0]} frames x {feats.frames.shape[1]} bands, "
          f"hop {feats.frame_hop_s * 1000:.0f} ms")

print("weak label:", sorted(weakify(events).classes))

# the stage-2 network pools time by 4, so one output frame covers 64 ms
targets = frame_targets(events, 156, 0.064, SYNTH_CLASSES)
for k, cls in enumerate(SYNTH_CLASSES):
    row = "".join("#" if v else "." for v in targets[::2, k])
    print(f"{cls:20s} {row}")
print("active frames per class:", dict(zip(SYNTH_CLASSES, targets.sum(0).astype(int).tolist())))
print("feature value range:", np.round([feats.frames.min(), feats.frames.max()], 2).tolist())
