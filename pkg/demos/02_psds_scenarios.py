"""Why the two PSDS scenarios rank systems differently.

A detection that covers half of a reference fails the strict intersection
criteria of scenario 1 but counts as a hit under the loose ones of
scenario 2. Coarse detections that still name the right class therefore
score well on scenario 2 only.

    python3 demos/02_psds_scenarios.py
"""

from atsed.labels import EventList
from atsed.psds import SCENARIO_1, SCENARIO_2, match_dtc_gtc, psds_from_events

refs = {"a": EventList("a", [("Dog", 2.0, 4.0)])}
half = {"a": EventList("a", [("Dog", 1.0, 3.0)])}
for name, sc in (("scenario 1", SCENARIO_1), ("scenario 2", SCENARIO_2)):
    counts = match_dtc_gtc(half["a"].events, refs["a"].events, sc.rho_dtc, sc.rho_gtc, ["Dog"])
    print(f"{name}: rho_dtc={sc.rho_dtc} rho_gtc={sc.rho_gtc} -> TP {counts.tp[0]} FP {counts.fp[0]}, "
          f"PSDS {psds_from_events(half, refs, ['Dog'], sc).score:.3f}")

# a tagger-like output: one long detection per present class
vocab = ["Dog", "Speech"]
refs = {"b": EventList("b", [("Dog", 1.0, 1.6), ("Dog", 5.0, 5.5), ("Speech", 3.0, 9.0)])}
tagger = {"b": EventList("b", [("Dog", 0.0, 10.0), ("Speech", 0.0, 10.0)])}
precise = {"b": EventList("b", [("Dog", 1.0, 1.6), ("Dog", 5.0, 5.5), ("Speech", 3.2, 8.8)])}
for label, dets in (("clip-level tagger", tagger), ("precise detector", precise)):
    s1 = psds_from_events(dets, refs, vocab, SCENARIO_1).score
    s2 = psds_from_events(dets, refs, vocab, SCENARIO_2).score
    print(f"{label:18s} PSDS1 {s1:.3f}  PSDS2 {s2:.3f}")
