import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from atsed.labels import EventList, frame_targets
from atsed.postprocess import (MedianConfig, adaptive_window, binarize, decode_events, median_durations,
                               median_filter, median_filter_1d, posteriors_to_events)

VOCAB = ["Cat", "Dog", "Speech"]


def test_adaptive_window_examples():
    assert adaptive_window(3.0, 1 / 3, 0.064) == 15
    assert adaptive_window(0.064, 1.0, 0.064) == 1
    assert adaptive_window(0.01, 1 / 3, 0.064) == 1
    with pytest.raises(ValueError):
        adaptive_window(0.0, 1 / 3, 0.064)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 10.0), st.floats(0.05, 2.0), st.sampled_from([0.016, 0.064, 0.128]))
def test_adaptive_window_is_odd_and_near_target(dur, beta, hop):
    w = adaptive_window(dur, beta, hop)
    assert w >= 1 and w % 2 == 1
    assert abs(w - dur * beta / hop) <= 1.5 or w == 1


def test_median_config_windows_and_overrides():
    cfg = MedianConfig({"Cat": 3.0, "Dog": 0.5}, 0.064, {"Cat": 1 / 3, "Dog": 1 / 3}, {"Dog": 7})
    assert cfg.windows(["Cat", "Dog"]) == [15, 7]
    with pytest.raises(ValueError):
        MedianConfig({"Cat": 1.0}, overrides={"Cat": 4}).window("Cat")


def test_median_durations():
    events = [EventList("a", [("Cat", 0, 1), ("Cat", 2, 5)]), EventList("b", [("Cat", 0, 2)])]
    assert median_durations(events, ["Cat", "Dog"]) == {"Cat": 2.0, "Dog": 1.0}


def test_median_filter_examples():
    x = np.array([0, 1, 0, 1, 1, 0], float)
    np.testing.assert_array_equal(median_filter_1d(x, 3), [0, 0, 1, 1, 1, 0])
    np.testing.assert_array_equal(median_filter_1d(x, 1), x)
    ones = np.ones(10)
    # zero padding: the first and last half-window still see a majority of ones
    np.testing.assert_array_equal(median_filter_1d(ones, 5), ones)
    np.testing.assert_array_equal(median_filter_1d(np.ones(3), 7), np.zeros(3))
    with pytest.raises(ValueError):
        median_filter_1d(x, 4)
    with pytest.raises(ValueError):
        median_filter(np.zeros((5, 2)), [3])


def naive_median(x, w):
    h = w // 2
    padded = [0.0] * h + list(x) + [0.0] * h
    return np.array([float(np.median(padded[i:i + w])) for i in range(len(x))])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=60), st.sampled_from([1, 3, 5, 7, 9]))
def test_median_matches_naive(bits, w):
    x = np.array(bits, float)
    np.testing.assert_array_equal(median_filter_1d(x, w), naive_median(x, w))


def runs(x):
    out, start = [], 0
    for i in range(1, len(x) + 1):
        if i == len(x) or x[i] != x[start]:
            out.append(i - start)
            start = i
    return out


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=80), st.sampled_from([3, 5, 7]))
def test_median_idempotent_when_runs_are_long_enough(bits, w):
    y = median_filter_1d(np.array(bits, float), w)
    assume(min(runs(y)) >= w // 2 + 1)
    np.testing.assert_array_equal(median_filter_1d(y, w), y)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=10), st.sampled_from([3, 5, 7]), st.booleans())
def test_long_runs_are_fixed_points(extra, w, first):
    h = w // 2
    x, val = [], float(first)
    for e in extra:
        x += [val] * (h + 1 + e)
        val = 1.0 - val
    x = np.array(x)
    np.testing.assert_array_equal(median_filter_1d(x, w), x)


def test_decode_examples():
    assert decode_events(np.zeros((20, 3)), 0.064, "a", VOCAB).events == []
    f = np.zeros((20, 3))
    f[2:5, 1] = 1
    ev = decode_events(f, 0.064, "a", VOCAB).events
    assert len(ev) == 1 and ev[0][0] == "Dog"
    assert ev[0][1:] == pytest.approx((0.128, 0.320), abs=1e-12)
    full = np.ones((200, 1))
    assert decode_events(full, 0.064, "a", ["Cat"]).events == [("Cat", 0.0, 10.0)]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(VOCAB), st.integers(0, 150), st.integers(1, 5)), max_size=6))
def test_decode_rasterize_roundtrip_on_grid(spec):
    hop, n = 0.064, 156
    raster = np.zeros((n, 3))
    for cls, start, length in spec:
        raster[start:min(start + length, n), VOCAB.index(cls)] = 1
    decoded = decode_events(raster, hop, "a", VOCAB)
    back = frame_targets(decoded, n, hop, VOCAB)
    np.testing.assert_array_equal(back, raster)


def test_threshold_is_inclusive_and_pipeline():
    np.testing.assert_array_equal(binarize(np.array([0.49, 0.5, 0.51]), 0.5), [0, 1, 1])
    probs = np.zeros((30, 2))
    probs[10:20, 0] = 0.8
    probs[15, 0] = 0.1  # a one-frame gap closed by a window of 3
    ev = posteriors_to_events(probs, 0.5, [3, 3], 0.064, "a", ["Cat", "Dog"]).events
    assert [(c, round(on, 6), round(off, 6)) for c, on, off in ev] == [("Cat", 0.64, 1.28)]
