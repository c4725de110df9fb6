"""Clip-level pooling heads over ``N x T x K`` frame outputs (time is axis -2)."""

from __future__ import annotations

from ..numerics import functional as F
from ..numerics.tensor import as_tensor


def attention_pool(frame_logits, frame_probs):
    """``clip[c] = sum_t softmax_t(logits[t, c]) * probs[t, c]``."""
    weights = F.softmax(frame_logits, axis=-2)
    return F.sum(weights * frame_probs, axis=-2)


def exp_softmax_pool(frame_probs):
    """Frame probabilities weighted by ``exp(prob)``:
    ``y = sum_i y_i exp(y_i) / sum_i exp(y_i)``."""
    frame_probs = as_tensor(frame_probs)
    if frame_probs.ndim < 2 or frame_probs.shape[-2] == 0:
        raise ValueError("exp_softmax_pool needs a non-empty time axis")
    return F.sum(F.softmax(frame_probs, axis=-2) * frame_probs, axis=-2)
