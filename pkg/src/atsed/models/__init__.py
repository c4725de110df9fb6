"""Model architectures and pooling heads."""

from dataclasses import fields

import numpy as np

from .at import ATBackbone, AtBackboneConfig
from .crnn import CRNN, CrnnConfig, FdyConv2d, Posteriors, copy_crnn_into_fdy, fdy_conv
from .pooling import attention_pool, exp_softmax_pool


def build_model(architecture: dict, rng: np.random.Generator | None = None):
    """Instantiate a model from the dict returned by ``model.architecture()``."""
    rng = rng or np.random.default_rng(0)
    arch = dict(architecture)
    kind = arch.pop("kind")
    if kind == "at":
        names = {f.name for f in fields(AtBackboneConfig)}
        return ATBackbone(AtBackboneConfig(**{k: v for k, v in arch.items() if k in names}), rng)
    if kind in ("crnn", "fdy_crnn"):
        names = {f.name for f in fields(CrnnConfig)}
        cfg = CrnnConfig(**{k: v for k, v in arch.items() if k in names})
        cfg.fdy = kind == "fdy_crnn"
        return CRNN(cfg, rng)
    raise ValueError(f"unknown model kind {kind!r}")


__all__ = [
    "ATBackbone", "AtBackboneConfig", "CRNN", "CrnnConfig", "FdyConv2d", "Posteriors",
    "attention_pool", "build_model", "copy_crnn_into_fdy", "exp_softmax_pool", "fdy_conv",
]
