"""CNN-14-style audio-tagging backbone used in Stage 1."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np

from ..numerics import functional as F
from ..numerics.nn import BatchNorm2d, BiGRU, Conv2d, Dropout, Linear, Module
from ..numerics.tensor import as_tensor
from .crnn import Posteriors
from .pooling import attention_pool, exp_softmax_pool

FULL_CHANNELS = [64, 128, 256, 512, 1024, 2048]


@dataclass
class AtBackboneConfig:
    n_mels: int = 64
    channels: List[int] = field(default_factory=lambda: list(FULL_CHANNELS))
    convs_per_block: int = 2
    kernel: int = 3
    pool: tuple = (2, 2)
    gru_hidden: int = 1024
    gru_layers: int = 2
    n_classes: int = 10
    dropout: float = 0.2
    clip_pooling: str = "attention"
    inference_pooling: str = "exp_softmax"

    def __post_init__(self):
        self.pool = tuple(self.pool)
        if len(self.channels) != 6 or self.convs_per_block != 2:
            raise ValueError("the AT backbone has 6 blocks of 2 convolutions")

    @classmethod
    def desk(cls, width_divisor: int = 8, **kw) -> "AtBackboneConfig":
        return cls(channels=[c // width_divisor for c in FULL_CHANNELS],
                   gru_hidden=1024 // width_divisor, **kw)

    @property
    def time_downsample(self) -> int:
        return self.pool[1] ** len(self.channels)


class AtBlock(Module):
    def __init__(self, c_in, c_out, cfg: AtBackboneConfig, rng):
        super().__init__()
        self.conv1 = Conv2d(c_in, c_out, cfg.kernel, rng, padding=cfg.kernel // 2, bias=False)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, cfg.kernel, rng, padding=cfg.kernel // 2, bias=False)
        self.bn2 = BatchNorm2d(c_out)
        self.pool = cfg.pool
        self.drop = Dropout(cfg.dropout, rng)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        return self.drop(F.avg_pool2d(x, self.pool))


class ATBackbone(Module):
    """6 x (2 x conv-BN-ReLU, 2x2 avg-pool) -> frequency mean -> BiGRU -> heads.

    During training the clip head is attention pooling; in eval mode the
    clip output uses ``cfg.inference_pooling`` (exponential softmax by default).
    """

    def __init__(self, cfg: AtBackboneConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        chans = [1] + list(cfg.channels)
        self.blocks = [AtBlock(chans[i], chans[i + 1], cfg, rng) for i in range(6)]
        self.rnn = BiGRU(chans[-1], cfg.gru_hidden, cfg.gru_layers, rng)
        self.drop = Dropout(cfg.dropout, rng)
        self.dense = Linear(2 * cfg.gru_hidden, cfg.n_classes, rng)
        self.dense_att = Linear(2 * cfg.gru_hidden, cfg.n_classes, rng)

    def architecture(self) -> dict:
        return {"kind": "at", **asdict(self.cfg)}

    def forward(self, x) -> Posteriors:
        x = as_tensor(x)
        if x.ndim == 2:
            x = F.reshape(x, (1,) + x.shape)
        if x.shape[-1] != self.cfg.n_mels:
            raise ValueError(f"model expects {self.cfg.n_mels} mel bins, got {x.shape[-1]}")
        n, t, m = x.shape
        h = F.reshape(F.transpose(x, (0, 2, 1)), (n, 1, m, t))
        for block in self.blocks:
            h = block(h)
        h = F.transpose(F.mean(h, axis=2), (0, 2, 1))  # N x T' x C
        h = self.drop(self.rnn(h))
        logits = self.dense(h)
        frame = F.sigmoid(logits)
        mode = self.cfg.clip_pooling if self.training else self.cfg.inference_pooling
        if mode == "exp_softmax":
            clip = exp_softmax_pool(frame)
        else:
            clip = attention_pool(self.dense_att(h), frame)
        return Posteriors(frame, clip, logits)
