"""Baseline CRNN and its frequency-dynamic variant (FDY-CRNN)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Tuple

import numpy as np

from ..numerics import functional as F
from ..numerics.nn import BatchNorm2d, BiGRU, Conv2d, Dropout, Linear, Module, Parameter, _uniform
from ..numerics.tensor import Tensor, as_tensor
from .pooling import attention_pool, exp_softmax_pool


@dataclass
class Posteriors:
    frame: Tensor  # N x T' x K
    clip: Tensor  # N x K
    frame_logits: Tensor | None = None


@dataclass
class CrnnConfig:
    n_mels: int = 128
    conv_filters: List[int] = field(default_factory=lambda: [16, 32, 64, 128, 128, 128, 128])
    kernel: int = 3
    pool: List[Tuple[int, int]] = field(
        default_factory=lambda: [(2, 2), (2, 2), (2, 1), (2, 1), (2, 1), (2, 1), (2, 1)])
    gru_hidden: int = 128
    gru_layers: int = 2
    n_classes: int = 10
    leaky_slope: float = 0.01
    dropout: float = 0.5
    clip_pooling: str = "attention"  # or "exp_softmax"
    # frequency-dynamic convolution
    fdy: bool = False
    n_basis: int = 4
    temperature: float = 31.0
    attention_ratio: float = 0.25

    def __post_init__(self):
        self.pool = [tuple(p) for p in self.pool]
        if len(self.pool) != len(self.conv_filters):
            raise ValueError("pool and conv_filters must have one entry per block")
        freq = int(np.prod([p[0] for p in self.pool]))
        if freq != self.n_mels:
            raise ValueError(f"frequency pooling product {freq} must equal n_mels {self.n_mels}")
        if self.n_basis < 1:
            raise ValueError("n_basis must be >= 1")

    @property
    def time_downsample(self) -> int:
        return int(np.prod([p[1] for p in self.pool]))

    def scaled(self, divisor: int) -> "CrnnConfig":
        """Same skeleton with channel and GRU widths divided by ``divisor``."""
        d = asdict(self)
        d["conv_filters"] = [max(1, c // divisor) for c in self.conv_filters]
        d["gru_hidden"] = max(1, self.gru_hidden // divisor)
        return CrnnConfig(**d)


class FdyConv2d(Module):
    """Convolution whose kernel is a per-frequency mixture of basis kernels.

    Attention: average over time -> per-frequency channel descriptor ->
    two-layer MLP -> softmax(logits / temperature) over the basis.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, n_basis: int, temperature: float,
                 rng: np.random.Generator, attention_ratio: float = 0.25):
        super().__init__()
        bound = 1.0 / np.sqrt(c_in * kernel * kernel)
        self.weight = Parameter(_uniform(rng, bound, (n_basis, c_out, c_in, kernel, kernel)))
        self.bias = Parameter(_uniform(rng, bound, (n_basis, c_out)))
        hidden = max(int(c_in * attention_ratio), 4)
        self.att1 = Linear(c_in, hidden, rng)
        self.att2 = Linear(hidden, n_basis, rng)
        self.n_basis, self.c_out, self.kernel, self.temperature = n_basis, c_out, kernel, temperature

    def attention(self, x) -> Tensor:
        """``N x F x K_b`` simplex weights for an ``N x C x F x T`` input."""
        desc = F.transpose(F.mean(x, axis=3), (0, 2, 1))
        logits = self.att2(F.relu(self.att1(desc)))
        return F.softmax(logits * (1.0 / self.temperature), axis=-1)

    def forward(self, x, weights: Tensor | None = None):
        x = as_tensor(x)
        n, _, f, t = x.shape
        kb, o, k = self.n_basis, self.c_out, self.kernel
        if weights is None:
            weights = self.attention(x)
        w = F.reshape(self.weight, (kb * o,) + self.weight.shape[2:])
        b = F.reshape(self.bias, (kb * o,))
        y = F.conv2d(x, w, b, padding=(k // 2, k // 2))
        y = F.reshape(y, (n, kb, o, f, t))
        a = F.reshape(F.transpose(weights, (0, 2, 1)), (n, kb, 1, f, 1))
        return F.sum(y * a, axis=1)


def fdy_conv(x, basis, bias, attention_weights):
    """Functional form: ``out(f) = sum_k w_k(f) conv2d_k(x)`` at frequency row ``f``.

    ``basis`` is ``K_b x C_out x C_in x kH x kW``, ``attention_weights`` is
    ``N x F x K_b``.
    """
    x, basis, bias = as_tensor(x), as_tensor(basis), as_tensor(bias)
    kb, o = basis.shape[:2]
    n, _, f, t = x.shape
    k = basis.shape[-1]
    y = F.conv2d(x, F.reshape(basis, (kb * o,) + basis.shape[2:]), F.reshape(bias, (kb * o,)),
                 padding=(k // 2, k // 2))
    y = F.reshape(y, (n, kb, o, f, t))
    a = F.reshape(F.transpose(as_tensor(attention_weights), (0, 2, 1)), (n, kb, 1, f, 1))
    return F.sum(y * a, axis=1)


class ConvBlock(Module):
    def __init__(self, c_in, c_out, cfg: CrnnConfig, pool, rng):
        super().__init__()
        if cfg.fdy:
            self.conv = FdyConv2d(c_in, c_out, cfg.kernel, cfg.n_basis, cfg.temperature, rng,
                                  cfg.attention_ratio)
        else:
            self.conv = Conv2d(c_in, c_out, cfg.kernel, rng, padding=cfg.kernel // 2)
        self.bn = BatchNorm2d(c_out)
        self.pool = pool
        self.slope = cfg.leaky_slope

    def forward(self, x):
        x = F.leaky_relu(self.bn(self.conv(x)), self.slope)
        return F.avg_pool2d(x, self.pool)


class CRNN(Module):
    """7 conv blocks -> 2-layer BiGRU -> frame head + clip pooling.

    Input: ``N x T x M`` log-mels. Output frames: ``T // time_downsample``.
    """

    def __init__(self, cfg: CrnnConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        chans = [1] + list(cfg.conv_filters)
        self.blocks = [ConvBlock(chans[i], chans[i + 1], cfg, cfg.pool[i], rng)
                       for i in range(len(cfg.conv_filters))]
        self.rnn = BiGRU(chans[-1], cfg.gru_hidden, cfg.gru_layers, rng)
        self.drop = Dropout(cfg.dropout, rng)
        self.dense = Linear(2 * cfg.gru_hidden, cfg.n_classes, rng)
        self.dense_att = Linear(2 * cfg.gru_hidden, cfg.n_classes, rng)

    def architecture(self) -> dict:
        return {"kind": "fdy_crnn" if self.cfg.fdy else "crnn", **asdict(self.cfg)}

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
        # N x C x 1 x T' -> N x T' x C
        h = F.transpose(F.reshape(h, (n, h.shape[1], h.shape[3])), (0, 2, 1))
        h = self.drop(self.rnn(h))
        logits = self.dense(h)
        frame = F.sigmoid(logits)
        if self.cfg.clip_pooling == "exp_softmax":
            clip = exp_softmax_pool(frame)
        else:
            clip = attention_pool(self.dense_att(h), frame)
        return Posteriors(frame, clip, logits)


def copy_crnn_into_fdy(fdy: CRNN, crnn: CRNN) -> None:
    """Give every basis kernel of ``fdy`` the matching CRNN conv weights.

    Non-convolution parameters and buffers are copied by name.
    """
    src = crnn.state_dict()
    dst = fdy.state_dict()
    for name, value in dst.items():
        if name in src and src[name].shape == value.shape:
            value[...] = src[name]
        elif name.endswith("conv.weight") or name.endswith("conv.bias"):
            value[...] = src[name][None]
