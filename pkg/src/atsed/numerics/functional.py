"""Differentiable operations on :class:`~atsed.numerics.tensor.Tensor`.

Elementwise ops broadcast like numpy; their backward passes sum gradients
back down to the operand shapes. Convolution, pooling, batch norm and the
GRU are fused ops with hand-written backward passes.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_node, get_default_dtype


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _pair(v):
    if isinstance(v, int):
        return (v, v)
    v = tuple(int(a) for a in v)
    if len(v) != 2:
        raise ValueError(f"expected a pair, got {v}")
    return v


# -- elementwise arithmetic -----------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a.data / b.data, b.shape)

    return make_node(a.data / b.data, (a, b), bw, "div")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return make_node(a.data ** exponent, (a,), bw, "power")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), bw, "matmul")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
    return make_node(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input is inside the range."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return make_node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# -- reductions and shape ops ---------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return sum(a, axes, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def index(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return make_node(a.data[idx], (a,), bw, "index")


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return make_node(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),), "flip")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), bw, "softmax")


def dropout(a, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    a = as_tensor(a)
    if not training or p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return make_node(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def stop_gradient(a) -> Tensor:
    return Tensor(as_tensor(a).data)


# -- convolution and pooling ----------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv2d(x, weight, bias=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-D cross-correlation.

    ``x`` is ``C_in x F x T`` or ``N x C_in x F x T``; ``weight`` is
    ``C_out x C_in x kH x kW``. Returns ``[N x] C_out x F' x T'``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects input [N,]C,F,T and 4-d kernels, got {x.shape} and {weight.shape}")
    n, c, f, t = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input has {c} channels, kernels expect {ci}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if kh > f + 2 * ph or kw > t + 2 * pw:
        raise ValueError(f"conv2d kernel {kh}x{kw} larger than padded input {f + 2 * ph}x{t + 2 * pw}")
    fo = conv_output_size(f, kh, sh, ph)
    to = conv_output_size(t, kw, sw, pw)

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :fo, :to]
    # N, C, kh, kw, fo, to -> N, C*kh*kw, fo*to
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, fo * to)
    w2 = weight.data.reshape(o, c * kh * kw)
    out = np.matmul(w2, cols).reshape(n, o, fo, to)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape(1, o, 1, 1)
        parents.append(bias)

    def bw(g):
        g2 = g.reshape(n, o, fo * to)
        gw = None
        if weight.requires_grad:
            gw = np.einsum("nol,nkl->ok", g2, cols, optimize=True).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2).reshape(n, c, kh, kw, fo, to)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * fo:sh, j:j + sw * to:sw] += dcols[:, :, i, j]
            gx = gxp[:, :, ph:ph + f, pw:pw + t]
            if ph or pw:
                gx = np.ascontiguousarray(gx)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    result = make_node(out, parents, bw, "conv2d")
    if squeeze:
        result = reshape(result, result.shape[1:])
    return result


def avg_pool2d(x, window) -> Tensor:
    """Non-overlapping mean pooling over the last two axes; trailing remainders are dropped."""
    x = as_tensor(x)
    wf, wt = _pair(window)
    f, t = x.shape[-2:]
    if wf > f or wt > t:
        raise ValueError(f"pool window {wf}x{wt} larger than input {f}x{t}")
    fo, to = f // wf, t // wt
    lead = x.shape[:-2]
    trimmed = x.data[..., :fo * wf, :to * wt]
    out = trimmed.reshape(lead + (fo, wf, to, wt)).mean(axis=(-3, -1))

    def bw(g):
        gx = np.zeros_like(x.data)
        spread = np.broadcast_to(g[..., :, None, :, None] / (wf * wt), lead + (fo, wf, to, wt))
        gx[..., :fo * wf, :to * wt] = spread.reshape(lead + (fo * wf, to * wt))
        return (gx,)

    return make_node(out, (x,), bw, "avg_pool2d")


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over all axes except axis 1.

    In training mode batch statistics are used and the running buffers are
    updated in place; otherwise the running statistics are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    g_ = gamma.data.reshape(bshape)
    if training:
        m = x.data.size // x.shape[1]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        m = None
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * g_ + beta.data.reshape(bshape)

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g_
        if training:
            s1 = dxhat.sum(axis=axes).reshape(bshape)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
            dx = inv.reshape(bshape) / m * (m * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv.reshape(bshape)
        return dx, dgamma, dbeta

    return make_node(out, (x, gamma, beta), bw, "batch_norm")


# -- recurrent --------------------------------------------------------------

def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru(x, w_ih, w_hh, b_ih, b_hh, reverse: bool = False) -> Tensor:
    """Single-direction GRU over ``N x T x D`` input, zero initial state.

    Gate rows are ordered (reset, update, candidate)::

        r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
        z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
        n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
        h' = (1 - z) * n + z * h
    """
    x, w_ih, w_hh, b_ih, b_hh = (as_tensor(v) for v in (x, w_ih, w_hh, b_ih, b_hh))
    if x.ndim != 3:
        raise ValueError(f"gru expects N x T x D input, got {x.shape}")
    n_, t_, d_ = x.shape
    h3 = w_ih.shape[0]
    hid = h3 // 3
    if w_ih.shape != (h3, d_) or w_hh.shape != (h3, hid):
        raise ValueError(f"gru weight shapes {w_ih.shape}, {w_hh.shape} do not fit input dim {d_}")
    if t_ < 1:
        raise ValueError("gru needs at least one time step")
    dtype = x.data.dtype
    gi = x.data @ w_ih.data.T + b_ih.data  # N, T, 3H
    steps = range(t_ - 1, -1, -1) if reverse else range(t_)
    out = np.zeros((n_, t_, hid), dtype=dtype)
    rs, zs, ns, ghn, hprev = (np.zeros((t_, n_, hid), dtype=dtype) for _ in range(5))
    h = np.zeros((n_, hid), dtype=dtype)
    whT = w_hh.data.T
    for t in steps:
        gh = h @ whT + b_hh.data
        gt = gi[:, t]
        r = _sig(gt[:, :hid] + gh[:, :hid])
        z = _sig(gt[:, hid:2 * hid] + gh[:, hid:2 * hid])
        cand = np.tanh(gt[:, 2 * hid:] + r * gh[:, 2 * hid:])
        hprev[t] = h
        rs[t], zs[t], ns[t], ghn[t] = r, z, cand, gh[:, 2 * hid:]
        h = (1.0 - z) * cand + z * h
        out[:, t] = h

    def bw(g):
        dgi = np.zeros_like(gi)
        dw_hh = np.zeros_like(w_hh.data)
        db_hh = np.zeros_like(b_hh.data)
        dh = np.zeros((n_, hid), dtype=dtype)
        for t in reversed(list(steps)):
            dht = g[:, t] + dh
            r, z, cand = rs[t], zs[t], ns[t]
            dcand = dht * (1.0 - z)
            dz = dht * (hprev[t] - cand)
            da_n = dcand * (1.0 - cand * cand)
            dr = da_n * ghn[t]
            da_r = dr * r * (1.0 - r)
            da_z = dz * z * (1.0 - z)
            dgh = np.concatenate([da_r, da_z, da_n * r], axis=1)
            dgi[:, t] = np.concatenate([da_r, da_z, da_n], axis=1)
            dw_hh += dgh.T @ hprev[t]
            db_hh += dgh.sum(axis=0)
            dh = dht * z + dgh @ w_hh.data
        dx = dgi @ w_ih.data
        flat = dgi.reshape(-1, h3)
        dw_ih = flat.T @ x.data.reshape(-1, d_)
        db_ih = flat.sum(axis=0)
        return dx, dw_ih, dw_hh, db_ih, db_hh

    return make_node(out, (x, w_ih, w_hh, b_ih, b_hh), bw, "gru")


def bigru(x, forward_params, backward_params) -> Tensor:
    """Bidirectional GRU: ``N x T x D`` (or ``T x D``) -> ``N x T x 2H``.

    Each params argument is a ``(w_ih, w_hh, b_ih, b_hh)`` tuple.
    """
    x = as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    fwd = gru(x, *forward_params)
    bwd = gru(x, *backward_params, reverse=True)
    out = concat([fwd, bwd], axis=-1)
    return reshape(out, out.shape[1:]) if squeeze else out


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=get_default_dtype()))
