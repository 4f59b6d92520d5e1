"""Neural building blocks on top of the tensor tape."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import DimensionError
from .tensor import Tensor, _record

INIT_SCALE = 0.1


def uniform_param(rng, shape, name=None, scale=INIT_SCALE):
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name=None):
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class LstmWeights:
    """Weights of one LSTM layer; gate blocks are ordered input, forget, output, candidate."""

    w_ih: Tensor  # d_in x 4d
    w_hh: Tensor  # d x 4d
    bias: Tensor  # 4d

    @classmethod
    def init(cls, rng, d_in, d, prefix=""):
        return cls(uniform_param(rng, (d_in, 4 * d), prefix + "w_ih"),
                   uniform_param(rng, (d, 4 * d), prefix + "w_hh"),
                   zeros_param((4 * d,), prefix + "bias"))

    @property
    def hidden_dim(self):
        return self.w_hh.shape[0]

    def tensors(self):
        return [self.w_ih, self.w_hh, self.bias]


def lstm_cell(x_in, h_prev, c_prev, weights: LstmWeights):
    """One LSTM step; returns ``(h, c)``.

    Works on single vectors (``d_in``) or batches (``B x d_in``). Recorded
    on the tape as one fused operation.
    """
    w_ih, w_hh, b = weights.w_ih, weights.w_hh, weights.bias
    d = w_hh.shape[0]
    if (x_in.shape[-1] != w_ih.shape[0] or w_ih.shape[1] != 4 * d
            or w_hh.shape != (d, 4 * d) or b.shape != (4 * d,)
            or h_prev.shape[-1] != d or c_prev.shape[-1] != d):
        raise DimensionError(
            f"lstm_cell: x {x_in.shape}, h {h_prev.shape}, c {c_prev.shape} do not fit "
            f"w_ih {w_ih.shape}, w_hh {w_hh.shape}, bias {b.shape}")
    vector = x_in.ndim == 1
    x = np.atleast_2d(x_in.data)
    h = np.atleast_2d(h_prev.data)
    c = np.atleast_2d(c_prev.data)
    a = x @ w_ih.data + h @ w_hh.data + b.data
    s = expit(a[:, :3 * d])
    i, f, o = s[:, :d], s[:, d:2 * d], s[:, 2 * d:]
    g = np.tanh(a[:, 3 * d:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    if vector:
        h_out, c_out = Tensor._wrap(h_new[0]), Tensor._wrap(c_new[0])
    else:
        h_out, c_out = Tensor._wrap(h_new), Tensor._wrap(c_new)

    def _bw(gh, gc):
        gh = np.atleast_2d(gh)
        gc = np.atleast_2d(gc)
        dc = gc + gh * o * (1.0 - tc * tc)
        da = np.concatenate([dc * g * i * (1.0 - i),
                             dc * c * f * (1.0 - f),
                             gh * tc * o * (1.0 - o),
                             dc * i * (1.0 - g * g)], axis=1)
        dx = da @ w_ih.data.T
        dh = da @ w_hh.data.T
        dcp = dc * f
        if vector:
            dx, dh, dcp = dx[0], dh[0], dcp[0]
        return dx, dh, dcp, x.T @ da, h.T @ da, da.sum(axis=0)

    _record((h_out, c_out), (x_in, h_prev, c_prev, w_ih, w_hh, b), _bw, multi=True)
    return h_out, c_out


def log_softmax_np(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def label_smoothed_ce(logits, targets, smoothing=0.0, pad_id=0):
    """Mean label-smoothed cross-entropy over non-padding rows.

    The smoothed target is ``(1 - smoothing) * onehot + smoothing / V``.
    Rows whose target equals ``pad_id`` are excluded (pass ``None`` to keep
    every row).
    """
    if logits.ndim != 2:
        raise DimensionError(f"label_smoothed_ce expects n x V logits, got {logits.shape}")
    n, V = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != n:
        raise DimensionError(f"{n} logit rows but {targets.shape[0]} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise IndexError(f"target id out of range [0, {V})")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {smoothing}")
    valid = np.ones(n, dtype=bool) if pad_id is None else targets != pad_id
    n_valid = max(int(valid.sum()), 1)
    logp = log_softmax_np(logits.data)
    q = np.full((n, V), smoothing / V)
    q[np.arange(n), targets] += 1.0 - smoothing
    rows = -(q * logp).sum(axis=1)
    out = Tensor._wrap(np.asarray((rows * valid).sum() / n_valid))
    w = valid[:, None] / n_valid

    def _bw(g):
        return ((np.exp(logp) - q) * w * g,)

    _record((out,), (logits,), _bw)
    return out


def dropout(x, rate, training, rng):
    """Inverted dropout: zero with probability ``rate``, rescale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor._wrap(x.data * mask)
    _record((out,), (x,), lambda g: (g * mask,))
    return out
