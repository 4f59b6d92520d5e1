"""Adam with linear warm-up / inverse-square-root schedule and global-norm clipping."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.98)
    eps: float = 1e-9
    warmup_steps: int = 0
    warmup_init_lr: float = 1e-7
    lr_scale: float = 1.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def copy(self):
        return copy.deepcopy(self)


def scheduled_lr(state: AdamState, step: int) -> float:
    """Learning rate for the 1-based update ``step``.

    Linear from ``warmup_init_lr`` to ``lr`` over ``warmup_steps``, then
    ``lr * sqrt(warmup_steps / step)``; the whole curve is multiplied by
    ``lr_scale``.
    """
    w = state.warmup_steps
    if w <= 0:
        rate = state.lr
    elif step <= w:
        rate = state.warmup_init_lr + (state.lr - state.warmup_init_lr) * step / w
    else:
        rate = state.lr * math.sqrt(w / step)
    return rate * state.lr_scale


def clip_grad_norm(grads, max_norm):
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; return the norm."""
    total = math.sqrt(float(np.sum([np.vdot(g, g) for g in grads])))
    if max_norm is not None and total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


def adam_step(params, grads, state: AdamState):
    """Apply one bias-corrected Adam update to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.betas
    lr = scheduled_lr(state, t)
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
