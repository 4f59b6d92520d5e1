from .tensor import (
    GradTape,
    Tensor,
    add,
    backward,
    concat,
    embedding,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    sigmoid,
    softmax,
    softmax_rows,
    stack,
    sub,
    sum,
    swapaxes,
    tanh,
    unstack,
)
from .nn import LstmWeights, dropout, label_smoothed_ce, log_softmax_np, lstm_cell, uniform_param, zeros_param
from .optim import AdamState, adam_step, clip_grad_norm, scheduled_lr
from .rng import make_rng
