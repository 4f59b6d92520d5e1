"""Pieces shared by the measurement model and the translation model.

Configs, unidirectional LSTM stacks, incremental source encoding and the
teacher-forced training loop.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .errors import InputError, TrainingError
from .numerics import (
    AdamState,
    GradTape,
    LstmWeights,
    Tensor,
    adam_step,
    backward,
    clip_grad_norm,
    dropout,
    embedding,
    lstm_cell,
    make_rng,
    stack,
    unstack,
    uniform_param,
)
from .textio import BOS, PAD, batch_iterator, pad_batch

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    emb_dim: int = 64
    hidden_dim: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    dropout: float = 0.2
    label_smoothing: float = 0.1
    lr: float = 0.005
    betas: tuple = (0.9, 0.997)
    eps: float = 1e-9
    warmup_steps: int = 400
    warmup_init_lr: float = 1e-7
    clip_norm: float = 5.0
    max_tokens: int = 1024
    epochs: int = 30
    seed: int = 1

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if min(self.emb_dim, self.hidden_dim, self.enc_layers, self.dec_layers) < 1:
            raise ValueError("dimensions and layer counts must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InputError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
        return cls(**d)

    def architecture(self, src_vocab, tgt_vocab):
        return {"emb_dim": self.emb_dim, "hidden_dim": self.hidden_dim,
                "enc_layers": self.enc_layers, "dec_layers": self.dec_layers,
                "src_vocab_size": len(src_vocab), "tgt_vocab_size": len(tgt_vocab)}


# ---------------------------------------------------------------------------
# LSTM stacks
# ---------------------------------------------------------------------------


def init_stack(rng, d_in, d, layers, prefix):
    return [LstmWeights.init(rng, d_in if k == 0 else d, d, f"{prefix}.{k}.") for k in range(layers)]


def run_stack(stack_weights, inputs, drop, training, rng):
    """Run a unidirectional stack over ``inputs`` (B x L x e) from zero state.

    Returns the top-layer states (B x L x d). Dropout is applied between
    layers only.
    """
    B = inputs.shape[0]
    xs = unstack(inputs, axis=1)
    for k, w in enumerate(stack_weights):
        d = w.hidden_dim
        h = c = Tensor._wrap(np.zeros((B, d)))
        outs = []
        for x in xs:
            h, c = lstm_cell(x, h, c, w)
            outs.append(h)
        if k + 1 < len(stack_weights):
            outs = unstack(dropout(stack(outs, axis=1), drop, training, rng), axis=1)
        xs = outs
    return stack(xs, axis=1)


class StreamingEncoder:
    """Feeds source tokens one at a time through a unidirectional stack.

    Because the recurrence only looks left, the states after pushing
    ``x_1..x_s`` equal the first ``s`` states of a full-sentence encoding.
    """

    def __init__(self, model):
        self.model = model
        d = model.cfg.hidden_dim
        self.h = [np.zeros((1, d)) for _ in model.encoder]
        self.c = [np.zeros((1, d)) for _ in model.encoder]
        self.states = []

    def push(self, token):
        x = embedding(self.model.src_emb, np.array([token]))
        for k, w in enumerate(self.model.encoder):
            h, c = lstm_cell(x, Tensor._wrap(self.h[k]), Tensor._wrap(self.c[k]), w)
            self.h[k], self.c[k] = h.data, c.data
            x = h
        self.states.append(x.data[0])

    def extend(self, tokens):
        for t in tokens:
            self.push(t)
        return self

    def matrix(self):
        """Source states so far, S x d."""
        return np.stack(self.states)


# ---------------------------------------------------------------------------
# model base
# ---------------------------------------------------------------------------


class Seq2SeqBase:
    arch = ""
    config_cls = TrainingConfig

    def __init__(self, cfg, src_vocab, tgt_vocab, params=None):
        self.cfg = cfg
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        rng = make_rng(cfg.seed, self.arch, "init")
        e, d = cfg.emb_dim, cfg.hidden_dim
        self.src_emb = uniform_param(rng, (len(src_vocab), e), "src_emb")
        self.tgt_emb = uniform_param(rng, (len(tgt_vocab), e), "tgt_emb")
        self.encoder = init_stack(rng, e, d, cfg.enc_layers, "enc")
        self._init_decoder(rng)
        if params is not None:
            self.load_params(params)

    def _init_decoder(self, rng):
        raise NotImplementedError

    def named_parameters(self):
        raise NotImplementedError

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def load_params(self, params):
        named = self.named_parameters()
        if [n for n, _ in named] != list(params):
            raise InputError("checkpoint parameter names do not match the model")
        for name, p in named:
            if params[name].shape != p.shape:
                raise InputError(f"parameter {name}: shape {params[name].shape} != {p.shape}")
            p.data = np.array(params[name], dtype=np.float64)
            p.zero_grad()

    def architecture(self):
        return self.cfg.architecture(self.src_vocab, self.tgt_vocab)

    def to_checkpoint(self, meta=None):
        return Checkpoint(self.arch, self.cfg.to_dict(), self.architecture(),
                          {n: p.data.copy() for n, p in self.named_parameters()},
                          self.src_vocab, self.tgt_vocab, dict(meta or {}))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint):
        ckpt.require(cls.arch)
        cfg = cls.config_cls.from_dict(ckpt.config)
        return cls(cfg, ckpt.src_vocab, ckpt.tgt_vocab, ckpt.params)

    def encode_batch(self, src, training=False, rng=None):
        """Source token ids (B x S, PAD-padded) -> top encoder states (B x S x d)."""
        x = dropout(embedding(self.src_emb, src), self.cfg.dropout, training, rng)
        return run_stack(self.encoder, x, self.cfg.dropout, training, rng)

    def loss(self, batch, training=False, rng=None):
        raise NotImplementedError

    def streaming_encoder(self):
        return StreamingEncoder(self)


def batch_arrays(batch):
    """Padded (src, tgt_in, tgt_out) id matrices for a list of sentence pairs."""
    src = pad_batch([p.src for p in batch])
    tgt_out = pad_batch([p.tgt for p in batch])
    tgt_in = pad_batch([(BOS,) + tuple(p.tgt[:-1]) for p in batch])
    return src, tgt_in, tgt_out


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainLog:
    lines: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    steps: int = 0

    def emit(self, line):
        self.lines.append(line)
        log.info(line)


def train_model(model, epoch_examples, cfg, epochs, *, logger=None, on_epoch=None):
    """Teacher-forced training with Adam.

    ``epoch_examples(epoch)`` returns the list of sentence pairs for that
    epoch. ``on_epoch(epoch, log)`` runs after every epoch (periodic
    checkpoints). Raises :class:`TrainingError` on a non-finite loss.
    """
    trace = logger if logger is not None else TrainLog()
    params = model.parameters()
    state = AdamState(lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, warmup_steps=cfg.warmup_steps,
                      warmup_init_lr=cfg.warmup_init_lr)
    for epoch in range(1, epochs + 1):
        examples = epoch_examples(epoch)
        batches = batch_iterator(examples, cfg.max_tokens, cfg.seed * 1_000_003 + epoch)
        total, count = 0.0, 0
        for batch in batches:
            for p in params:
                p.zero_grad()
            rng = make_rng(cfg.seed, "dropout", state.step)
            with GradTape() as tape:
                loss = model.loss(batch, training=True, rng=rng)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at step {state.step + 1}", state.step + 1)
            backward(loss, tape)
            grads = [p.grad for p in params]
            clip_grad_norm(grads, cfg.clip_norm)
            adam_step(params, grads, state)
            total += value * len(batch)
            count += len(batch)
        mean_loss = total / max(count, 1)
        trace.epoch_losses.append(mean_loss)
        trace.steps = state.step
        trace.emit(f"epoch={epoch} step={state.step} loss={mean_loss!r}")
        if on_epoch is not None:
            on_epoch(epoch, trace)
    return trace


def teacher_forced_accuracy(model, pairs, max_tokens=2048):
    """Fraction of non-pad target positions whose argmax matches the gold token."""
    hit = total = 0
    for batch in batch_iterator(pairs, max_tokens, 0):
        logits, gold = model.forward_logits(batch)
        mask = gold != PAD
        hit += int(((logits.argmax(axis=-1) == gold) & mask).sum())
        total += int(mask.sum())
    return hit / max(total, 1)
