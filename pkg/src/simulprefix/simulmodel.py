"""Attention LSTM translation model trained on full and prefix pairs.

Unidirectional encoder, so the states of a source prefix are exactly the
leading states of the full encoding. The decoder uses Luong-style
attention with input feeding: step ``t`` consumes ``[emb(y_{t-1});
htilde_{t-1}]`` and predicts from ``htilde_t = tanh([h_t; c_t] @ W_c)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .errors import InputError
from .numerics import (
    Tensor,
    concat,
    dropout,
    embedding,
    label_smoothed_ce,
    lstm_cell,
    matmul,
    reshape,
    softmax,
    stack,
    tanh,
    uniform_param,
    zeros_param,
)
from .prefixgen import mix_dataset, resolve_prefixes
from .seq2seq import Seq2SeqBase, TrainingConfig, TrainLog, batch_arrays, init_stack, train_model
from .textio import BOS, EOS, PAD

FINETUNE_LR_FACTOR = 0.1


@dataclass
class SimulConfig(TrainingConfig):
    dropout: float = 0.1
    lr: float = 0.01
    betas: tuple = (0.9, 0.98)
    warmup_steps: int = 100
    max_tokens: int = 512
    epochs: int = 30
    resample_mix: bool = True  # False keeps the epoch-0 subsample throughout


class SimulLstm(Seq2SeqBase):
    arch = "simul-lstm"
    config_cls = SimulConfig

    def _init_decoder(self, rng):
        cfg = self.cfg
        d, e = cfg.hidden_dim, cfg.emb_dim
        self.decoder = init_stack(rng, e + d, d, cfg.dec_layers, "dec")
        self.w_combine = uniform_param(rng, (2 * d, d), "w_combine")
        self.out = uniform_param(rng, (d, len(self.tgt_vocab)), "out")
        self.out_bias = zeros_param((len(self.tgt_vocab),), "out_bias")

    def named_parameters(self):
        named = [("src_emb", self.src_emb), ("tgt_emb", self.tgt_emb)]
        for prefix, layers in (("enc", self.encoder), ("dec", self.decoder)):
            for k, w in enumerate(layers):
                named += [(f"{prefix}.{k}.w_ih", w.w_ih), (f"{prefix}.{k}.w_hh", w.w_hh),
                          (f"{prefix}.{k}.bias", w.bias)]
        named += [("w_combine", self.w_combine), ("out", self.out), ("out_bias", self.out_bias)]
        return named

    # -- decoder -----------------------------------------------------------

    def initial_state(self, batch_size):
        d = self.cfg.hidden_dim
        zero = Tensor._wrap(np.zeros((batch_size, d)))
        return [zero] * len(self.decoder), [zero] * len(self.decoder), zero

    def decoder_step(self, y_prev, state, enc, src_mask=None, training=False, rng=None):
        """One decoder step for previous tokens ``y_prev`` (B,); returns ``(logits B x V, state)``."""
        hs, cs, feed = state
        drop = self.cfg.dropout
        x = concat([dropout(embedding(self.tgt_emb, y_prev), drop, training, rng), feed], axis=-1)
        new_h, new_c = [], []
        for k, w in enumerate(self.decoder):
            h, c = lstm_cell(x, hs[k], cs[k], w)
            new_h.append(h)
            new_c.append(c)
            x = dropout(h, drop, training, rng) if k + 1 < len(self.decoder) else h
        B, d = x.shape
        scores = reshape(matmul(enc, reshape(x, (B, d, 1))), (B, enc.shape[1]))
        alpha = softmax(scores, axis=-1, mask=src_mask)
        ctx = reshape(matmul(reshape(alpha, (B, 1, enc.shape[1])), enc), (B, d))
        htilde = tanh(matmul(concat([x, ctx], axis=-1), self.w_combine))
        logits = matmul(dropout(htilde, drop, training, rng), self.out) + self.out_bias
        return logits, (new_h, new_c, htilde)

    def forward(self, src, tgt_in, training=False, rng=None):
        enc = self.encode_batch(src, training, rng)
        mask = src != PAD
        state = self.initial_state(src.shape[0])
        steps = []
        for t in range(tgt_in.shape[1]):
            logits, state = self.decoder_step(tgt_in[:, t], state, enc, mask, training, rng)
            steps.append(logits)
        return stack(steps, axis=1)

    def loss(self, batch, training=False, rng=None):
        src, tgt_in, tgt_out = batch_arrays(batch)
        logits = self.forward(src, tgt_in, training, rng)
        B, T, V = logits.shape
        return label_smoothed_ce(reshape(logits, (B * T, V)), tgt_out.reshape(-1),
                                 self.cfg.label_smoothing, pad_id=PAD)

    def forward_logits(self, batch):
        src, tgt_in, tgt_out = batch_arrays(batch)
        return self.forward(src, tgt_in).data, tgt_out

    def encode_source(self, src):
        if len(src) == 0:
            raise InputError("empty source sentence")
        return self.encode_batch(np.asarray(src, dtype=np.int64)[None]).data[0]


def as_model(checkpoint_or_model):
    if isinstance(checkpoint_or_model, SimulLstm):
        return checkpoint_or_model
    return SimulLstm.from_checkpoint(checkpoint_or_model)


@dataclass
class Continuation:
    tokens: list
    ended: bool  # True when <eos> was produced, False when the cap stopped generation
    resume: tuple = None  # (decoder state, last token) after the committed + new tokens


def continue_decode(enc_states, committed, model, cap, allow_eos=True, resume=None) -> Continuation:
    """Greedy continuation of ``committed`` given source states ``enc_states`` (s x d).

    The decoder is rebuilt by teacher-forcing the committed prefix against
    the current source states, then extended by argmax until ``<eos>`` or
    ``cap`` new tokens. ``<pad>`` and ``<bos>`` are never produced; with
    ``allow_eos=False`` neither is ``<eos>``. Passing ``resume`` from an
    earlier result skips the rebuild and reuses that decoder state.
    """
    model = as_model(model)
    enc = Tensor._wrap(np.asarray(enc_states, dtype=np.float64)[None])
    banned = [PAD, BOS] if allow_eos else [PAD, BOS, EOS]
    if resume is None:
        state, y_prev = model.initial_state(1), BOS
        for tok in committed:
            _, state = model.decoder_step(np.array([y_prev]), state, enc)
            y_prev = tok
    else:
        state, y_prev = resume
    out = []
    for _ in range(cap):
        logits, nxt = model.decoder_step(np.array([y_prev]), state, enc)
        scores = logits.data[0].copy()
        scores[banned] = -np.inf
        tok = int(np.argmax(scores))
        if tok == EOS:
            return Continuation(out, True, (state, y_prev))
        out.append(tok)
        state, y_prev = nxt, tok
    return Continuation(out, False, (state, y_prev))


def greedy_decode(source, model, max_len) -> list:
    """Full-sentence argmax translation; ``<eos>`` is not included in the result."""
    model = as_model(model)
    return continue_decode(model.encode_source(source), [], model, max_len).tokens


# ---------------------------------------------------------------------------
# training entry points
# ---------------------------------------------------------------------------


def _meta(trace, cfg, epochs, **extra):
    return {"steps": trace.steps, "epochs": epochs, "peak_lr": cfg.lr, **extra}


def _saver(model, cfg, on_checkpoint, **extra):
    if on_checkpoint is None:
        return None
    return lambda epoch, trace: on_checkpoint(model.to_checkpoint(
        _meta(trace, cfg, epoch, **extra)))


def train_full_sentence(pairs, cfg: SimulConfig, src_vocab, tgt_vocab, logger=None,
                        on_checkpoint=None):
    if not pairs:
        raise InputError("cannot train on an empty corpus")
    model = SimulLstm(cfg, src_vocab, tgt_vocab)
    trace = train_model(model, lambda epoch: pairs, cfg, cfg.epochs, logger=logger or TrainLog(),
                        on_epoch=_saver(model, cfg, on_checkpoint, mode="full"))
    return model.to_checkpoint(_meta(trace, cfg, cfg.epochs, mode="full")), trace


def mixed_epochs(pairs, prefix_pairs, seed, resample=True):
    """Per-epoch example lists: a fresh 1:1 mix every epoch, or one fixed mix."""
    items = resolve_prefixes(prefix_pairs, pairs)
    if not resample:
        fixed = mix_dataset(pairs, items, seed, 0)
        return lambda epoch: fixed
    return lambda epoch: mix_dataset(pairs, items, seed, epoch)


def train_mixed(pairs, prefix_pairs, cfg: SimulConfig, src_vocab, tgt_vocab, logger=None,
                on_checkpoint=None):
    if not pairs:
        raise InputError("cannot train on an empty corpus")
    examples = mixed_epochs(pairs, prefix_pairs, cfg.seed, cfg.resample_mix)
    model = SimulLstm(cfg, src_vocab, tgt_vocab)
    trace = train_model(model, examples, cfg, cfg.epochs, logger=logger or TrainLog(),
                        on_epoch=_saver(model, cfg, on_checkpoint, mode="mixed"))
    return model.to_checkpoint(_meta(trace, cfg, cfg.epochs, mode="mixed")), trace


def finetune(base: Checkpoint, pairs, prefix_pairs, cfg: SimulConfig,
             lr_factor=FINETUNE_LR_FACTOR, logger=None, on_checkpoint=None):
    """One epoch on a fresh 1:1 mix starting from ``base``.

    The rate is held at ``lr_factor`` times the base run's peak for the
    whole epoch: no warm-up, and fresh Adam moments.
    """
    model = SimulLstm.from_checkpoint(base)
    base.require(SimulLstm.arch, cfg.architecture(model.src_vocab, model.tgt_vocab))
    peak = float(base.meta.get("peak_lr", cfg.lr)) * lr_factor
    run_cfg = SimulConfig.from_dict({**cfg.to_dict(), "lr": peak, "warmup_steps": 0})
    base_steps = int(base.meta.get("steps", 0))
    extra = dict(mode="finetune", lr_factor=lr_factor, base_steps=base_steps)
    examples = mixed_epochs(pairs, prefix_pairs, cfg.seed, cfg.resample_mix)
    trace = train_model(model, examples, run_cfg, 1, logger=logger or TrainLog(),
                        on_epoch=_saver(model, run_cfg, on_checkpoint, **extra))
    return model.to_checkpoint(_meta(trace, run_cfg, 1, **extra)), trace
