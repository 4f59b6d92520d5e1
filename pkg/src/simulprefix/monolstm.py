"""Causal-attention measurement model.

A unidirectional LSTM encoder and an LSTM decoder that never sees the
source: the decoder starts from a zero state and consumes only target
embeddings. Dot-product attention enters only at the prediction layer::

    e(t, s)  = h_t . hbar_s
    alpha_t  = softmax_s e(t, s)
    c_t      = sum_s alpha_ts hbar_s
    logits_t = [h_t ; c_t] @ W

so ``e(t, s)`` depends on ``x_1..x_s`` and ``y_1..y_{t-1}`` only. ``W``
is stored as a (2d x V) matrix, the transpose of the usual (V x 2d).

Row ``T`` of every attention matrix is the ``<eos>`` prediction step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .numerics import (
    concat,
    dropout,
    embedding,
    label_smoothed_ce,
    matmul,
    reshape,
    softmax,
    swapaxes,
    uniform_param,
)
from .seq2seq import Seq2SeqBase, TrainingConfig, TrainLog, batch_arrays, init_stack, run_stack, train_model
from .textio import BOS, PAD


@dataclass
class MonoLstmConfig(TrainingConfig):
    lr: float = 0.01
    warmup_steps: int = 100
    max_tokens: int = 512


class MonoLstm(Seq2SeqBase):
    arch = "monolstm"
    config_cls = MonoLstmConfig

    def _init_decoder(self, rng):
        cfg = self.cfg
        self.decoder = init_stack(rng, cfg.emb_dim, cfg.hidden_dim, cfg.dec_layers, "dec")
        self.out = uniform_param(rng, (2 * cfg.hidden_dim, len(self.tgt_vocab)), "out")

    def named_parameters(self):
        named = [("src_emb", self.src_emb), ("tgt_emb", self.tgt_emb)]
        for prefix, layers in (("enc", self.encoder), ("dec", self.decoder)):
            for k, w in enumerate(layers):
                named += [(f"{prefix}.{k}.w_ih", w.w_ih), (f"{prefix}.{k}.w_hh", w.w_hh),
                          (f"{prefix}.{k}.bias", w.bias)]
        named.append(("out", self.out))
        return named

    # -- forward pieces ----------------------------------------------------

    def decoder_states(self, tgt_in, training=False, rng=None):
        """Target ids shifted right (B x T, starting with BOS) -> top decoder states (B x T x d)."""
        y = dropout(embedding(self.tgt_emb, tgt_in), self.cfg.dropout, training, rng)
        return run_stack(self.decoder, y, self.cfg.dropout, training, rng)

    def attention_and_predict(self, dec, enc, src_mask=None, training=False, rng=None):
        """Return ``(scores, alpha, logits)`` for states ``dec`` (B x T x d), ``enc`` (B x S x d).

        ``scores`` are the unnormalized ``h_t . hbar_s``.
        """
        if dec.shape[-1] != enc.shape[-1]:
            raise DimensionError(f"decoder states {dec.shape} and encoder states {enc.shape} "
                                 "differ in hidden size")
        scores = matmul(dec, swapaxes(enc, 1, 2))
        mask = None if src_mask is None else src_mask[:, None, :]
        alpha = softmax(scores, axis=-1, mask=mask)
        ctx = matmul(alpha, enc)
        feats = dropout(concat([dec, ctx], axis=-1), self.cfg.dropout, training, rng)
        return scores, alpha, matmul(feats, self.out)

    def forward(self, src, tgt_in, training=False, rng=None):
        enc = self.encode_batch(src, training, rng)
        dec = self.decoder_states(tgt_in, training, rng)
        return self.attention_and_predict(dec, enc, src != PAD, training, rng)

    def loss(self, batch, training=False, rng=None):
        src, tgt_in, tgt_out = batch_arrays(batch)
        _, _, logits = self.forward(src, tgt_in, training, rng)
        B, T, V = logits.shape
        return label_smoothed_ce(reshape(logits, (B * T, V)), tgt_out.reshape(-1),
                                 self.cfg.label_smoothing, pad_id=PAD)

    def forward_logits(self, batch):
        src, tgt_in, tgt_out = batch_arrays(batch)
        return self.forward(src, tgt_in)[2].data, tgt_out

    # -- single-sentence helpers -------------------------------------------

    def _check_ids(self, src, tgt):
        if len(src) == 0:
            raise InputError("empty source sentence")
        for ids, vocab, side in ((src, self.src_vocab, "source"), (tgt, self.tgt_vocab, "target")):
            if len(ids) and (min(ids) < 0 or max(ids) >= len(vocab)):
                raise InputError(f"{side} id outside vocabulary of size {len(vocab)}")

    def encode_source(self, src):
        """Source ids (S,) -> encoder states (S x d); state s depends on x_1..x_s only."""
        self._check_ids(src, ())
        return self.encode_batch(np.asarray(src, dtype=np.int64)[None]).data[0]

    def sentence_decoder_states(self, tgt):
        """Target ids y_1..y_T -> decoder states h_1..h_T, h_t having consumed BOS, y_1..y_{t-1}."""
        tgt_in = np.asarray((BOS,) + tuple(tgt[:-1]), dtype=np.int64)[None]
        return self.decoder_states(tgt_in).data[0]

    def sentence_attention(self, src, tgt):
        """(scores, alpha, logits) for one pair, evaluation mode; scores and alpha are T x S."""
        self._check_ids(src, tgt)
        src_ids = np.asarray(src, dtype=np.int64)[None]
        tgt_in = np.asarray((BOS,) + tuple(tgt[:-1]), dtype=np.int64)[None]
        scores, alpha, logits = self.forward(src_ids, tgt_in)
        return scores.data[0], alpha.data[0], logits.data[0]


def train_monolstm(pairs, cfg: MonoLstmConfig, src_vocab, tgt_vocab, logger=None,
                   on_checkpoint=None):
    """Train on full pairs; returns ``(checkpoint, log)``. Deterministic for a given ``cfg.seed``.

    ``on_checkpoint(ckpt)`` receives a snapshot after every epoch.
    """
    if not pairs:
        raise InputError("cannot train on an empty corpus")
    model = MonoLstm(cfg, src_vocab, tgt_vocab)

    def snapshot(epoch, trace):
        return model.to_checkpoint({"steps": trace.steps, "epochs": epoch, "peak_lr": cfg.lr})

    hook = None if on_checkpoint is None else (lambda e, tr: on_checkpoint(snapshot(e, tr)))
    trace = train_model(model, lambda epoch: pairs, cfg, cfg.epochs, logger=logger or TrainLog(),
                        on_epoch=hook)
    return snapshot(cfg.epochs, trace), trace


def attention_matrix(pair, checkpoint_or_model):
    """T x S attention weights of a trained model for one sentence pair (rows sum to 1)."""
    model = (checkpoint_or_model if isinstance(checkpoint_or_model, MonoLstm)
             else MonoLstm.from_checkpoint(checkpoint_or_model))
    _, alpha, _ = model.sentence_attention(pair.src, pair.tgt)
    return alpha
