"""Streaming read/write policies over a trained translation model."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .simulmodel import as_model, continue_decode, greedy_decode

READ = "R"
WRITE = "W"
PER_READ_CAP = 20


def global_cap(source_len):
    return 2 * source_len + 10


@dataclass
class DecodeTrace:
    """Ordered READ / WRITE actions; WRITE entries carry the emitted token id."""

    actions: list = field(default_factory=list)
    truncated: bool = False

    def read(self):
        self.actions.append((READ, None))

    def write(self, token):
        self.actions.append((WRITE, token))

    @property
    def num_reads(self):
        return sum(a == READ for a, _ in self.actions)

    @property
    def tokens(self):
        return [tok for a, tok in self.actions if a == WRITE]

    def delays(self) -> np.ndarray:
        """``g(t)``: number of READs preceding the t-th WRITE."""
        g, reads = [], 0
        for a, _ in self.actions:
            if a == READ:
                reads += 1
            else:
                g.append(reads)
        return np.array(g, dtype=np.int64)

    def is_well_formed(self, source_len):
        g = self.delays()
        return (self.num_reads == source_len
                and bool(np.all(np.diff(g) >= 0))
                and (len(g) == 0 or g[0] >= 1))

    def to_text(self, itos=None) -> str:
        lines = []
        for a, tok in self.actions:
            if a == READ:
                lines.append(READ)
            else:
                lines.append(f"{WRITE} {itos[tok] if itos is not None else tok}")
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_text(cls, text, stoi=None):
        trace = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            if line == READ:
                trace.read()
            elif line.startswith(WRITE + " "):
                tok = line[2:]
                trace.write(stoi[tok] if stoi is not None else tok)
            else:
                raise ValueError(f"bad trace line {line!r}")
        return trace


def format_traces(traces, itos=None) -> str:
    """One block per sentence, each closed by a blank line (an empty trace is just the blank line)."""
    return "".join(t.to_text(itos) + "\n" for t in traces)


def write_traces(path, traces, itos=None):
    from .checkpoint import atomic_write_text

    atomic_write_text(path, format_traces(traces, itos))


def read_traces(path, stoi=None):
    traces, block = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            block.append(line)
        else:
            traces.append(DecodeTrace.from_text("\n".join(block), stoi))
            block = []
    if block:
        traces.append(DecodeTrace.from_text("\n".join(block), stoi))
    return traces


def adaptive_decode(source_stream: Iterable[int], model, per_read_cap=PER_READ_CAP,
                    max_target=None, carry_state=False):
    """Read one token, decode until ``<eos>``, commit, repeat; finish at end of stream.

    ``source_stream`` yields source token ids; exhaustion of the iterator
    is the end-of-stream signal. Committed tokens are never retracted.
    Returns ``(translation, trace)``.

    By default the decoder is rebuilt over the grown source after every
    read. ``carry_state=True`` keeps the decoder state from the previous
    read instead, so committed tokens keep the contexts they were written
    with.
    """
    model = as_model(model)
    enc = model.streaming_encoder()
    trace = DecodeTrace()
    committed = []
    resume = None
    it = iter(source_stream)
    pending = next(it, None)
    while pending is not None:
        enc.push(pending)
        trace.read()
        pending = next(it, None)
        final = pending is None
        cap = max_target if max_target is not None else global_cap(len(enc.states))
        room = cap - len(committed)
        if room <= 0:
            trace.truncated = True
            continue
        limit = room if final else min(per_read_cap, room)
        cont = continue_decode(enc.matrix(), committed, model, limit, resume=resume)
        if carry_state:
            resume = cont.resume
        for tok in cont.tokens:
            committed.append(tok)
            trace.write(tok)
        if final and not cont.ended:
            trace.truncated = True
    return committed, trace


def waitk_decode(source, model, k, max_target=None):
    """Test-time wait-k: before the t-th write exactly ``min(k + t - 1, S)`` tokens are read.

    ``<eos>`` is suppressed until the whole source has been read.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    model = as_model(model)
    S = len(source)
    cap = max_target if max_target is not None else global_cap(S)
    enc = model.streaming_encoder()
    trace = DecodeTrace()
    committed = []
    while len(committed) < cap:
        need = min(k + len(committed), S)
        while len(enc.states) < need:
            enc.push(source[len(enc.states)])
            trace.read()
        full = len(enc.states) == S
        cont = continue_decode(enc.matrix(), committed, model, 1, allow_eos=full)
        if not cont.tokens:
            break
        committed.append(cont.tokens[0])
        trace.write(cont.tokens[0])
    else:
        trace.truncated = True
    while len(enc.states) < S:
        enc.push(source[len(enc.states)])
        trace.read()
    return committed, trace


def full_sentence_decode(source, model, max_target=None):
    """Read everything, then translate greedily."""
    S = len(source)
    tokens = greedy_decode(source, model, max_target if max_target is not None else global_cap(S))
    trace = DecodeTrace()
    for _ in range(S):
        trace.read()
    for tok in tokens:
        trace.write(tok)
    return tokens, trace


def parse_policy(spec: str):
    """``"adaptive"``, ``"full"`` or ``"waitk:<k>"`` -> ``(name, k)``."""
    if spec in ("adaptive", "full"):
        return spec, None
    name, _, k = spec.partition(":")
    if name == "waitk" and k.isdigit() and int(k) >= 1:
        return "waitk", int(k)
    raise ValueError(f"unknown policy {spec!r}; expected adaptive, full or waitk:<k>")


def decode_corpus(sources, model, policy="adaptive", per_read_cap=PER_READ_CAP,
                  carry_state=False):
    """Decode every source under ``policy``; returns ``(translations, traces)``.

    An empty source yields an empty translation and an empty trace.
    """
    name, k = parse_policy(policy)
    model = as_model(model)
    outs, traces = [], []
    for src in sources:
        if not src:
            outs.append([])
            traces.append(DecodeTrace())
            continue
        if name == "adaptive":
            out, trace = adaptive_decode(iter(src), model, per_read_cap, carry_state=carry_state)
        elif name == "waitk":
            out, trace = waitk_decode(src, model, k)
        else:
            out, trace = full_sentence_decode(src, model)
        outs.append(out)
        traces.append(trace)
    return outs, traces
