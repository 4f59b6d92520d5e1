"""
Toy pipeline: attention, prefix pairs, adaptive decoding
========================================================

A short end-to-end run on the synthetic corpus. Source words below index 6
swap with their right neighbour in the target, so the decoder has to wait
for one extra word before writing them. Default settings; expect roughly
five minutes on one core.
"""

import numpy as np

from simulprefix.metrics import LatencyReport, corpus_bleu
from simulprefix.monolstm import MonoLstmConfig, attention_matrix, train_monolstm
from simulprefix.prefixgen import GenerationConfig, generate_corpus_prefixes
from simulprefix.simulmodel import SimulConfig, as_model, train_mixed
from simulprefix.streamdecode import adaptive_decode
from simulprefix.textio import build_vocab, encode_pairs
from simulprefix.toy import make_toy_corpus

src, tgt = make_toy_corpus(2000, seed=0)
test_src, test_tgt = make_toy_corpus(100, seed=7919)
sv = build_vocab(line.split() for line in src)
tv = build_vocab(line.split() for line in tgt)
pairs = encode_pairs(src, tgt, sv, tv)
test = encode_pairs(test_src, test_tgt, sv, tv)

###############################################################################
# Train the measurement model and look at one attention matrix.

mono, _ = train_monolstm(pairs, MonoLstmConfig(), sv, tv)
np.set_printoptions(precision=2, suppress=True)
print(src[0])
print(tgt[0])
print(attention_matrix(pairs[0], mono))

###############################################################################
# Generate prefix pairs at e = 0.5 and train the translation model on a
# fresh 1:1 mix of full and prefix pairs each epoch.

prefixes = generate_corpus_prefixes(pairs, mono, GenerationConfig(0.5))
print(len(prefixes), "prefix pairs")
ckpt, log = train_mixed(pairs, prefixes, SimulConfig(), sv, tv)
model = as_model(ckpt)

###############################################################################
# Decode while the source streams in and score quality and latency.

hyps, traces = [], []
for pair in test:
    out, trace = adaptive_decode(iter(pair.src), model)
    hyps.append(tv.decode(out))
    traces.append(trace)
refs = [[tv.decode(p.tgt[:-1])] for p in test]
print("BLEU", round(corpus_bleu(hyps, refs).score, 2))
print("AL", round(LatencyReport.from_traces(traces, [len(p.src) for p in test]).mean, 3))
print(" ".join(a if tok is None else f"{a}:{tv.itos[tok]}" for a, tok in traces[0].actions))
