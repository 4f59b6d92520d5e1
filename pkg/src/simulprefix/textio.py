"""Corpus ingestion, BPE subwords, vocabularies and length-bucketed batching."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, InputError
from .numerics.rng import make_rng

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")
END_OF_WORD = "</w>"
BPE_HEADER = "bpe-v1"
DEFAULT_MAX_LEN = 100


# ---------------------------------------------------------------------------
# BPE
# ---------------------------------------------------------------------------


@dataclass
class BpeModel:
    merges: list  # ordered (left, right) pairs

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self.ranks = {m: i for i, m in enumerate(self.merges)}

    def save(self, path):
        from .checkpoint import atomic_write_text

        lines = [f"{BPE_HEADER} {len(self.merges)}"] + [f"{a} {b}" for a, b in self.merges]
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith(BPE_HEADER + " "):
            raise FormatError(f"{path}: not a {BPE_HEADER} model file")
        n = int(lines[0].split()[1])
        merges = [tuple(line.split(" ")) for line in lines[1:1 + n]]
        if len(merges) != n or any(len(m) != 2 for m in merges):
            raise FormatError(f"{path}: header announces {n} merges, body is malformed")
        return cls(merges)


def _word_symbols(word):
    return tuple(word[:-1]) + (word[-1] + END_OF_WORD,)


def _merge_word(symbols, pair, joined):
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def learn_bpe(lines: Iterable[str], num_merges: int) -> BpeModel:
    """Greedy pair merging; ties go to the lexicographically smallest pair.

    Stops after ``num_merges`` merges or once every word is a single symbol.
    """
    freqs = Counter(w for line in lines for w in line.split())
    if not freqs:
        raise InputError("cannot learn BPE from an empty corpus")
    vocab = {_word_symbols(w): f for w, f in freqs.items()}
    merges = []
    while len(merges) < num_merges:
        pairs = Counter()
        for sym, f in vocab.items():
            for a, b in zip(sym, sym[1:]):
                pairs[a, b] += f
        if not pairs:
            break
        top = max(pairs.values())
        best = min(p for p, c in pairs.items() if c == top)
        joined = best[0] + best[1]
        vocab = {_merge_word(sym, best, joined): f for sym, f in vocab.items()}
        merges.append(best)
    return BpeModel(merges)


def _apply_word(word, model: BpeModel):
    symbols = _word_symbols(word)
    ranks = model.ranks
    while len(symbols) > 1:
        cands = [(ranks[p], p) for p in zip(symbols, symbols[1:]) if p in ranks]
        if not cands:
            break
        _, pair = min(cands)
        symbols = _merge_word(symbols, pair, pair[0] + pair[1])
    return symbols


def apply_bpe(sentence: str, model: BpeModel) -> list:
    cache = {}
    out = []
    for word in sentence.split():
        if word not in cache:
            cache[word] = _apply_word(word, model)
        out.extend(cache[word])
    return out


def detokenize(tokens: Sequence[str]) -> str:
    return "".join(tokens).replace(END_OF_WORD, " ").strip()


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


class Vocabulary:
    """Token <-> id bijection with ids 0-3 reserved for pad, unk, bos, eos."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = list(RESERVED)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t in self.stoi:
                raise InputError(f"duplicate vocabulary entry {t!r}")
            self.stoi[t] = len(self.itos)
            self.itos.append(t)

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def tokens(self):
        """Non-reserved tokens in id order."""
        return self.itos[len(RESERVED):]

    def encode(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def save(self, path):
        from .checkpoint import atomic_write_text

        atomic_write_text(path, "".join(t + "\n" for t in self.tokens))

    @classmethod
    def load(cls, path):
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def build_vocab(corpus: Iterable[Sequence[str]], min_frequency: int = 1) -> Vocabulary:
    counts = Counter(t for sent in corpus for t in sent if t not in RESERVED)
    kept = sorted((t for t, c in counts.items() if c >= min_frequency),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


# ---------------------------------------------------------------------------
# parallel corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SentencePair:
    src: tuple
    tgt: tuple  # ends with EOS
    line: int

    def __post_init__(self):
        if not self.src or not self.tgt:
            raise InputError(f"line {self.line}: empty side")
        if self.tgt[-1] != EOS:
            raise InputError(f"line {self.line}: target must end with <eos>")


def read_lines(path):
    return Path(path).read_text(encoding="utf-8").splitlines()


def encode_pairs(src_lines, tgt_lines, src_vocab, tgt_vocab, max_len=DEFAULT_MAX_LEN):
    """Encode aligned tokenized lines; drops empty and over-long pairs with a warning."""
    if len(src_lines) != len(tgt_lines):
        raise InputError(f"line count mismatch: {len(src_lines)} source vs "
                         f"{len(tgt_lines)} target lines")
    pairs = []
    for i, (s, t) in enumerate(zip(src_lines, tgt_lines)):
        s_tok, t_tok = s.split(), t.split()
        if not s_tok or not t_tok:
            log.warning("line %d: empty side, dropped", i)
            continue
        if max_len and (len(s_tok) > max_len or len(t_tok) + 1 > max_len):
            log.warning("line %d: longer than %d tokens, dropped", i, max_len)
            continue
        pairs.append(SentencePair(tuple(src_vocab.encode(s_tok)),
                                  tuple(tgt_vocab.encode(t_tok)) + (EOS,), i))
    return pairs


def load_parallel_corpus(src_path, tgt_path, src_vocab, tgt_vocab, max_len=DEFAULT_MAX_LEN):
    return encode_pairs(read_lines(src_path), read_lines(tgt_path), src_vocab, tgt_vocab, max_len)


def pad_batch(seqs, pad=PAD):
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def _pair_len(p):
    return max(len(p.src), len(p.tgt))


def batch_iterator(pairs, max_tokens, seed):
    """Shuffle, bucket by length and cut batches with ``size * padded length <= max_tokens``.

    Returns a list of batches (lists of pairs) forming a partition of ``pairs``.
    """
    for p in pairs:
        if _pair_len(p) > max_tokens:
            raise InputError(f"line {p.line}: {_pair_len(p)} tokens exceed max_tokens={max_tokens}")
    rng = make_rng(seed, "batches")
    shuffled = [pairs[i] for i in rng.permutation(len(pairs))]
    shuffled.sort(key=_pair_len)  # stable: equal lengths stay shuffled
    batches, cur, width = [], [], 0
    for p in shuffled:
        w = max(width, _pair_len(p))
        if cur and (len(cur) + 1) * w > max_tokens:
            batches.append(cur)
            cur, w = [], _pair_len(p)
        cur.append(p)
        width = w
    if cur:
        batches.append(cur)
    return [batches[i] for i in rng.permutation(len(batches))]
