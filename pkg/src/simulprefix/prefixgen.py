"""Self-translatable prefix pairs from attention matrices.

For a T x S attention matrix ``A`` the cumulative information of source
prefix ``x_1..x_s`` for target word ``y_t`` is ``sigma[t, s] = sum_{i<=s}
A[t, i]``. The target prefix ``y_1..y_t`` is translatable from
``x_1..x_s`` when ``sigma[j, s] >= e`` for every ``j <= t``. For each
``s`` the generator keeps the longest such target prefix.

When every row passes (the inner scan runs to ``T`` without breaking),
the whole target ``y_1..y_T`` is kept. A literal reading of the usual
break-then-emit-``t-1`` pseudocode would drop ``y_T`` in that case, which
disagrees with the translatability definition; the definition wins here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .numerics.rng import make_rng
from .textio import EOS, SentencePair

PREFIX_HEADER = "# adadata-prefixes v1"


@dataclass(frozen=True)
class GenerationConfig:
    threshold: float
    drop_empty: bool = True
    dedup: bool = True
    include_full: bool = False

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")


@dataclass(frozen=True, order=True)
class PrefixPair:
    line: int
    s: int
    t: int


def cumulative_info(alpha) -> np.ndarray:
    """Row-wise prefix sums of a row-stochastic T x S matrix.

    The last column is pinned to exactly 1: the full source carries all of
    the information, and rounding in the running sum must not make a
    threshold of 1 unreachable.
    """
    sigma = np.cumsum(np.asarray(alpha, dtype=np.float64), axis=1)
    sigma[:, -1] = 1.0
    return sigma


def max_translatable(sigma, threshold) -> np.ndarray:
    """``t*(s)`` for s = 1..S: the length of the longest translatable target prefix."""
    ok = sigma >= threshold  # T x S
    T = ok.shape[0]
    failing = ~ok
    # first failing row per column, T when none fails
    first_fail = np.where(failing.any(axis=0), failing.argmax(axis=0), T)
    return first_fail.astype(np.int64)


def generate_prefix_pairs(alpha, cfg: GenerationConfig, line=0) -> list:
    sigma = cumulative_info(alpha)
    T, S = sigma.shape
    tstar = max_translatable(sigma, cfg.threshold)
    out, seen = [], set()
    for s in range(1, S + 1):
        t = int(tstar[s - 1])
        if t == 0 and cfg.drop_empty:
            continue
        if (s, t) == (S, T) and not cfg.include_full:
            continue
        if cfg.dedup and (s, t) in seen:
            continue
        seen.add((s, t))
        out.append(PrefixPair(line, s, t))
    return out


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def proportional_prefix_pairs(pair: SentencePair, include_full=False) -> list:
    """Baseline: target length proportional to the source prefix, ``round(s * T / S)``."""
    S, T = len(pair.src), len(pair.tgt)
    out, seen = [], set()
    for s in range(1, S + 1):
        t = min(max(_round_half_up(s * T / S), 1), T)
        if (s, t) == (S, T) and not include_full:
            continue
        if (s, t) in seen:
            continue
        seen.add((s, t))
        out.append(PrefixPair(pair.line, s, t))
    return out


def materialize(pp: PrefixPair, pair: SentencePair) -> SentencePair:
    """Token sequences of a prefix pair; the target prefix is closed with ``<eos>``."""
    tgt = tuple(pair.tgt[:pp.t])
    if not tgt or tgt[-1] != EOS:
        tgt = tgt + (EOS,)
    return SentencePair(tuple(pair.src[:pp.s]), tgt, pair.line)


def mix_dataset(full_pairs, prefix_items, seed, epoch=0) -> list:
    """1:1 mix: all full pairs plus an equal-size random subsample of prefix items, shuffled."""
    if not prefix_items:
        raise InputError("no prefix pairs to mix")
    rng = make_rng(seed, "mix", epoch)
    n = len(full_pairs)
    replace = len(prefix_items) < n
    chosen = rng.choice(len(prefix_items), size=n, replace=replace)
    items = list(full_pairs) + [prefix_items[i] for i in chosen]
    return [items[i] for i in rng.permutation(len(items))]


# ---------------------------------------------------------------------------
# prefix-pair files
# ---------------------------------------------------------------------------


def format_prefix_file(prefix_pairs, threshold) -> str:
    rows = sorted(prefix_pairs, key=lambda p: (p.line, p.s))
    return "".join([f"{PREFIX_HEADER} e={threshold!r}\n"]
                   + [f"{p.line}\t{p.s}\t{p.t}\n" for p in rows])


def write_prefix_file(path, prefix_pairs, threshold):
    from .checkpoint import atomic_write_text

    atomic_write_text(path, format_prefix_file(prefix_pairs, threshold))


def read_prefix_file(path):
    """Return ``(threshold, [PrefixPair, ...])``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(PREFIX_HEADER + " e="):
        raise FormatError(f"{path}: missing '{PREFIX_HEADER}' header")
    threshold = float(lines[0].split("e=", 1)[1])
    pairs = []
    for k, row in enumerate(lines[1:], start=2):
        fields = row.split("\t")
        if len(fields) != 3:
            raise FormatError(f"{path}:{k}: expected line<TAB>s<TAB>t")
        pairs.append(PrefixPair(*(int(f) for f in fields)))
    return threshold, pairs


def resolve_prefixes(prefix_pairs, corpus_pairs) -> list:
    """Materialize prefix pairs against the corpus, indexed by line number."""
    by_line = {p.line: p for p in corpus_pairs}
    out = []
    for pp in prefix_pairs:
        pair = by_line.get(pp.line)
        if pair is None:
            raise InputError(f"prefix pair refers to line {pp.line}, which is not in the corpus")
        if not (1 <= pp.s <= len(pair.src) and 0 <= pp.t <= len(pair.tgt)):
            raise InputError(f"prefix pair (s={pp.s}, t={pp.t}) out of range for line {pp.line}")
        out.append(materialize(pp, pair))
    return out


def generate_corpus_prefixes(pairs, model, cfg: GenerationConfig, attention=None) -> list:
    """Run the measurement model over every pair and collect prefix pairs sorted by (line, s).

    ``attention`` may supply precomputed matrices keyed by line.
    """
    from .monolstm import attention_matrix

    out = []
    for pair in pairs:
        alpha = attention[pair.line] if attention is not None else attention_matrix(pair, model)
        out.extend(generate_prefix_pairs(alpha, cfg, line=pair.line))
    return sorted(out, key=lambda p: (p.line, p.s))
