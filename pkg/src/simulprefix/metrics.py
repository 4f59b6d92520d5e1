"""Corpus BLEU and Average Lagging.

BLEU clips each hypothesis n-gram count by its maximum count over the
references of that sentence, aggregates clipped and total counts over the
corpus, and applies a brevity penalty against the reference length
closest to each hypothesis length (the shorter one on ties). There is no
smoothing at corpus level. An n-gram order for which the whole corpus
has no hypothesis n-grams (every hypothesis shorter than n) is left out of
the geometric mean rather than forcing the score to zero.

Average Lagging over a delay function ``g`` (reads before each write)::

    AL = 1/tau * sum_{t=1..tau} [ g(t) - (t - 1) / gamma ]
    gamma = T / S,   tau = min{t : g(t) = S}   (or the last write)
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import FormatError, InputError

MAX_N = 4
REPORT_HEADER = "# simulprefix-eval v1"


def ngrams(tokens, n) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def closest_ref_length(hyp_len, ref_lens):
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: tuple  # p_1..p_n as fractions in [0, 1]
    bp: float
    hyp_len: int
    ref_len: int
    matches: tuple = ()
    totals: tuple = ()

    def __float__(self):
        return self.score


def _sufficient_stats(hypotheses, reference_sets, max_n):
    if len(hypotheses) != len(reference_sets):
        raise InputError(f"{len(hypotheses)} hypotheses but {len(reference_sets)} reference sets")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for k, (hyp, refs) in enumerate(zip(hypotheses, reference_sets)):
        if not refs:
            raise InputError(f"sentence {k + 1} has no references")
        hyp = list(hyp)
        hyp_len += len(hyp)
        ref_len += closest_ref_length(len(hyp), [len(r) for r in refs])
        for n in range(1, max_n + 1):
            counts = ngrams(hyp, n)
            best = Counter()
            for ref in refs:
                best |= ngrams(list(ref), n)
            matches[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            totals[n - 1] += sum(counts.values())
    return matches, totals, hyp_len, ref_len


def _brevity_penalty(hyp_len, ref_len):
    if hyp_len == 0:
        return 0.0
    return 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)


def _combine(matches, totals, hyp_len, ref_len, add_one_from=None):
    precisions, logs = [], []
    for n, (m, t) in enumerate(zip(matches, totals), start=1):
        if add_one_from is not None and n >= add_one_from:
            m, t = m + 1, t + 1
        if t == 0:
            precisions.append(0.0)
            continue
        p = m / t
        precisions.append(p)
        logs.append(math.log(p) if p > 0 else -math.inf)
    bp = _brevity_penalty(hyp_len, ref_len)
    if not logs or -math.inf in logs:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(logs) / len(logs))
    return BleuScore(min(score, 100.0), tuple(precisions), bp, hyp_len, ref_len,
                     tuple(matches), tuple(totals))


def corpus_bleu(hypotheses: Sequence[Sequence[str]], reference_sets, max_n=MAX_N) -> BleuScore:
    """Multi-reference corpus BLEU on a 0..100 scale over pre-tokenized sentences."""
    return _combine(*_sufficient_stats(hypotheses, reference_sets, max_n))


def sentence_bleu(hypothesis, references, max_n=MAX_N) -> BleuScore:
    """Single-sentence BLEU with add-one smoothing for n >= 2. Diagnostics only."""
    return _combine(*_sufficient_stats([hypothesis], [references], max_n), add_one_from=2)


# ---------------------------------------------------------------------------
# latency
# ---------------------------------------------------------------------------


def average_lagging(trace_or_delays, source_len, target_len=None) -> float:
    """AL in source-token units.

    ``trace_or_delays`` is a :class:`DecodeTrace` or the delay sequence
    ``g(1..T)``. ``target_len`` sets the rate ``gamma = T / S`` and defaults
    to the number of writes.
    """
    g = (trace_or_delays.delays() if hasattr(trace_or_delays, "delays")
         else np.asarray(trace_or_delays, dtype=np.int64))
    T = len(g) if target_len is None else int(target_len)
    S = int(source_len)
    if T == 0 or len(g) == 0:
        raise InputError("average lagging is undefined for an empty target")
    if S <= 0:
        raise InputError("average lagging needs a non-empty source")
    gamma = T / S
    reached = np.nonzero(g >= S)[0]
    tau = int(reached[0]) + 1 if len(reached) else len(g)
    t = np.arange(tau)
    return float(np.mean(g[:tau] - t / gamma))


@dataclass
class LatencyReport:
    """Per-sentence AL values.

    A sentence with an empty hypothesis has no delay function; it is
    scored as if everything were written after the full source, AL = S.
    """

    per_sentence: list = field(default_factory=list)

    @property
    def mean(self):
        return float(np.mean(self.per_sentence)) if self.per_sentence else 0.0

    @classmethod
    def from_traces(cls, traces, source_lens):
        if len(traces) != len(source_lens):
            raise InputError(f"{len(traces)} traces but {len(source_lens)} sources")
        values = []
        for trace, S in zip(traces, source_lens):
            values.append(float(S) if not trace.tokens else average_lagging(trace, S))
        return cls(values)

    @classmethod
    def from_word_traces(cls, traces, source_token_lists, marker="</w>"):
        """AL over words for traces written in subword units."""
        if len(traces) != len(source_token_lists):
            raise InputError(f"{len(traces)} traces but {len(source_token_lists)} sources")
        values = []
        for trace, src in zip(traces, source_token_lists):
            g, S = word_delays(trace, src, marker)
            values.append(float(S) if len(g) == 0 else average_lagging(g, S))
        return cls(values)


def word_delays(trace, source_tokens, marker="</w>"):
    """Collapse a subword trace to word units; returns ``(g, S_words)``.

    A source word counts as read once its last subword is read, and a target
    word is written with its last subword. An unterminated final subword on
    either side closes a word. A side without any marker is already in words.
    """
    ends = [t.endswith(marker) for t in source_tokens]
    if not any(ends):
        ends = [True] * len(ends)
    elif ends:
        ends[-1] = True
    tgt_marked = any(str(tok).endswith(marker) for a, tok in trace.actions if a == "W")
    g, reads, words_read, open_word = [], 0, 0, False
    for a, tok in trace.actions:
        if a == "R":
            if reads >= len(ends):
                raise InputError("trace reads past the end of the source")
            words_read += ends[reads]
            reads += 1
        elif not tgt_marked or str(tok).endswith(marker):
            g.append(words_read)
            open_word = False
        else:
            open_word = True
    if open_word:
        g.append(words_read)
    return np.array(g, dtype=np.int64), sum(ends)


# ---------------------------------------------------------------------------
# evaluation report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvaluationReport:
    bleu: BleuScore
    latency: LatencyReport | None
    n_sentences: int

    def to_text(self) -> str:
        p = list(self.bleu.precisions) + [0.0] * (MAX_N - len(self.bleu.precisions))
        al = self.latency.mean if self.latency is not None else float("nan")
        lines = [REPORT_HEADER,
                 f"n_sentences={self.n_sentences}",
                 f"bleu={self.bleu.score:.4f}"]
        lines += [f"p{n}={p[n - 1]:.6f}" for n in range(1, MAX_N + 1)]
        lines += [f"bp={self.bleu.bp:.6f}", f"mean_al={al:.4f}",
                  f"RESULT bleu={self.bleu.score:.4f} al={al:.4f}"]
        return "\n".join(lines) + "\n"


def parse_report(text) -> dict:
    """Read the ``key=value`` fields of an evaluation report."""
    lines = text.splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise FormatError(f"not an evaluation report (expected '{REPORT_HEADER}')")
    out = {}
    for line in lines[1:]:
        if line.startswith("RESULT "):
            continue
        key, _, value = line.partition("=")
        out[key] = int(value) if key == "n_sentences" else float(value)
    return out


def evaluate(hypotheses, reference_sets, traces=None, source_lens=None,
             latency=None) -> EvaluationReport:
    bleu = corpus_bleu(hypotheses, reference_sets)
    if latency is None and traces is not None:
        latency = LatencyReport.from_traces(traces, source_lens)
    return EvaluationReport(bleu, latency, len(hypotheses))
