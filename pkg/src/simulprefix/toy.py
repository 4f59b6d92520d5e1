"""Synthetic deterministic parallel corpus for desk-scale experiments.

Each source word ``sNN`` translates to a fixed target word through a
seeded dictionary. Source words from a small "swap" class are emitted
after their right neighbour, so a translator must wait one extra token
before writing them, which gives adaptive policies something to learn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics.rng import make_rng


@dataclass(frozen=True)
class ToyLanguage:
    vocab_size: int = 50
    swap_words: int = 6
    seed: int = 0

    @property
    def source_words(self):
        return [f"s{i:02d}" for i in range(self.vocab_size)]

    def dictionary(self):
        perm = make_rng(self.seed, "toy-dictionary").permutation(self.vocab_size)
        return {f"s{i:02d}": f"t{int(j):02d}" for i, j in enumerate(perm)}

    def is_swap(self, word):
        return int(word[1:]) < self.swap_words

    def translate(self, words):
        table = self.dictionary()
        out = [table[w] for w in words]
        i = 0
        while i < len(words) - 1:
            if self.is_swap(words[i]):
                out[i], out[i + 1] = out[i + 1], out[i]
                i += 2
            else:
                i += 1
        return out


def make_toy_corpus(n_pairs=2000, min_len=5, max_len=15, seed=0, language=None):
    """Return ``(source_lines, target_lines)`` of whitespace-tokenized text."""
    lang = language or ToyLanguage()
    rng = make_rng(seed, "toy-sentences")
    words = lang.source_words
    src, tgt = [], []
    for _ in range(n_pairs):
        n = int(rng.integers(min_len, max_len + 1))
        sent = [words[int(k)] for k in rng.integers(0, len(words), size=n)]
        src.append(" ".join(sent))
        tgt.append(" ".join(lang.translate(sent)))
    return src, tgt


def write_toy_corpus(directory, n_train=2000, n_test=200, seed=0, language=None):
    """Write train/test source and target files; returns the four paths."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, n, s in (("train", n_train, seed), ("test", n_test, seed + 7919)):
        src, tgt = make_toy_corpus(n, seed=s, language=language)
        for side, lines in (("src", src), ("tgt", tgt)):
            p = directory / f"{split}.{side}"
            p.write_text("\n".join(lines) + "\n", encoding="utf-8")
            paths[f"{split}.{side}"] = p
    return paths


def reference_delays(words, lang: ToyLanguage):
    """Minimal number of source words needed before each target word (oracle schedule)."""
    need = []
    i = 0
    while i < len(words):
        if lang.is_swap(words[i]) and i + 1 < len(words):
            need += [i + 2, i + 2]
            i += 2
        else:
            need.append(i + 1)
            i += 1
    return np.array(need)
