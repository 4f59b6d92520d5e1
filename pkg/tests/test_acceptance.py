"""Acceptance suite: one PASS/FAIL line per criterion in the terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v``. Criteria 6 and 7
train on the toy corpus and take a while on one CPU core.
"""

import json
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.stats import spearmanr

from gradcheck import check_grads
from minimodels import VOCAB, mini_mono, mini_simul, random_pairs, spread_weights
from simulprefix.checkpoint import Checkpoint
from simulprefix.cli import main, read_sweep_csv
from simulprefix.metrics import average_lagging, corpus_bleu
from simulprefix.monolstm import MonoLstm, attention_matrix
from simulprefix.prefixgen import (
    GenerationConfig,
    PrefixPair,
    cumulative_info,
    generate_prefix_pairs,
    max_translatable,
)
from simulprefix.seq2seq import teacher_forced_accuracy
from simulprefix.streamdecode import read_traces
from simulprefix.textio import encode_pairs, read_lines
from simulprefix.toy import write_toy_corpus

RESULTS = {}
THRESHOLDS = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]


@contextmanager
def criterion(number, title):
    note = {"detail": ""}
    try:
        yield note
    except BaseException as exc:
        RESULTS[number] = ("FAIL", title, note["detail"] or f"{type(exc).__name__}: {exc}")
        raise
    RESULTS[number] = ("PASS", title, note["detail"])


def part(number, title, label, ok, detail):
    """Record one sub-check of a multi-part criterion; the line fails if any part fails."""
    status, _, prior = RESULTS.get(number, ("PASS", title, ""))
    status = "FAIL" if status == "FAIL" or not ok else "PASS"
    text = f"{label}={'ok' if ok else 'FAILED'} ({detail})"
    RESULTS[number] = (status, title, f"{prior}; {text}" if prior else text)
    assert ok, text


# ---------------------------------------------------------------------------
# 1-5: exact small-scale oracles
# ---------------------------------------------------------------------------


def test_1_gradient_correctness():
    with criterion(1, "gradients match central differences (rel err <= 1e-4)") as note:
        start = time.perf_counter()
        worst = 0.0
        for layers in (1, 2):
            for build in (mini_mono, mini_simul):
                model = spread_weights(build(layers=layers), seed=layers)
                batch = random_pairs(2, seed=layers, max_len=4)
                errors = check_grads(lambda: model.loss(batch), model.parameters(), tol=1e-4)
                worst = max(worst, max(errors.values()))
        elapsed = time.perf_counter() - start
        note["detail"] = f"max rel err {worst:.2e}, vocab {len(VOCAB)}, {elapsed:.1f}s"
        assert elapsed < 60


def test_2_attention_contracts():
    with criterion(2, "attention rows and cumulative last column equal 1 (1e-9)") as note:
        model = mini_mono()
        worst_row = worst_last = 0.0
        for pair in random_pairs(100, seed=2, max_len=12):
            alpha = attention_matrix(pair, model)
            worst_row = max(worst_row, float(np.max(np.abs(alpha.sum(axis=1) - 1))))
            worst_last = max(worst_last, float(np.max(np.abs(cumulative_info(alpha)[:, -1] - 1))))
        note["detail"] = f"max row error {worst_row:.1e}, max last-column error {worst_last:.1e}"
        assert worst_row <= 1e-9 and worst_last <= 1e-9


def test_3_causality():
    with criterion(3, "scores e(t,s), s<=s', and decoder states ignore the source suffix") as note:
        start = time.perf_counter()
        model = mini_mono()
        rng = np.random.default_rng(3)
        worst_score = worst_dec = 0.0
        for pair in random_pairs(50, seed=3, max_len=10):
            src = list(pair.src) + [int(rng.integers(4, 20))]
            cut = int(rng.integers(1, len(src)))
            tail = rng.integers(4, 20, size=len(src) - cut + int(rng.integers(0, 3)))
            other = src[:cut] + [int(x) for x in tail]
            a, _, _ = model.sentence_attention(src, pair.tgt)
            b, _, _ = model.sentence_attention(other, pair.tgt)
            worst_score = max(worst_score, float(np.max(np.abs(a[:, :cut] - b[:, :cut]))))
            # decoder states under two unrelated sources in one batch
            tgt_in = np.array([[2, *pair.tgt[:-1]]] * 2)
            srcs = np.zeros((2, max(len(src), len(other))), dtype=np.int64)
            srcs[0, :len(src)] = src
            srcs[1, :len(other)] = other
            model.forward(srcs, tgt_in)
            dec = model.decoder_states(tgt_in).data
            worst_dec = max(worst_dec, float(np.max(np.abs(dec[0] - dec[1]))))
        elapsed = time.perf_counter() - start
        note["detail"] = (f"max score change {worst_score:.1e}, max decoder change {worst_dec:.1e}, "
                          f"{elapsed:.1f}s")
        assert worst_score <= 1e-12 and worst_dec == 0.0 and elapsed < 60


def _brute_force(alpha, e):
    T, S = alpha.shape
    out = []
    for s in range(1, S + 1):
        best = 0
        for t in range(T + 1):
            if all(alpha[j, :s].sum() >= e for j in range(t)):
                best = t
        out.append(best)
    return out


def test_4_prefix_oracle():
    with criterion(4, "prefix generation equals brute-force oracle; t* monotone in s and e") as note:
        rng = np.random.default_rng(4)
        cases = 0
        for _ in range(200):
            T, S = (int(x) for x in rng.integers(1, 13, size=2))
            x = rng.gamma(rng.choice([0.2, 1.0, 5.0]), size=(T, S))
            alpha = x / x.sum(axis=1, keepdims=True)
            sigma = cumulative_info(alpha)
            previous = None
            for e in THRESHOLDS + [0.8, 0.9]:
                oracle = _brute_force(alpha, e)
                expected = [PrefixPair(0, s, t) for s, t in enumerate(oracle, 1)
                            if t > 0 and (s, t) != (S, T)]
                assert generate_prefix_pairs(alpha, GenerationConfig(e)) == expected
                tstar = max_translatable(sigma, e)
                assert list(tstar) == oracle
                assert np.all(np.diff(tstar) >= 0)
                if previous is not None:
                    assert np.all(tstar <= previous)
                previous = tstar
                cases += 1
        note["detail"] = f"{cases} matrix/threshold cases"


def test_5_metric_closed_forms():
    with criterion(5, "AL and BLEU closed forms") as note:
        checked = 0
        for n in range(2, 51):
            for k in range(1, n):
                g = [min(k + t, n) for t in range(n)]
                assert average_lagging(g, n, n) == k
                checked += 1
        for S, T in [(1, 1), (6, 4), (9, 13)]:
            assert average_lagging([S] * T, S, T) == S
        hyps = [["a", "b", "c"], ["d", "e", "f", "g", "h"]]
        assert corpus_bleu(hyps, [[h] for h in hyps]).score == 100.0
        hand = corpus_bleu([["the"] * 4], [[["the", "cat"]]])
        assert hand.precisions[0] == 1 / 4
        note["detail"] = f"{checked} wait-k cases; p1(the x4 | the cat) = {hand.precisions[0]}"


# ---------------------------------------------------------------------------
# 6-7: toy end-to-end
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    paths = write_toy_corpus(root / "data", n_train=2000, n_test=200, seed=0)
    cfg = {"train_src": str(paths["train.src"]), "train_tgt": str(paths["train.tgt"]),
           "test_src": str(paths["test.src"]), "test_tgt": str(paths["test.tgt"]), "seed": 1}
    (root / "run.json").write_text(json.dumps(cfg))
    start = time.perf_counter()
    assert main(["-q", "train-mono", "--config", str(root / "run.json"),
                 "--out-dir", str(root / "mono")]) == 0
    mono_seconds = time.perf_counter() - start
    start = time.perf_counter()
    assert main(["-q", "sweep", "--config", str(root / "run.json"), "--out-dir", str(root / "sweep"),
                 "--mono", str(root / "mono" / "mono.ckpt")]) == 0
    sweep_seconds = time.perf_counter() - start
    return {"root": root, "paths": paths, "mono_seconds": mono_seconds,
            "sweep_seconds": sweep_seconds, "rows": read_sweep_csv(root / "sweep" / "sweep.csv")}


def _curve(toy):
    rows = toy["rows"]
    adaptive = [r for r in rows if r[0] != "full"]
    full = next(r for r in rows if r[0] == "full")
    return ([float(r[0]) for r in adaptive], [float(r[1]) for r in adaptive],
            [float(r[2]) for r in adaptive], float(full[1]), float(full[2]))


TITLE_6 = "toy end-to-end: measurement model accuracy and threshold sweep"


def test_6_measurement_model(toy):
    ckpt = Checkpoint.load(toy["root"] / "mono" / "mono.ckpt")
    paths = toy["paths"]
    test = encode_pairs(read_lines(paths["test.src"]), read_lines(paths["test.tgt"]),
                        ckpt.src_vocab, ckpt.tgt_vocab)
    acc = teacher_forced_accuracy(MonoLstm.from_checkpoint(ckpt), test)
    ok = acc >= 0.95 and toy["mono_seconds"] < 600
    part(6, TITLE_6, "accuracy", ok,
         f"held-out token accuracy {acc:.4f}, vocab {len(ckpt.src_vocab)}, "
         f"{toy['mono_seconds']:.0f}s")


def test_6a_latency_grows_with_threshold(toy):
    es, als, _, _, _ = _curve(toy)
    rho = spearmanr(es, als).statistic
    part(6, TITLE_6, "a", bool(rho > 0), f"spearman(e, AL) = {rho:.3f}, AL = {als}")


def test_6b_quality_at_high_threshold(toy):
    es, _, bleus, _, _ = _curve(toy)
    b01, b07 = bleus[es.index(0.1)], bleus[es.index(0.7)]
    part(6, TITLE_6, "b", b07 >= b01, f"BLEU e=0.7 {b07:.2f} vs e=0.1 {b01:.2f}")


def test_6c_close_to_full_sentence(toy):
    es, _, bleus, _, full_bleu = _curve(toy)
    b07 = bleus[es.index(0.7)]
    part(6, TITLE_6, "c", full_bleu - b07 <= 2.0,
         f"BLEU e=0.7 {b07:.2f} vs full sentence {full_bleu:.2f}")


def test_6d_adaptive_latency_below_full(toy):
    _, als, _, full_al, _ = _curve(toy)
    part(6, TITLE_6, "d", max(als) < full_al, f"max adaptive AL {max(als):.3f} vs full {full_al:.3f}")


def test_6e_sweep_runtime(toy):
    part(6, TITLE_6, "runtime", toy["sweep_seconds"] < 3600, f"sweep {toy['sweep_seconds']:.0f}s")


def test_6f_initial_wait_trend(toy):
    """Mean wait before the first write should not grow as e decreases."""
    es, _, _, _, _ = _curve(toy)
    waits = []
    for e in es:
        traces = read_traces(toy["root"] / "sweep" / f"e{e}" / "trace.txt")
        firsts = [t.delays()[0] for t in traces if t.tokens]
        waits.append(float(np.mean(firsts)))
    rho = spearmanr(es, waits).statistic
    part(6, TITLE_6, "initial-wait", bool(rho > 0), f"spearman(e, mean g(1)) = {rho:.3f}")


def test_7_finetune(toy):
    with criterion(7, "one-epoch fine-tune at e=0.3 vs from-scratch mixed training") as note:
        root = toy["root"]
        out = root / "finetune"
        assert main(["-q", "sweep", "--config", str(root / "run.json"), "--out-dir", str(out),
                     "--mono", str(root / "mono" / "mono.ckpt"), "--thresholds", "0.3",
                     "--finetune", "--base", str(root / "sweep" / "full" / "model.ckpt")]) == 0
        tuned = read_sweep_csv(out / "sweep.csv")[0]
        scratch = next(r for r in toy["rows"] if r[0] == "0.3")
        gap = float(scratch[2]) - float(tuned[2])
        ratio = float(tuned[3]) / float(scratch[3])
        note["detail"] = (f"BLEU fine-tuned {float(tuned[2]):.2f} vs scratch {float(scratch[2]):.2f}; "
                          f"time ratio {ratio:.3f}")
        assert gap <= 3.0 and ratio <= 0.2


# ---------------------------------------------------------------------------
# 8: determinism
# ---------------------------------------------------------------------------


def _pipeline(root, paths):
    cfg = root / "run.json"
    run_dir = root / "run"
    steps = [
        ["bpe-learn", "--input", paths["train.src"], paths["train.tgt"], "--merges", "20",
         "--output", run_dir / "bpe.model"],
        ["bpe-apply", "--model", run_dir / "bpe.model", "--input", paths["train.src"],
         "--output", run_dir / "train.bpe.src"],
        ["vocab-build", "--input", run_dir / "train.bpe.src", "--output", run_dir / "vocab.src"],
        ["train-mono", "--config", cfg, "--out-dir", run_dir / "mono"],
        ["pretrain-full", "--config", cfg, "--out-dir", run_dir / "full"],
        ["gen-prefixes", "--checkpoint", run_dir / "mono" / "mono.ckpt", "--src", paths["train.src"],
         "--tgt", paths["train.tgt"], "-e", "0.4", "--output", run_dir / "prefixes.tsv"],
        ["train-simul", "--config", cfg, "--out-dir", run_dir / "simul",
         "--prefixes", run_dir / "prefixes.tsv"],
        ["finetune", "--config", cfg, "--out-dir", run_dir / "ft", "--prefixes",
         run_dir / "prefixes.tsv", "--base", run_dir / "full" / "full.ckpt"],
        ["decode", "--checkpoint", run_dir / "simul" / "simul.ckpt", "--input", paths["test.src"],
         "--output", run_dir / "hyp.txt", "--traces", run_dir / "trace.txt"],
        ["evaluate", "--hypotheses", run_dir / "hyp.txt", "--references", paths["test.tgt"],
         "--traces", run_dir / "trace.txt", "--output", run_dir / "report.txt"],
        ["sweep", "--config", cfg, "--out-dir", run_dir / "sweep", "--mono",
         run_dir / "mono" / "mono.ckpt", "--thresholds", "0.3,0.6"],
    ]
    for step in steps:
        assert main(["-q", *map(str, step)]) == 0, step
    return run_dir


def _snapshot(run_dir):
    files = {}
    for p in sorted(run_dir.rglob("*")):
        if p.is_file():
            data = p.read_bytes()
            if p.name == "sweep.csv":
                # wall-clock seconds are the one intentionally non-reproducible column
                data = b"\n".join(b",".join(row.split(b",")[:3]) for row in data.splitlines())
            files[str(p.relative_to(run_dir))] = data
    return files


def test_8_determinism(tmp_path, capsys):
    with criterion(8, "reruns with identical seeds give byte-identical files") as note:
        paths = write_toy_corpus(tmp_path / "data", n_train=120, n_test=10, seed=8)
        tiny = {"emb_dim": 16, "hidden_dim": 16, "enc_layers": 1, "dec_layers": 1, "epochs": 2,
                "max_tokens": 256}
        cfg = {"train_src": str(paths["train.src"]), "train_tgt": str(paths["train.tgt"]),
               "test_src": str(paths["test.src"]), "test_tgt": str(paths["test.tgt"]),
               "mono": tiny, "simul": tiny, "seed": 5}
        (tmp_path / "run.json").write_text(json.dumps(cfg))
        first = _snapshot(_pipeline(tmp_path, paths))
        second = _snapshot(_pipeline(tmp_path, paths))
        capsys.readouterr()
        differing = sorted(k for k in first if first[k] != second.get(k))
        note["detail"] = f"{len(first)} files compared, {len(differing)} differ {differing[:5]}"
        assert set(first) == set(second) and not differing


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
