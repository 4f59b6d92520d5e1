"""Command-line pipeline: tokenization, training, prefix generation, decoding, evaluation, sweeps.

Exit codes: 0 success, 1 usage error, 2 input or data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import Checkpoint, atomic_write_text
from .errors import CompatibilityError, InputError, TrainingError
from .metrics import LatencyReport, evaluate
from .monolstm import MonoLstm, MonoLstmConfig, attention_matrix, train_monolstm
from .prefixgen import GenerationConfig, generate_corpus_prefixes, read_prefix_file, write_prefix_file
from .seq2seq import TrainLog
from .simulmodel import FINETUNE_LR_FACTOR, SimulConfig, as_model, finetune, train_full_sentence, train_mixed
from .streamdecode import PER_READ_CAP, decode_corpus, format_traces, parse_policy, read_traces
from .textio import (
    DEFAULT_MAX_LEN,
    END_OF_WORD,
    BpeModel,
    Vocabulary,
    apply_bpe,
    build_vocab,
    detokenize,
    encode_pairs,
    learn_bpe,
    read_lines,
)

log = logging.getLogger("simulprefix")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_TRAINING = 0, 1, 2, 3
DEFAULT_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
SWEEP_HEADER = ("e", "al", "bleu", "seconds")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    seed: int = 1
    out_dir: str = "run"
    train_src: str | None = None
    train_tgt: str | None = None
    test_src: str | None = None
    test_tgt: str | None = None
    extra_refs: list = field(default_factory=list)
    src_vocab: str | None = None
    tgt_vocab: str | None = None
    max_len: int = DEFAULT_MAX_LEN
    mono: dict = field(default_factory=dict)
    simul: dict = field(default_factory=dict)
    mono_checkpoint: str | None = None
    base_checkpoint: str | None = None
    thresholds: list = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    finetune: bool = False
    finetune_lr_factor: float = FINETUNE_LR_FACTOR
    per_read_cap: int = PER_READ_CAP
    bleu_unit: str = "word"

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise InputError(f"unknown config fields: {unknown}")
        return cls(**d)

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    def mono_config(self):
        return MonoLstmConfig.from_dict({"seed": self.seed, **self.mono})

    def simul_config(self):
        return SimulConfig.from_dict({"seed": self.seed, **self.simul})


def _apply_set(cfg: dict, assignment: str):
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise UsageError(f"--set expects key=value, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    *path, leaf = key.split(".")
    node = cfg
    for part in path:
        node = node.setdefault(part, {})
    node[leaf] = value


def load_run_config(args) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    data = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
    for name in ("seed", "out_dir", "train_src", "train_tgt", "test_src", "test_tgt",
                 "src_vocab", "tgt_vocab", "max_len", "mono_checkpoint", "base_checkpoint",
                 "per_read_cap", "bleu_unit"):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if getattr(args, "thresholds", None):
        data["thresholds"] = _parse_thresholds(args.thresholds)
    if getattr(args, "finetune", False):
        data["finetune"] = True
    if getattr(args, "epochs", None) is not None:
        for section in ("mono", "simul"):
            data.setdefault(section, {})["epochs"] = args.epochs
    for assignment in getattr(args, "set", None) or []:
        _apply_set(data, assignment)
    return RunConfig.from_dict(data)


def _parse_thresholds(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad threshold list {text!r}") from None
    return values


def _check_thresholds(values):
    if not values:
        raise UsageError("empty threshold list")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise UsageError(f"thresholds must be strictly increasing, got {values}")
    if values[0] <= 0:
        raise UsageError("thresholds must be > 0")


def require_files(*paths):
    for p in paths:
        if p is None:
            raise InputError("a required input path is not configured")
        if not Path(p).is_file():
            raise InputError(f"missing input file: {p}")


def echo_config(cfg: RunConfig, out_dir: Path, name="config.json"):
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / name, cfg.to_json())


class FileLog(TrainLog):
    """Training log mirrored to a file, rewritten atomically after every line."""

    def __init__(self, path):
        super().__init__()
        self.path = Path(path)
        atomic_write_text(self.path, "")

    def emit(self, line):
        super().emit(line)
        atomic_write_text(self.path, "".join(l + "\n" for l in self.lines))


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _vocabs(cfg: RunConfig):
    if cfg.src_vocab and cfg.tgt_vocab:
        require_files(cfg.src_vocab, cfg.tgt_vocab)
        return Vocabulary.load(cfg.src_vocab), Vocabulary.load(cfg.tgt_vocab)
    return (build_vocab(line.split() for line in read_lines(cfg.train_src)),
            build_vocab(line.split() for line in read_lines(cfg.train_tgt)))


def _corpus(src_path, tgt_path, sv, tv, max_len):
    return encode_pairs(read_lines(src_path), read_lines(tgt_path), sv, tv, max_len)


def _words(line, unit):
    tokens = line.split()
    if unit == "word" and any(t.endswith(END_OF_WORD) for t in tokens):
        return detokenize(tokens).split()
    return tokens


def _encode_sources(path, vocab):
    return [vocab.encode(line.split()) for line in read_lines(path)]


def _hyp_text(outputs, vocab):
    return "".join(" ".join(vocab.decode(o)) + "\n" for o in outputs)


def _save_hook(path):
    return lambda ckpt: ckpt.save(path)


def _load_ckpt(path):
    require_files(path)
    return Checkpoint.load(path)


def run_evaluation(hyp_lines, ref_line_sets, traces=None, unit="word", word_sources=None):
    """``word_sources`` (tokenized source lines) switches latency to word units."""
    hyps = [_words(h, unit) for h in hyp_lines]
    refs = [[_words(r, unit) for r in rs] for rs in ref_line_sets]
    latency = None
    if traces is not None and word_sources is not None:
        latency = LatencyReport.from_word_traces(traces, word_sources, END_OF_WORD)
    return evaluate(hyps, refs, traces, None if traces is None else [t.num_reads for t in traces],
                    latency)


def _reference_sets(paths, n):
    columns = [read_lines(p) for p in paths]
    for p, col in zip(paths, columns):
        if len(col) != n:
            raise InputError(f"{p}: {len(col)} lines, expected {n}")
    return [list(refs) for refs in zip(*columns)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_bpe_learn(args):
    lines = [l for p in args.input for l in read_lines(p)]
    learn_bpe(lines, args.merges).save(args.output)


def cmd_bpe_apply(args):
    model = BpeModel.load(args.model)
    out = "".join(" ".join(apply_bpe(line, model)) + "\n" for line in read_lines(args.input))
    atomic_write_text(args.output, out)


def cmd_bpe_detok(args):
    atomic_write_text(args.output,
                      "".join(detokenize(line.split()) + "\n" for line in read_lines(args.input)))


def cmd_vocab_build(args):
    vocab = build_vocab((l.split() for p in args.input for l in read_lines(p)),
                        min_frequency=args.min_frequency)
    vocab.save(args.output)


def _train_setup(args, need_train=True):
    cfg = load_run_config(args)
    if need_train:
        require_files(cfg.train_src, cfg.train_tgt)
    out = Path(cfg.out_dir)
    return cfg, out


def cmd_train_mono(args):
    cfg, out = _train_setup(args)
    mcfg = cfg.mono_config()
    sv, tv = _vocabs(cfg)
    pairs = _corpus(cfg.train_src, cfg.train_tgt, sv, tv, cfg.max_len)
    echo_config(cfg, out)
    target = Path(args.output or out / "mono.ckpt")
    ckpt, _ = train_monolstm(pairs, mcfg, sv, tv, logger=FileLog(out / "mono.log"),
                             on_checkpoint=_save_hook(target))
    ckpt.save(target)


def cmd_pretrain_full(args):
    cfg, out = _train_setup(args)
    scfg = cfg.simul_config()
    sv, tv = _vocabs(cfg)
    pairs = _corpus(cfg.train_src, cfg.train_tgt, sv, tv, cfg.max_len)
    echo_config(cfg, out)
    target = Path(args.output or out / "full.ckpt")
    ckpt, _ = train_full_sentence(pairs, scfg, sv, tv, logger=FileLog(out / "full.log"),
                                  on_checkpoint=_save_hook(target))
    ckpt.save(target)


def cmd_train_simul(args):
    cfg, out = _train_setup(args)
    require_files(args.prefixes)
    scfg = cfg.simul_config()
    sv, tv = _vocabs(cfg)
    pairs = _corpus(cfg.train_src, cfg.train_tgt, sv, tv, cfg.max_len)
    _, prefixes = read_prefix_file(args.prefixes)
    echo_config(cfg, out)
    target = Path(args.output or out / "simul.ckpt")
    ckpt, _ = train_mixed(pairs, prefixes, scfg, sv, tv, logger=FileLog(out / "simul.log"),
                          on_checkpoint=_save_hook(target))
    ckpt.save(target)


def cmd_finetune(args):
    cfg, out = _train_setup(args)
    require_files(args.prefixes)
    base = _load_ckpt(args.base or cfg.base_checkpoint)
    scfg = cfg.simul_config()
    pairs = _corpus(cfg.train_src, cfg.train_tgt, base.src_vocab, base.tgt_vocab, cfg.max_len)
    _, prefixes = read_prefix_file(args.prefixes)
    echo_config(cfg, out)
    target = Path(args.output or out / "finetuned.ckpt")
    ckpt, _ = finetune(base, pairs, prefixes, scfg, cfg.finetune_lr_factor,
                       logger=FileLog(out / "finetune.log"), on_checkpoint=_save_hook(target))
    ckpt.save(target)


def cmd_gen_prefixes(args):
    ckpt = _load_ckpt(args.checkpoint)
    require_files(args.src, args.tgt)
    model = MonoLstm.from_checkpoint(ckpt)
    pairs = _corpus(args.src, args.tgt, ckpt.src_vocab, ckpt.tgt_vocab, args.max_len)
    prefixes = generate_corpus_prefixes(pairs, model, GenerationConfig(args.threshold))
    write_prefix_file(args.output, prefixes, args.threshold)


def cmd_decode(args):
    try:
        parse_policy(args.policy)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ckpt = _load_ckpt(args.checkpoint)
    require_files(args.input)
    model = as_model(ckpt)
    sources = _encode_sources(args.input, ckpt.src_vocab)
    outs, traces = decode_corpus(sources, model, args.policy, args.per_read_cap, args.carry_state)
    atomic_write_text(args.output, _hyp_text(outs, ckpt.tgt_vocab))
    if args.traces:
        atomic_write_text(args.traces, format_traces(traces, ckpt.tgt_vocab.itos))


def cmd_evaluate(args):
    require_files(args.hypotheses, *args.references)
    hyps = read_lines(args.hypotheses)
    refs = _reference_sets(args.references, len(hyps))
    traces = None
    if args.traces:
        require_files(args.traces)
        traces = read_traces(args.traces)
        if len(traces) != len(hyps):
            raise InputError(f"{args.traces}: {len(traces)} traces for {len(hyps)} hypotheses")
    word_sources = None
    if args.al_unit == "word":
        if traces is None or not args.source:
            raise UsageError("--al-unit word needs --traces and --source")
        require_files(args.source)
        word_sources = [line.split() for line in read_lines(args.source)]
        if len(word_sources) != len(hyps):
            raise InputError(f"{args.source}: {len(word_sources)} lines for {len(hyps)} hypotheses")
    report = run_evaluation(hyps, refs, traces, args.unit, word_sources).to_text()
    if args.output:
        atomic_write_text(args.output, report)
    sys.stdout.write(report)


# -- sweep -------------------------------------------------------------------


def _format_row(e, al, bleu, seconds):
    return [e, f"{al:.4f}", f"{bleu:.4f}", f"{seconds:.2f}"]


def write_sweep_csv(path, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def read_sweep_csv(path):
    """Parse a sweep CSV, rejecting any header other than ``e,al,bleu,seconds``."""
    rows = list(csv.reader(Path(path).read_text(encoding="utf-8").splitlines()))
    if not rows or tuple(rows[0]) != SWEEP_HEADER:
        raise InputError(f"{path}: expected header {','.join(SWEEP_HEADER)}")
    return rows[1:]


def _decode_and_score(ckpt, test_sources, ref_sets, policy, cfg, stage_dir):
    model = as_model(ckpt)
    outs, traces = decode_corpus(test_sources, model, policy, cfg.per_read_cap)
    hyp_text = _hyp_text(outs, ckpt.tgt_vocab)
    atomic_write_text(stage_dir / "hyp.txt", hyp_text)
    atomic_write_text(stage_dir / "trace.txt", format_traces(traces, ckpt.tgt_vocab.itos))
    report = run_evaluation(hyp_text.splitlines(), ref_sets, traces, cfg.bleu_unit)
    atomic_write_text(stage_dir / "report.txt", report.to_text())
    return report


def run_sweep(cfg: RunConfig):
    """Full-sentence baseline plus one adaptive model per threshold; returns the CSV rows."""
    _check_thresholds(cfg.thresholds)
    require_files(cfg.train_src, cfg.train_tgt, cfg.test_src, cfg.test_tgt, *cfg.extra_refs)
    mono = _load_ckpt(cfg.mono_checkpoint)
    out = Path(cfg.out_dir)
    scfg = cfg.simul_config()
    echo_config(cfg, out)
    sv, tv = mono.src_vocab, mono.tgt_vocab
    pairs = _corpus(cfg.train_src, cfg.train_tgt, sv, tv, cfg.max_len)
    test_sources = _encode_sources(cfg.test_src, sv)
    ref_sets = _reference_sets([cfg.test_tgt, *cfg.extra_refs], len(test_sources))

    mono_model = MonoLstm.from_checkpoint(mono)
    attention = {p.line: attention_matrix(p, mono_model) for p in pairs}

    full_dir = out / "full"
    full_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    if cfg.base_checkpoint:
        base = _load_ckpt(cfg.base_checkpoint)
    else:
        base, _ = train_full_sentence(pairs, scfg, sv, tv, logger=FileLog(full_dir / "train.log"))
        base.save(full_dir / "model.ckpt")
    full_seconds = time.perf_counter() - start
    full_report = _decode_and_score(base, test_sources, ref_sets, "full", cfg, full_dir)
    full_row = _format_row("full", full_report.latency.mean, full_report.bleu.score, full_seconds)

    rows = []
    for e in cfg.thresholds:
        stage = out / f"e{e}"
        stage.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        try:
            prefixes = generate_corpus_prefixes(pairs, None, GenerationConfig(e), attention)
            write_prefix_file(stage / "prefixes.tsv", prefixes, e)
            logger = FileLog(stage / "train.log")
            if cfg.finetune:
                ckpt, _ = finetune(base, pairs, prefixes, scfg, cfg.finetune_lr_factor, logger=logger)
            else:
                ckpt, _ = train_mixed(pairs, prefixes, scfg, sv, tv, logger=logger)
            seconds = time.perf_counter() - start
            ckpt.save(stage / "model.ckpt")
            report = _decode_and_score(ckpt, test_sources, ref_sets, "adaptive", cfg, stage)
            rows.append(_format_row(repr(e), report.latency.mean, report.bleu.score, seconds))
            log.info("e=%s al=%.4f bleu=%.4f seconds=%.2f", e, report.latency.mean,
                     report.bleu.score, seconds)
        except (InputError, CompatibilityError, TrainingError, ValueError, OSError) as exc:
            log.error("e=%s failed: %s", e, exc)
            rows.append([repr(e), "error", "error", f"{time.perf_counter() - start:.2f}"])
        write_sweep_csv(out / "sweep.csv", rows + [full_row])
    return rows + [full_row]


def cmd_sweep(args):
    cfg = load_run_config(args)
    rows = run_sweep(cfg)
    for row in rows:
        sys.stdout.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_run_flags(p, thresholds=False):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, help="override epochs of every model config")
    p.add_argument("--train-src", dest="train_src")
    p.add_argument("--train-tgt", dest="train_tgt")
    p.add_argument("--src-vocab", dest="src_vocab")
    p.add_argument("--tgt-vocab", dest="tgt_vocab")
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field, e.g. simul.lr=0.01")
    p.add_argument("--output", help="checkpoint path (default: inside --out-dir)")
    if thresholds:
        p.add_argument("--test-src", dest="test_src")
        p.add_argument("--test-tgt", dest="test_tgt")
        p.add_argument("--mono", dest="mono_checkpoint")
        p.add_argument("--base", dest="base_checkpoint")
        p.add_argument("--thresholds", help="comma-separated, strictly increasing")
        p.add_argument("--finetune", action="store_true",
                       help="fine-tune the full-sentence model for one epoch per threshold")
        p.add_argument("--per-read-cap", dest="per_read_cap", type=int)
        p.add_argument("--bleu-unit", dest="bleu_unit", choices=("word", "subword"))


def build_parser():
    parser = _Parser(prog="simulprefix", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bpe-learn", help="learn BPE merges")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--merges", type=int, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_bpe_learn)

    p = sub.add_parser("bpe-apply", help="segment text into subwords")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_bpe_apply)

    p = sub.add_parser("bpe-detok", help="merge subwords back into words")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_bpe_detok)

    p = sub.add_parser("vocab-build", help="build a vocabulary file")
    p.add_argument("--input", nargs="*", default=[])
    p.add_argument("--output", required=True)
    p.add_argument("--min-frequency", type=int, default=1)
    p.set_defaults(func=cmd_vocab_build)

    for name, func, help_text in (
        ("train-mono", cmd_train_mono, "train the attention measurement model"),
        ("pretrain-full", cmd_pretrain_full, "train the translation model on full pairs"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_run_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("train-simul", help="train on a 1:1 mix of full and prefix pairs")
    _add_run_flags(p)
    p.add_argument("--prefixes", required=True)
    p.set_defaults(func=cmd_train_simul)

    p = sub.add_parser("finetune", help="one epoch of mixed training from a full-sentence model")
    _add_run_flags(p)
    p.add_argument("--prefixes", required=True)
    p.add_argument("--base")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("gen-prefixes", help="extract prefix pairs at threshold e")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--threshold", "-e", type=float, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    p.set_defaults(func=cmd_gen_prefixes)

    p = sub.add_parser("decode", help="translate a source file under a read/write policy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--policy", default="adaptive", help="adaptive | full | waitk:<k>")
    p.add_argument("--output", required=True)
    p.add_argument("--traces")
    p.add_argument("--per-read-cap", type=int, default=PER_READ_CAP)
    p.add_argument("--carry-state", action="store_true",
                   help="keep decoder state across reads instead of rebuilding it")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="BLEU and average lagging report")
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--references", nargs="+", required=True)
    p.add_argument("--traces")
    p.add_argument("--unit", choices=("word", "subword"), default="word",
                   help="BLEU unit")
    p.add_argument("--al-unit", choices=("word", "subword"), default="subword")
    p.add_argument("--source", help="tokenized source file, needed for --al-unit word")
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="quality/latency sweep over thresholds")
    _add_run_flags(p, thresholds=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"simulprefix: usage error: {exc}\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"simulprefix: usage error: {exc}\n")
        return EXIT_USAGE
    except TrainingError as exc:
        sys.stderr.write(f"simulprefix: training failed: {exc}\n")
        return EXIT_TRAINING
    except (InputError, CompatibilityError, OSError, ValueError) as exc:
        sys.stderr.write(f"simulprefix: error: {exc}\n")
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
