"""Command-line entry point: ``pmgnat <subcommand>``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure. ``PMGNAT_THREADS`` sets the torch thread count and
``PMGNAT_OUTPUT_DIR`` overrides the configured run directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, DataError, PmgError


def _text_vocab(*files: Path):
    from .corpus import Vocabulary, read_lines
    return Vocabulary.build(line for f in files for line in read_lines(f))


def _text_pairs(src: Path, tgt: Path, vocab):
    from .corpus import load_parallel
    pairs, report = load_parallel(src, tgt, vocab)
    if report.kept != report.read:
        raise DataError(f"{src}: {report.read - report.kept} empty or overlong lines; clean the files first")
    return pairs


def _open_out(path: str | None):
    return open(path, "w", encoding="utf-8") if path and path != "-" else sys.stdout


def _read_input(path: str | None) -> list[str]:
    if path and path != "-":
        with open(path, encoding="utf-8") as f:
            return [line.rstrip("\n") for line in f]
    return [line.rstrip("\n") for line in sys.stdin]


# -- subcommands ---------------------------------------------------------------------

def cmd_bpe_learn(args) -> None:
    from .corpus import learn_bpe, read_lines
    lines = [line for f in args.files for line in read_lines(f)]
    learn_bpe(lines, args.merges).save(args.codes)


def cmd_bpe_apply(args) -> None:
    from .corpus import BPE, MergeList
    bpe = BPE(MergeList.load(args.codes))
    with _open_out(args.output) as out:
        for line in _read_input(args.input):
            out.write(" ".join(bpe(line.split())) + "\n")


def cmd_align(args) -> None:
    from .align import align_corpus, reverse_pairs, train_model1, write_alignments
    vocab = _text_vocab(args.src, args.tgt)
    pairs = _text_pairs(args.src, args.tgt, vocab)
    fwd = train_model1(pairs, args.iterations)
    rev = train_model1(reverse_pairs(pairs), args.iterations)
    write_alignments(args.output, align_corpus(pairs, fwd, rev, args.heuristic))
    if args.tables:
        fwd.dump(f"{args.tables}.fwd.tsv", vocab, vocab)
        rev.dump(f"{args.tables}.rev.tsv", vocab, vocab)


def cmd_extract(args) -> None:
    from .align import read_alignments
    from .phrase import extract_corpus, score_phrase_table, write_phrase_table
    vocab = _text_vocab(args.src, args.tgt)
    pairs = _text_pairs(args.src, args.tgt, vocab)
    alignments = read_alignments(args.alignments, pairs)
    write_phrase_table(args.output, score_phrase_table(extract_corpus(pairs, alignments, args.max_len)), vocab)


def cmd_filter(args) -> None:
    from .phrase import filter_table, read_phrase_table, write_phrase_table
    table = read_phrase_table(args.table, _table_vocab(args.table))
    kept = filter_table(table, args.threshold, args.both_directions)
    write_phrase_table(args.output, kept, _table_vocab(args.table))
    logging.getLogger(__name__).info("kept %d of %d entries", len(kept), len(table))


def _table_vocab(path: Path):
    from .corpus import Vocabulary, read_lines
    toks = []
    for line in read_lines(path):
        parts = line.split("|||")
        if len(parts) >= 2:
            toks.extend(parts[0].split() + parts[1].split())
    return Vocabulary(dict.fromkeys(toks))


def cmd_datasets(args) -> None:
    from .align import TranslationTable, read_alignments
    from .phrase import (ExternalScorer, Granularity, LexicalScorer, build_granularity_datasets,
                         quality_filter, read_phrase_table, write_datasets)
    vocab = _text_vocab(args.src, args.tgt)
    pairs = _text_pairs(args.src, args.tgt, vocab)
    alignments = read_alignments(args.alignments, pairs)
    table = read_phrase_table(args.table, vocab)
    datasets = build_granularity_datasets(pairs, alignments, table)
    if args.keep_ratio < 1.0 or args.scores:
        if args.scores:
            scorer = ExternalScorer.from_tsv(args.scores, vocab)
        elif args.lexical_table:
            scorer = LexicalScorer(TranslationTable.load(args.lexical_table, vocab, vocab))
        else:
            raise ConfigError("--keep-ratio below 1 needs --scores or --lexical-table")
        for g in (Granularity.WORD, Granularity.PHRASE):
            datasets[g] = quality_filter(datasets[g], args.keep_ratio, scorer)
    write_datasets(args.output, datasets, vocab)


def cmd_train(args) -> None:
    import dataclasses

    from .config import load_config
    from .corpus import Vocabulary, load_parallel
    from .curriculum import pmg_schedule
    from .natmodel import ModelConfig, OptimizerConfig, save_checkpoint
    from .phrase import read_datasets
    from .pipeline import apply_thread_env, derive_seed
    from .trainer import TrainConfig, train

    apply_thread_env()
    cfg = load_config(args.config)
    vocab = Vocabulary.load(args.vocab)
    datasets = read_datasets(args.datasets, vocab)
    valid = []
    if args.valid_src and args.valid_tgt:
        valid = [(p.source, p.target) for p in load_parallel(args.valid_src, args.valid_tgt, vocab)[0]]
    s = cfg.schedule
    budgets = (s.word_steps, s.phrase_steps, s.sentence_steps)
    schedule = pmg_schedule(*budgets) if s.strategy == "pmg" else pmg_schedule(0, 0, sum(budgets))
    opt = OptimizerConfig(cfg.optim.lr, cfg.optim.warmup, (cfg.optim.beta1, cfg.optim.beta2),
                          cfg.optim.eps, cfg.optim.weight_decay)
    tcfg = TrainConfig(s.token_budget, s.strategy, s.n_bins, s.c0, s.dcl_cumulative, s.mix_tail,
                       cfg.run.valid_every, cfg.decode.iterations, cfg.decode.length_beam,
                       cfg.decode.length_prior)
    seed = args.seed if args.seed is not None else cfg.run.seed
    ckpt = train(datasets, schedule, ModelConfig(len(vocab), **dataclasses.asdict(cfg.model)), opt, tcfg,
                 derive_seed(seed, "train"), valid)
    ckpt.extra = {"strategy": s.strategy}
    save_checkpoint(ckpt, args.output)


def cmd_decode(args) -> None:
    from .corpus import BPE, MergeList, Vocabulary, detokenize
    from .natmodel import decode_all, load_checkpoint
    from .pipeline import apply_thread_env

    apply_thread_env()
    ckpt = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    bpe = BPE(MergeList.load(args.codes)) if args.codes else None
    lines = _read_input(args.input)
    sources = []
    for line in lines:
        toks = line.split()
        toks = bpe(toks) if bpe else toks
        if not toks:
            raise DataError("empty input line")
        sources.append(vocab.encode(toks[: ckpt.config.max_length]))
    hyps = decode_all(ckpt, sources, args.iterations, args.length_beam,
                      length_prior=not args.no_length_prior)
    with _open_out(args.output) as out:
        for h in hyps:
            toks = vocab.decode(h)
            out.write(" ".join(detokenize(toks) if bpe else toks) + "\n")


def cmd_evaluate(args) -> None:
    from .metrics import evaluate, length_binned_eval
    hyps = [line.split() for line in _read_input(args.hyp)]
    refs = [line.split() for line in _read_input(args.ref)]
    if len(hyps) != len(refs):
        raise DataError(f"hypothesis/reference count mismatch {len(hyps)} vs {len(refs)}")
    report = evaluate(hyps, refs)
    if args.src:
        sources = [line.split() for line in _read_input(args.src)]
        edges = [math.inf if e == "inf" else float(e) for e in args.bins.split(",")]
        report.length_bins = [{"low": b.low, "high": b.high, "count": b.count, "bleu": b.bleu_a,
                               "ribes": b.ribes_a}
                              for b in length_binned_eval(hyps, hyps, refs, sources, edges)]
    doc = report.to_json()
    for b in doc["length_bins"]:
        b["high"] = "inf" if math.isinf(b["high"]) else b["high"]
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.json:
        Path(args.json).write_text(text + "\n")
    print(f"BLEU {report.bleu:.2f}  RIBES {report.ribes:.4f}")


def cmd_compare(args) -> None:
    from .pipeline import compare_runs
    rep = compare_runs(args.run_a, args.run_b, args.output, args.resamples, args.label_a, args.label_b)
    s = rep["scores"]
    print(f"BLEU  {args.label_a} {s['bleu_a']:.2f}  {args.label_b} {s['bleu_b']:.2f}  delta {s['bleu_delta']:+.2f}")
    print(f"RIBES {args.label_a} {s['ribes_a']:.4f}  {args.label_b} {s['ribes_b']:.4f}  delta {s['ribes_delta']:+.4f}")
    print("n-gram BLEU delta: " + "  ".join(f"{n}:{d:+.2f}" for n, d in rep["ngram_delta"].items()))
    for g, row in rep["granularity"]["rows"].items():
        print(f"{g:<9} {row['bleu_a']:6.2f} {row['bleu_b']:6.2f} {row['delta']:+6.2f}")
    print(f"p = {rep['significance']['p_value']:.3f}")


def _load_cfg(args):
    from .config import load_config
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = args.seed
    return load_config(args.config, overrides)


def cmd_pipeline(args) -> None:
    from .pipeline import run_pipeline
    cfg = _load_cfg(args)
    manifest = run_pipeline(cfg, resume=args.resume, out_dir=args.output_dir,
                            progress=lambda m: print(m, file=sys.stderr))
    out = Path(args.output_dir) if args.output_dir else cfg.output_dir
    report = json.loads((out / "report.json").read_text())
    print(f"BLEU {report['bleu']:.2f}  RIBES {report['ribes']:.4f}  "
          f"(stages run: {', '.join(manifest.executed) or 'none'})")


def cmd_sweep(args) -> None:
    from .pipeline import ratio_sweep
    cfg = _load_cfg(args)
    ratios = [float(r) for r in args.ratios.split(",")]
    out = args.output_dir or str(cfg.output_dir)
    for row in ratio_sweep(cfg, out, ratios, args.resume, progress=lambda m: print(m, file=sys.stderr)):
        print(f"{row['ratio']:.2f}  {row['bleu']:.2f}  {row['baseline_bleu']:.2f}  {row['delta']:+.2f}")


# -- argument parsing ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmgnat", description="Progressive multi-granularity NAT training")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    bpe = sub.add_parser("bpe", help="learn or apply BPE merges").add_subparsers(dest="action", required=True)
    s = bpe.add_parser("learn")
    s.add_argument("files", nargs="+", type=Path)
    s.add_argument("--merges", type=int, required=True)
    s.add_argument("--codes", type=Path, required=True)
    s.set_defaults(func=cmd_bpe_learn)
    s = bpe.add_parser("apply")
    s.add_argument("--codes", type=Path, required=True)
    s.add_argument("--input")
    s.add_argument("--output")
    s.set_defaults(func=cmd_bpe_apply)

    s = sub.add_parser("align", help="IBM Model 1 in both directions, symmetrized")
    s.add_argument("--src", type=Path, required=True)
    s.add_argument("--tgt", type=Path, required=True)
    s.add_argument("--iterations", type=int, default=5)
    s.add_argument("--heuristic", default="grow-diag-final",
                   choices=("intersection", "union", "grow-diag-final"))
    s.add_argument("--output", type=Path, required=True)
    s.add_argument("--tables", help="also dump t(f|e) tables to <prefix>.fwd.tsv/.rev.tsv")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("extract", help="phrase extraction and scoring")
    s.add_argument("--src", type=Path, required=True)
    s.add_argument("--tgt", type=Path, required=True)
    s.add_argument("--alignments", type=Path, required=True)
    s.add_argument("--max-len", type=int, default=6)
    s.add_argument("--output", type=Path, required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("filter", help="probability-threshold filter of a phrase table")
    s.add_argument("--table", type=Path, required=True)
    s.add_argument("--threshold", type=float, default=0.05)
    s.add_argument("--both-directions", action="store_true")
    s.add_argument("--output", type=Path, required=True)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("datasets", help="word / phrase / sentence training sets")
    s.add_argument("--src", type=Path, required=True)
    s.add_argument("--tgt", type=Path, required=True)
    s.add_argument("--alignments", type=Path, required=True)
    s.add_argument("--table", type=Path, required=True)
    s.add_argument("--keep-ratio", type=float, default=1.0)
    s.add_argument("--scores", type=Path, help="external quality scores TSV")
    s.add_argument("--lexical-table", type=Path, help="forward t(f|e) table for lexical scoring")
    s.add_argument("--output", type=Path, required=True)
    s.set_defaults(func=cmd_datasets)

    s = sub.add_parser("train", help="train a CMLM on granularity datasets")
    s.add_argument("--config", type=Path)
    s.add_argument("--datasets", type=Path, required=True)
    s.add_argument("--vocab", type=Path, required=True)
    s.add_argument("--valid-src", type=Path)
    s.add_argument("--valid-tgt", type=Path)
    s.add_argument("--seed", type=int)
    s.add_argument("--output", type=Path, required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("decode", help="mask-predict decoding")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--vocab", type=Path, required=True)
    s.add_argument("--codes", type=Path, help="BPE merges to segment raw input")
    s.add_argument("--iterations", type=int, default=10)
    s.add_argument("--length-beam", type=int, default=3)
    s.add_argument("--no-length-prior", action="store_true",
                   help="rank length candidates by mean token log-prob only")
    s.add_argument("--input")
    s.add_argument("--output")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("evaluate", help="BLEU and RIBES of a hypothesis file")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--src", help="source file, enables length bins")
    s.add_argument("--bins", default="0,5,10,inf")
    s.add_argument("--json", type=Path)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", help="compare two evaluated runs")
    s.add_argument("run_a", type=Path)
    s.add_argument("run_b", type=Path)
    s.add_argument("--output", type=Path)
    s.add_argument("--resamples", type=int, default=1000)
    s.add_argument("--label-a", default="A")
    s.add_argument("--label-b", default="B")
    s.set_defaults(func=cmd_compare)

    for name, func, text in (("pipeline", cmd_pipeline, "run every stage"),
                             ("sweep", cmd_sweep, "quality keep-ratio sweep against a sentence-only baseline")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", type=Path)
        s.add_argument("--output-dir")
        s.add_argument("--seed", type=int)
        s.add_argument("--resume", action="store_true")
        if name == "sweep":
            s.add_argument("--ratios", default="0.10,0.35,0.50,1.00")
        s.set_defaults(func=func)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except PmgError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
