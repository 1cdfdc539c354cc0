"""Resumable end-to-end runs: bpe -> align -> extract -> filter -> datasets ->
train -> evaluate, plus run comparison and the keep-ratio sweep.

Every stage writes its artifacts into the run directory and records their
sha256 in ``manifest.json``. On resume a stage is skipped only when its
recorded hashes still match the files on disk, its configuration
fingerprint is unchanged and no earlier stage reran.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import toydata
from .align import TranslationTable, align_corpus, read_alignments, reverse_pairs, train_model1, write_alignments
from .config import RunConfig
from .corpus import BPE, MergeList, Vocabulary, detokenize, learn_bpe, load_parallel, read_lines
from .curriculum import pmg_schedule
from .errors import DataError, PmgError
from .metrics import (bleu_details, evaluate, granularity_eval, length_binned_eval, ngram_delta, ribes,
                      significance, write_gnuplot_script, write_json, write_length_bins)
from .natmodel import ModelConfig, OptimizerConfig, decode_all, load_checkpoint, save_checkpoint
from .phrase import (ORDER, ExternalScorer, Granularity, LexicalScorer, SWEEP_RATIOS, build_granularity_datasets,
                     extract_corpus, filter_table, quality_filter, read_datasets, read_phrase_table,
                     score_phrase_table, write_datasets, write_phrase_table)
from .trainer import TrainConfig, train

logger = logging.getLogger(__name__)

STAGES = ("bpe", "align", "extract", "filter", "datasets", "train", "evaluate")
SPLITS = ("train", "valid", "test")
MANIFEST = "manifest.json"


def derive_seed(seed: int, name: str) -> int:
    """Per-stage seed: first 8 bytes of sha256("<seed>:<name>"), as a 63-bit int."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class StageRecord:
    status: str
    fingerprint: str
    artifacts: dict[str, str]


@dataclass
class RunManifest:
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    stages: dict[str, StageRecord] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)
    executed: list[str] = field(default_factory=list)

    def artifact_hashes(self) -> dict[str, str]:
        return {name: h for rec in self.stages.values() for name, h in rec.artifacts.items()}

    def complete(self) -> bool:
        return all(s in self.stages and self.stages[s].status == "complete" for s in STAGES)

    def save(self, path: str | Path) -> None:
        d = dataclasses.asdict(self)
        d.pop("executed")
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        stages = {k: StageRecord(**v) for k, v in d.get("stages", {}).items()}
        return cls(d["config"], d.get("inputs", {}), stages, d.get("timing", {}))


# -- stage fingerprints ------------------------------------------------------------

def _fingerprint(cfg: RunConfig, stage: str, inputs: dict[str, str]) -> str:
    d = cfg.to_dict()
    parts: dict = {
        "bpe": {"inputs": inputs, "bpe": d["bpe"]},
        "align": {"align": d["align"]},
        "extract": {"max_len": d["phrase"]["max_len"]},
        "filter": {k: d["phrase"][k] for k in ("threshold", "both_directions")},
        "datasets": {k: d["phrase"][k] for k in ("keep_ratio", "quality_scores")},
        "train": {"schedule": d["schedule"], "model": d["model"], "optim": d["optim"],
                  "decode": d["decode"], "run": d["run"]},
        "evaluate": {"decode": d["decode"], "eval": d["eval"]},
    }[stage]
    if stage == "datasets" and cfg.phrase.quality_scores:
        parts["scores_hash"] = file_hash(cfg.resolve(cfg.phrase.quality_scores))
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()


def corpus_paths(cfg: RunConfig) -> dict[str, Path]:
    """Resolved raw text files; unset entries fall back to the bundled toy corpus."""
    out = {}
    for split in SPLITS:
        toy_src, toy_tgt = toydata.toy_paths(split)
        for side, toy in (("src", toy_src), ("tgt", toy_tgt)):
            given = getattr(cfg.paths, f"{split}_{side}")
            out[f"{split}.{side}"] = cfg.resolve(given) if given else toy
    for name, p in out.items():
        if not p.is_file():
            raise DataError(f"missing corpus file {name}: {p}")
    return out


# -- the pipeline ------------------------------------------------------------------

class Run:
    """One run directory; stage methods return the artifact names they wrote."""

    def __init__(self, cfg: RunConfig, out_dir: Path):
        self.cfg = cfg
        self.dir = out_dir
        self._vocab: Vocabulary | None = None
        self._pairs: dict[str, list] = {}

    def path(self, name: str) -> Path:
        return self.dir / name

    @property
    def vocab(self) -> Vocabulary:
        if self._vocab is None:
            self._vocab = Vocabulary.load(self.path("vocab.txt"))
        return self._vocab

    def pairs(self, split: str):
        if split not in self._pairs:
            self._pairs[split], _ = load_parallel(self.path(f"{split}.bpe.src"), self.path(f"{split}.bpe.tgt"),
                                                  self.vocab, self.cfg.bpe.max_length)
            if not self._pairs[split]:
                raise DataError(f"{split} split has no usable sentence pairs")
        return self._pairs[split]

    def segmenters(self) -> tuple[BPE, BPE]:
        if self.cfg.bpe.joint:
            bpe = BPE(MergeList.load(self.path("merges.txt")))
            return bpe, bpe
        return BPE(MergeList.load(self.path("merges.src.txt"))), BPE(MergeList.load(self.path("merges.tgt.txt")))

    # stages

    def stage_bpe(self, raw: dict[str, Path]) -> list[str]:
        src_lines = {s: read_lines(raw[f"{s}.src"]) for s in SPLITS}
        tgt_lines = {s: read_lines(raw[f"{s}.tgt"]) for s in SPLITS}
        n = self.cfg.bpe.merges
        if self.cfg.bpe.joint:
            learn_bpe(src_lines["train"] + tgt_lines["train"], n).save(self.path("merges.txt"))
            written = ["merges.txt"]
        else:
            learn_bpe(src_lines["train"], n).save(self.path("merges.src.txt"))
            learn_bpe(tgt_lines["train"], n).save(self.path("merges.tgt.txt"))
            written = ["merges.src.txt", "merges.tgt.txt"]
        seg_src, seg_tgt = self.segmenters()
        segmented = []
        for split in SPLITS:
            for side, lines, seg in (("src", src_lines, seg_src), ("tgt", tgt_lines, seg_tgt)):
                out = [" ".join(seg(line.split())) for line in lines[split]]
                self.path(f"{split}.bpe.{side}").write_text("".join(o + "\n" for o in out), encoding="utf-8")
                written.append(f"{split}.bpe.{side}")
                if split == "train":
                    segmented.extend(out)
        self._vocab = Vocabulary.build(segmented)
        self._vocab.save(self.path("vocab.txt"))
        return written + ["vocab.txt"]

    def stage_align(self) -> list[str]:
        train = self.pairs("train")
        iters = self.cfg.align.iterations
        fwd = train_model1(train, iters)
        rev = train_model1(reverse_pairs(train), iters)
        fwd.dump(self.path("model1.fwd.tsv"), self.vocab, self.vocab)
        rev.dump(self.path("model1.rev.tsv"), self.vocab, self.vocab)
        h = self.cfg.align.heuristic
        write_alignments(self.path("train.align"), align_corpus(train, fwd, rev, h))
        write_alignments(self.path("test.align"), align_corpus(self.pairs("test"), fwd, rev, h))
        write_json(self.path("align_report.json"),
                   {"forward_log_likelihood": fwd.log_likelihood, "reverse_log_likelihood": rev.log_likelihood})
        return ["model1.fwd.tsv", "model1.rev.tsv", "train.align", "test.align", "align_report.json"]

    def stage_extract(self) -> list[str]:
        out = []
        for split in ("train", "test"):
            pairs = self.pairs(split)
            al = read_alignments(self.path(f"{split}.align"), pairs)
            table = score_phrase_table(extract_corpus(pairs, al, self.cfg.phrase.max_len))
            write_phrase_table(self.path(f"phrases.{split}.txt"), table, self.vocab)
            out.append(f"phrases.{split}.txt")
        return out

    def stage_filter(self) -> list[str]:
        out, report = [], {}
        for split in ("train", "test"):
            table = read_phrase_table(self.path(f"phrases.{split}.txt"), self.vocab)
            kept = filter_table(table, self.cfg.phrase.threshold, self.cfg.phrase.both_directions)
            write_phrase_table(self.path(f"table.{split}.txt"), kept, self.vocab)
            report[split] = {"entries": len(table), "kept": len(kept)}
            out.append(f"table.{split}.txt")
        write_json(self.path("filter_report.json"), report)
        return out + ["filter_report.json"]

    def _granularity_sets(self, split: str):
        pairs = self.pairs(split)
        al = read_alignments(self.path(f"{split}.align"), pairs)
        table = read_phrase_table(self.path(f"table.{split}.txt"), self.vocab)
        return build_granularity_datasets(pairs, al, table)

    def stage_datasets(self) -> list[str]:
        datasets = self._granularity_sets("train")
        ratio = self.cfg.phrase.keep_ratio
        if ratio < 1.0 or self.cfg.phrase.quality_scores:
            if self.cfg.phrase.quality_scores:
                scorer = ExternalScorer.from_tsv(self.cfg.resolve(self.cfg.phrase.quality_scores), self.vocab)
            else:
                scorer = LexicalScorer(TranslationTable.load(self.path("model1.fwd.tsv"), self.vocab, self.vocab))
            for g in (Granularity.WORD, Granularity.PHRASE):
                datasets[g] = quality_filter(datasets[g], ratio, scorer)
        write_datasets(self.path("datasets.train.tsv"), datasets, self.vocab)
        write_datasets(self.path("datasets.test.tsv"), self._granularity_sets("test"), self.vocab)
        write_json(self.path("datasets_report.json"),
                   {"keep_ratio": ratio, "sizes": {g.value: len(datasets[g]) for g in ORDER}})
        return ["datasets.train.tsv", "datasets.test.tsv", "datasets_report.json"]

    def stage_train(self) -> list[str]:
        cfg = self.cfg
        s = cfg.schedule
        if s.strategy == "pmg":
            schedule = pmg_schedule(s.word_steps, s.phrase_steps, s.sentence_steps)
        else:
            schedule = pmg_schedule(0, 0, s.word_steps + s.phrase_steps + s.sentence_steps)
        model_cfg = ModelConfig(vocab_size=len(self.vocab), **dataclasses.asdict(cfg.model))
        opt = OptimizerConfig(lr=cfg.optim.lr, warmup=cfg.optim.warmup, betas=(cfg.optim.beta1, cfg.optim.beta2),
                              eps=cfg.optim.eps, weight_decay=cfg.optim.weight_decay)
        tcfg = TrainConfig(token_budget=s.token_budget, strategy=s.strategy, n_bins=s.n_bins, c0=s.c0,
                           dcl_cumulative=s.dcl_cumulative, mix_tail=s.mix_tail,
                           valid_every=cfg.run.valid_every, decode_iterations=cfg.decode.iterations,
                           length_beam=cfg.decode.length_beam, length_prior=cfg.decode.length_prior)
        datasets = read_datasets(self.path("datasets.train.tsv"), self.vocab)
        valid = [(p.source, p.target) for p in self.pairs("valid")]
        lines: list[str] = []

        def log(msg: str) -> None:
            logger.info(msg)
            lines.append(msg)

        ckpt = train(datasets, schedule, model_cfg, opt, tcfg, derive_seed(cfg.run.seed, "train"), valid, log)
        ckpt.extra = {"strategy": s.strategy}
        save_checkpoint(ckpt, self.path("model.ckpt"))
        self.path("train.log").write_text("".join(line + "\n" for line in lines))
        return ["model.ckpt", "model.ckpt.json", "train.log"]

    def stage_evaluate(self, raw: dict[str, Path]) -> list[str]:
        cfg = self.cfg
        ckpt = load_checkpoint(self.path("model.ckpt"))
        test = self.pairs("test")
        hyp_ids = decode_all(ckpt, [list(p.source) for p in test], cfg.decode.iterations, cfg.decode.length_beam,
                             length_prior=cfg.decode.length_prior)
        hyps = [detokenize(self.vocab.decode(h)) for h in hyp_ids]
        raw_src, raw_tgt = read_lines(raw["test.src"]), read_lines(raw["test.tgt"])
        refs = [raw_tgt[p.pair_id].split() for p in test]
        sources = [raw_src[p.pair_id].split() for p in test]
        _write_lines(self.path("test.hyp"), hyps)
        _write_lines(self.path("test.ref"), refs)
        _write_lines(self.path("test.src"), sources)

        report = evaluate(hyps, refs)
        report.length_bins = [
            {"low": b.low, "high": b.high, "count": b.count, "bleu": b.bleu_a, "ribes": b.ribes_a}
            for b in length_binned_eval(hyps, hyps, refs, sources, cfg.length_edges())]
        gran = granularity_eval(ckpt, read_datasets(self.path("datasets.test.tsv"), self.vocab),
                                cfg.decode.iterations, cfg.decode.length_beam,
                                length_prior=cfg.decode.length_prior)
        write_json(self.path("report.json"), {**report.to_json(), "granularity": gran,
                                              "valid_bleu": ckpt.valid_bleu, "test_count": len(test)})
        return ["test.hyp", "test.ref", "test.src", "report.json"]


def _write_lines(path: Path, token_lines: Sequence[Sequence[str]]) -> None:
    path.write_text("".join(" ".join(t) + "\n" for t in token_lines), encoding="utf-8")


def _valid_record(run: Run, rec: StageRecord | None, fingerprint: str) -> bool:
    if rec is None or rec.status != "complete" or rec.fingerprint != fingerprint or not rec.artifacts:
        return False
    for name, h in rec.artifacts.items():
        p = run.path(name)
        if not p.is_file() or file_hash(p) != h:
            return False
    return True


def apply_thread_env() -> None:
    threads = os.environ.get("PMGNAT_THREADS")
    if threads:
        import torch
        try:
            torch.set_num_threads(int(threads))
        except ValueError:
            from .errors import ConfigError
            raise ConfigError(f"PMGNAT_THREADS must be an integer, got {threads!r}") from None


def run_pipeline(cfg: RunConfig, resume: bool = False, out_dir: str | Path | None = None,
                 progress: Callable[[str], None] | None = None) -> RunManifest:
    """Run every stage in order; returns the manifest (also saved to disk).

    With ``resume`` a stage whose recorded artifacts are intact is skipped,
    unless an earlier stage reran. A failing stage raises its original error
    class with the stage name prefixed; artifacts of earlier stages stay.
    """
    apply_thread_env()
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        from .errors import ConfigError
        raise ConfigError(f"cannot create output dir {out}: {e}") from e
    progress = progress or logger.info
    raw = corpus_paths(cfg)
    inputs = {name: file_hash(p) for name, p in sorted(raw.items())}
    old = RunManifest.load(out / MANIFEST) if resume and (out / MANIFEST).is_file() else None
    manifest = RunManifest(cfg.to_dict(), inputs)
    run = Run(cfg, out)
    actions = {
        "bpe": lambda: run.stage_bpe(raw),
        "align": run.stage_align,
        "extract": run.stage_extract,
        "filter": run.stage_filter,
        "datasets": run.stage_datasets,
        "train": run.stage_train,
        "evaluate": lambda: run.stage_evaluate(raw),
    }
    upstream_ran = False
    for stage in STAGES:
        fp = _fingerprint(cfg, stage, inputs)
        prev = old.stages.get(stage) if old is not None else None
        if not upstream_ran and _valid_record(run, prev, fp):
            manifest.stages[stage] = prev
            manifest.timing[stage] = old.timing.get(stage, 0.0)
            progress(f"stage {stage}: up to date")
            continue
        progress(f"stage {stage}: running")
        t0 = time.perf_counter()
        try:
            names = actions[stage]()
        except PmgError as e:
            manifest.save(out / MANIFEST)
            raise type(e)(f"stage {stage} failed: {e}") from e
        except (OSError, KeyError, ValueError) as e:
            manifest.save(out / MANIFEST)
            raise DataError(f"stage {stage} failed: {e}") from e
        manifest.timing[stage] = round(time.perf_counter() - t0, 3)
        manifest.stages[stage] = StageRecord("complete", fp, {n: file_hash(run.path(n)) for n in names})
        manifest.executed.append(stage)
        manifest.save(out / MANIFEST)
        upstream_ran = True
    return manifest


# -- comparison ------------------------------------------------------------------------

def _run_dir(run: str | Path) -> Path:
    p = Path(run)
    return p.parent if p.name == MANIFEST else p


def _read_tokens(path: Path) -> list[list[str]]:
    return [line.split() for line in read_lines(path)]


def compare_runs(run_a: str | Path, run_b: str | Path, out_dir: str | Path | None = None,
                 resamples: int = 1000, label_a: str = "A", label_b: str = "B") -> dict:
    """Compare two evaluated runs on the same test set (A minus B throughout).

    Sections: overall BLEU/RIBES deltas, per-order n-gram BLEU deltas, the
    per-granularity table, the paired-bootstrap p-value (fraction of
    resamples where B scores at least A) and per-length-bin scores.
    """
    dir_a, dir_b = _run_dir(run_a), _run_dir(run_b)
    man_a, man_b = RunManifest.load(dir_a / MANIFEST), RunManifest.load(dir_b / MANIFEST)
    for m, d in ((man_a, dir_a), (man_b, dir_b)):
        if "evaluate" not in m.stages:
            raise DataError(f"run {d} has not been evaluated")
    for name in ("test.src", "test.tgt"):
        if man_a.inputs.get(name) != man_b.inputs.get(name):
            raise DataError(f"test set mismatch: {name} differs between {dir_a} and {dir_b}")
    for name in ("test.ref", "test.src"):
        if man_a.stages["evaluate"].artifacts[name] != man_b.stages["evaluate"].artifacts[name]:
            raise DataError(f"test set mismatch: {name} differs between {dir_a} and {dir_b}")

    hyps_a, hyps_b = _read_tokens(dir_a / "test.hyp"), _read_tokens(dir_b / "test.hyp")
    refs, sources = _read_tokens(dir_a / "test.ref"), _read_tokens(dir_a / "test.src")
    rep_a = json.loads((dir_a / "report.json").read_text())
    rep_b = json.loads((dir_b / "report.json").read_text())

    ba, bb = bleu_details(hyps_a, refs), bleu_details(hyps_b, refs)
    ra, rb = ribes(hyps_a, refs), ribes(hyps_b, refs)
    scores = {"bleu_a": ba.score, "bleu_b": bb.score, "bleu_delta": ba.score - bb.score,
              "ribes_a": ra, "ribes_b": rb, "ribes_delta": ra - rb}
    ngrams = {str(n): d for n, d in ngram_delta(hyps_a, hyps_b, refs).items()}
    same_sets = (man_a.stages["datasets"].artifacts.get("datasets.test.tsv")
                 == man_b.stages["datasets"].artifacts.get("datasets.test.tsv"))
    granularity = {}
    for g in ORDER:
        ga, gb = rep_a["granularity"].get(g.value), rep_b["granularity"].get(g.value)
        if ga is None or gb is None:
            continue
        granularity[g.value] = {"count": ga["count"], "bleu_a": ga["bleu"], "bleu_b": gb["bleu"],
                                "delta": ga["bleu"] - gb["bleu"]}
    seed = derive_seed(man_a.config["run"]["seed"], "compare")
    p = significance(hyps_a, hyps_b, refs, resamples=resamples, seed=seed % (2**32))
    edges = [math.inf if str(e) == "inf" else float(e) for e in man_a.config["eval"]["length_bins"]]
    bins = length_binned_eval(hyps_a, hyps_b, refs, sources, edges)

    report = {
        "runs": {"a": str(dir_a), "b": str(dir_b)},
        "scores": scores,
        "ngram_delta": ngrams,
        "granularity": {"same_test_sets": same_sets, "rows": granularity},
        "significance": {"p_value": p, "resamples": resamples},
        "length_bins": [dataclasses.asdict(b) for b in bins],
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "comparison.json", report)
        write_length_bins(out / "length_bins.tsv", bins)
        with open(out / "ngram_delta.tsv", "w", encoding="utf-8") as f:
            f.write("n\tdelta_bleu\n")
            f.writelines(f"{n}\t{d:+.4f}\n" for n, d in ngrams.items())
        write_gnuplot_script(out / "length_bins.gp", "length_bins.tsv", label_a, label_b)
    return report


def ratio_sweep(cfg: RunConfig, out_root: str | Path, ratios: Sequence[float] = SWEEP_RATIOS,
                resume: bool = False, progress: Callable[[str], None] | None = None) -> list[dict]:
    """PMG runs at each quality keep-ratio against one sentence-only baseline.

    Returns one row per ratio: kept fine-grained sample counts, BLEU of the
    PMG run and the baseline, their difference and the bootstrap p-value.
    """
    root = Path(out_root)
    baseline = cfg.replace(schedule={"strategy": "none"}, phrase={"keep_ratio": 1.0})
    run_pipeline(baseline, resume, root / "baseline", progress)
    rows = []
    for r in ratios:
        run_dir = root / f"ratio_{r:.2f}"
        run_pipeline(cfg.replace(schedule={"strategy": "pmg"}, phrase={"keep_ratio": r}), resume, run_dir, progress)
        cmp = compare_runs(run_dir, root / "baseline", run_dir / "vs_baseline", cfg.eval.resamples,
                           f"pmg r={r:.2f}", "sentence-only")
        sizes = json.loads((run_dir / "datasets_report.json").read_text())["sizes"]
        rows.append({"ratio": r, "word_samples": sizes["word"], "phrase_samples": sizes["phrase"],
                     "bleu": cmp["scores"]["bleu_a"], "baseline_bleu": cmp["scores"]["bleu_b"],
                     "delta": cmp["scores"]["bleu_delta"], "p_value": cmp["significance"]["p_value"]})
    with open(root / "sweep.tsv", "w", encoding="utf-8") as f:
        f.write("ratio\tword_samples\tphrase_samples\tbleu\tbaseline_bleu\tdelta\tp_value\n")
        for row in rows:
            f.write(f"{row['ratio']:.2f}\t{row['word_samples']}\t{row['phrase_samples']}\t{row['bleu']:.2f}"
                    f"\t{row['baseline_bleu']:.2f}\t{row['delta']:+.2f}\t{row['p_value']:.3f}\n")
    return rows
