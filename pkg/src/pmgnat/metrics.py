"""Translation metrics and the analysis reports built on them: corpus BLEU,
RIBES, per-n-gram deltas, length-binned scores, paired bootstrap
significance, and per-granularity evaluation of a trained checkpoint."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import DataError

Tokens = Sequence[Hashable]


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hyp: Tokens, ref: Tokens, max_n: int = 4) -> np.ndarray:
    """[hyp_len, ref_len, match_1, total_1, ..., match_N, total_N]."""
    out = [len(hyp), len(ref)]
    for n in range(1, max_n + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        out.append(sum(min(c, r[g]) for g, c in h.items()))
        out.append(max(len(hyp) - n + 1, 0))
    return np.asarray(out, dtype=np.float64)


def corpus_stats(hyps: Sequence[Tokens], refs: Sequence[Tokens], max_n: int = 4) -> np.ndarray:
    if len(hyps) != len(refs):
        raise DataError(f"hypothesis/reference count mismatch {len(hyps)} vs {len(refs)}")
    if not hyps:
        return np.zeros((0, 2 + 2 * max_n))
    return np.stack([sentence_stats(h, r, max_n) for h, r in zip(hyps, refs)])


def brevity_penalty(hyp_len: float, ref_len: float) -> float:
    if hyp_len == 0:
        return 0.0
    return 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)


@dataclass
class BleuResult:
    score: float
    precisions: list[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int


def bleu_from_stats(stats: np.ndarray, smooth: bool = False,
                    effective_order: bool = False) -> BleuResult:
    """Corpus BLEU from summed :func:`sentence_stats` rows.

    Without smoothing, any zero n-gram precision gives 0. ``smooth`` adds one
    to matches and totals for n >= 2. ``effective_order`` drops orders the
    hypotheses are too short to contain.
    """
    stats = np.asarray(stats, dtype=np.float64)
    if stats.ndim == 2:
        stats = stats.sum(0)
    hyp_len, ref_len = stats[0], stats[1]
    max_n = (len(stats) - 2) // 2
    precisions, logs = [], []
    for n in range(1, max_n + 1):
        m, t = stats[2 * n], stats[2 * n + 1]
        if smooth and n > 1:
            m, t = m + 1, t + 1
        if t == 0:
            precisions.append(0.0)
            if not effective_order:
                logs.append(-math.inf)
            continue
        p = m / t
        precisions.append(p)
        logs.append(math.log(p) if p > 0 else -math.inf)
    bp = brevity_penalty(hyp_len, ref_len)
    if not logs or any(math.isinf(x) for x in logs) or bp == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(logs) / len(logs))
    return BleuResult(score, precisions, bp, int(hyp_len), int(ref_len))


def bleu(hypotheses: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4,
         smooth: bool = False, effective_order: bool = False) -> float:
    return bleu_from_stats(corpus_stats(hypotheses, references, max_n), smooth, effective_order).score


def bleu_details(hypotheses: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4,
                 smooth: bool = False, effective_order: bool = False) -> BleuResult:
    return bleu_from_stats(corpus_stats(hypotheses, references, max_n), smooth, effective_order)


# -- RIBES ----------------------------------------------------------------------

def _count_sub(seq: list, sub: list) -> int:
    k = len(sub)
    return sum(1 for i in range(len(seq) - k + 1) if seq[i:i + k] == sub)


def _index_sub(seq: list, sub: list) -> int:
    k = len(sub)
    for i in range(len(seq) - k + 1):
        if seq[i:i + k] == sub:
            return i
    return -1


def word_ranks(hypothesis: Tokens, reference: Tokens) -> list[int]:
    """Reference positions of hypothesis words that can be matched uniquely.

    A word occurring once on both sides matches directly. Otherwise the
    smallest left or right context window that makes the n-gram unique on
    both sides decides the position; words never disambiguated are skipped.
    """
    hyp, ref = list(hypothesis), list(reference)
    ranks = []
    for i, w in enumerate(hyp):
        if w not in ref:
            continue
        if hyp.count(w) == 1 and ref.count(w) == 1:
            ranks.append(ref.index(w))
            continue
        for window in range(1, max(i + 1, len(hyp) - i + 1)):
            if window <= i:
                gram = hyp[i - window:i + 1]
                if _count_sub(hyp, gram) == 1 and _count_sub(ref, gram) == 1:
                    ranks.append(_index_sub(ref, gram) + window)
                    break
            if i + window < len(hyp):
                gram = hyp[i:i + window + 1]
                if _count_sub(hyp, gram) == 1 and _count_sub(ref, gram) == 1:
                    ranks.append(_index_sub(ref, gram))
                    break
    return ranks


def ribes_sentence(hypothesis: Tokens, reference: Tokens, alpha: float = 0.25,
                   beta: float = 0.10) -> float:
    """NKT * P^alpha * BP^beta for one sentence pair."""
    if not hypothesis:
        return 0.0
    ranks = word_ranks(hypothesis, reference)
    n = len(ranks)
    if n == 0:
        return 0.0
    if n == 1:
        nkt = 1.0 if len(reference) == 1 else 0.0
    else:
        ascending = sum(1 for a in range(n) for b in range(a + 1, n) if ranks[a] < ranks[b])
        nkt = ascending / (n * (n - 1) / 2)
    precision = n / len(hypothesis)
    bp = min(1.0, math.exp(1.0 - len(reference) / len(hypothesis)))
    return nkt * precision ** alpha * bp ** beta


def ribes(hypotheses: Sequence[Tokens], references: Sequence[Tokens], alpha: float = 0.25,
          beta: float = 0.10) -> float:
    """Corpus RIBES: mean of sentence scores."""
    if len(hypotheses) != len(references):
        raise DataError(f"hypothesis/reference count mismatch {len(hypotheses)} vs {len(references)}")
    if not hypotheses:
        return 0.0
    return float(np.mean([ribes_sentence(h, r, alpha, beta) for h, r in zip(hypotheses, references)]))


# -- analyses ---------------------------------------------------------------------

def ngram_bleu(hypotheses: Sequence[Tokens], references: Sequence[Tokens], n: int) -> float:
    """Individual n-gram BLEU: 100 * BP * p_n."""
    r = bleu_details(hypotheses, references, max_n=n)
    return 100.0 * r.brevity_penalty * r.precisions[n - 1]


def ngram_delta(system_a: Sequence[Tokens], system_b: Sequence[Tokens],
                references: Sequence[Tokens], orders: Sequence[int] = range(2, 7)) -> dict[int, float]:
    """Per-order individual n-gram BLEU of A minus B."""
    if len(system_a) != len(system_b):
        raise DataError(f"system output count mismatch {len(system_a)} vs {len(system_b)}")
    return {n: ngram_bleu(system_a, references, n) - ngram_bleu(system_b, references, n)
            for n in orders}


@dataclass
class LengthBin:
    low: int
    high: float
    count: int
    bleu_a: float
    bleu_b: float
    ribes_a: float
    ribes_b: float


def length_binned_eval(hyps_a: Sequence[Tokens], hyps_b: Sequence[Tokens],
                       references: Sequence[Tokens], sources: Sequence[Tokens],
                       edges: Sequence[float]) -> list[LengthBin]:
    """BLEU and RIBES of both systems per source-length bin.

    ``edges`` [e0, e1, ..., ek] define bins [e_i, e_{i+1}); use ``math.inf``
    as the last edge for an open bin. Empty bins are left out.
    """
    n = len(references)
    if not (len(hyps_a) == len(hyps_b) == len(sources) == n):
        raise DataError("length_binned_eval inputs must have equal counts")
    out = []
    for lo, hi in zip(edges, edges[1:]):
        idx = [i for i in range(n) if lo <= len(sources[i]) < hi]
        if not idx:
            continue
        ha = [hyps_a[i] for i in idx]
        hb = [hyps_b[i] for i in idx]
        rr = [references[i] for i in idx]
        out.append(LengthBin(int(lo), hi, len(idx), bleu(ha, rr), bleu(hb, rr),
                             ribes(ha, rr), ribes(hb, rr)))
    return out


def write_length_bins(path: str | Path, bins: Sequence[LengthBin]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("bin\tlow\thigh\tcount\tbleu_a\tbleu_b\tribes_a\tribes_b\n")
        for k, b in enumerate(bins):
            hi = "inf" if math.isinf(b.high) else str(int(b.high))
            f.write(f"{k}\t{b.low}\t{hi}\t{b.count}\t{b.bleu_a:.4f}\t{b.bleu_b:.4f}"
                    f"\t{b.ribes_a:.6f}\t{b.ribes_b:.6f}\n")


GNUPLOT_TEMPLATE = """\
set terminal pngcairo size 1000,400
set output '{png}'
set datafile separator '\\t'
set style data histograms
set style fill solid 0.8
set key top left
set multiplot layout 1,2
set title 'BLEU by source length'
plot '{tsv}' using 5:xtic(sprintf("[%s,%s)", stringcolumn(2), stringcolumn(3))) title '{a}', \\
     '' using 6 title '{b}'
set title 'RIBES by source length'
plot '{tsv}' using 7:xtic(sprintf("[%s,%s)", stringcolumn(2), stringcolumn(3))) title '{a}', \\
     '' using 8 title '{b}'
unset multiplot
"""


def write_gnuplot_script(path: str | Path, tsv_name: str, label_a: str = "A",
                         label_b: str = "B") -> None:
    png = Path(tsv_name).with_suffix(".png").name
    Path(path).write_text(GNUPLOT_TEMPLATE.format(png=png, tsv=tsv_name, a=label_a, b=label_b))


def significance(hyps_a: Sequence[Tokens], hyps_b: Sequence[Tokens],
                 references: Sequence[Tokens], resamples: int = 1000, seed: int = 0) -> float:
    """Paired bootstrap: fraction of resamples in which B scores at least A.

    Small values support "A is better than B"; ties count against A.
    """
    if resamples < 100:
        raise ValueError("resamples must be >= 100")
    if len(hyps_a) != len(hyps_b):
        raise DataError(f"system output count mismatch {len(hyps_a)} vs {len(hyps_b)}")
    sa = corpus_stats(hyps_a, references)
    sb = corpus_stats(hyps_b, references)
    n = len(references)
    rng = np.random.default_rng(seed)
    worse = 0
    for _ in range(resamples):
        idx = rng.integers(0, n, size=n)
        if bleu_from_stats(sb[idx]).score >= bleu_from_stats(sa[idx]).score:
            worse += 1
    return worse / resamples


@dataclass
class EvalReport:
    bleu: float
    precisions: list[float]
    brevity_penalty: float
    ribes: float
    length_bins: list[dict] = field(default_factory=list)
    p_value: float | None = None

    def __post_init__(self):
        assert 0.0 <= self.bleu <= 100.0 + 1e-9
        assert 0.0 <= self.ribes <= 1.0 + 1e-12

    def to_json(self) -> dict:
        return asdict(self)


def evaluate(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> EvalReport:
    r = bleu_details(hypotheses, references)
    return EvalReport(r.score, r.precisions, r.brevity_penalty, ribes(hypotheses, references))


def write_json(path: str | Path, obj) -> None:
    """Deterministic JSON; infinite floats become the string "inf"."""
    text = json.dumps(_finite(obj), indent=2, sort_keys=True, default=_json_default, allow_nan=False)
    Path(path).write_text(text + "\n")


def _finite(o):
    if isinstance(o, float) and math.isinf(o):
        return "inf" if o > 0 else "-inf"
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if hasattr(o, "__dataclass_fields__"):
        return _finite(asdict(o))
    return o


def _json_default(o):
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def granularity_eval(ckpt, testsets: Mapping, iterations: int = 10, length_beam: int = 3,
                     baseline=None, length_prior: bool = True) -> dict[str, dict]:
    """Decode each granularity's test items in isolation and score them.

    BLEU's maximum order is capped at the longest reference in the set, since
    single-word items have no higher-order n-grams. With ``baseline`` the rows carry the difference
    "ckpt minus baseline". Empty sets are left out.
    """
    from .natmodel import decode_all

    out = {}
    for g, samples in testsets.items():
        if not samples:
            continue
        name = getattr(g, "value", g)
        sources = [list(s.source) for s in samples]
        refs = [list(s.target) for s in samples]
        hyps = decode_all(ckpt, sources, iterations, length_beam, length_prior=length_prior)
        max_n = min(4, max(len(r) for r in refs))
        row = {"count": len(samples), "max_n": max_n, "bleu": bleu(hyps, refs, max_n=max_n)}
        if baseline is not None:
            base_hyps = decode_all(baseline, sources, iterations, length_beam, length_prior=length_prior)
            row["baseline_bleu"] = bleu(base_hyps, refs, max_n=max_n)
            row["delta"] = row["bleu"] - row["baseline_bleu"]
        out[name] = row
    return out
