"""Phrase-pair extraction, phrase-table scoring/filtering and the three
granularity datasets (word, phrase, sentence) built from a parallel corpus."""

from __future__ import annotations

import enum
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .align import NULL, AlignmentLinkSet, TranslationTable
from .corpus import SentencePair, Vocabulary
from .errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_MAX_LEN = 6
SWEEP_RATIOS = (0.10, 0.35, 0.50, 1.00)

Span = tuple[int, int]  # half-open [start, end)


class Granularity(str, enum.Enum):
    WORD = "word"
    PHRASE = "phrase"
    SENTENCE = "sentence"


ORDER = (Granularity.WORD, Granularity.PHRASE, Granularity.SENTENCE)


@dataclass(frozen=True)
class PhraseTableEntry:
    source: tuple
    target: tuple
    p_tgt_given_src: float
    p_src_given_tgt: float
    count: int


@dataclass(frozen=True)
class GranularitySample:
    granularity: Granularity
    source: tuple
    target: tuple
    provenance: int
    quality: float | None = None

    @property
    def num_tokens(self) -> int:
        return len(self.source) + len(self.target)


def extract_phrases(pair: SentencePair, alignment: AlignmentLinkSet,
                    max_len: int = DEFAULT_MAX_LEN) -> set[tuple[Span, Span]]:
    """All alignment-consistent (source span, target span) pairs.

    A pair of spans is consistent when no link connects a word inside one
    span to a word outside the other, and at least one link lies inside.
    Target spans are widened over unaligned boundary words. Both spans are
    limited to ``max_len`` tokens.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    n, m = len(pair.source), len(pair.target)
    if (alignment.source_length, alignment.target_length) != (n, m):
        raise DataError(
            f"alignment is {alignment.source_length}x{alignment.target_length}, pair is {n}x{m}")
    by_src: dict[int, list[int]] = defaultdict(list)
    by_tgt: dict[int, list[int]] = defaultdict(list)
    for i, j in alignment.links:
        if not (0 <= i < n and 0 <= j < m):
            raise DataError(f"alignment link {i}-{j} out of range")
        by_src[i].append(j)
        by_tgt[j].append(i)

    out = set()
    for s0 in range(n):
        t_min, t_max = m, -1
        for s1 in range(s0, min(n, s0 + max_len)):
            for j in by_src.get(s1, ()):
                t_min, t_max = min(t_min, j), max(t_max, j)
            if t_max < 0 or t_max - t_min + 1 > max_len:
                continue
            if any(not s0 <= i <= s1 for j in range(t_min, t_max + 1) for i in by_tgt.get(j, ())):
                continue
            ts = t_min
            while True:
                te = t_max
                while te - ts + 1 <= max_len:
                    out.add(((s0, s1 + 1), (ts, te + 1)))
                    te += 1
                    if te >= m or te in by_tgt:
                        break
                ts -= 1
                if ts < 0 or ts in by_tgt or t_max - ts + 1 > max_len:
                    break
    return out


def phrase_pairs(pair: SentencePair, alignment: AlignmentLinkSet,
                 max_len: int = DEFAULT_MAX_LEN) -> list[tuple[tuple, tuple]]:
    """Token sequences of :func:`extract_phrases`, in span order."""
    return [(tuple(pair.source[s0:s1]), tuple(pair.target[t0:t1]))
            for (s0, s1), (t0, t1) in sorted(extract_phrases(pair, alignment, max_len))]


def score_phrase_table(extractions: Iterable[tuple[tuple, tuple]]) -> list[PhraseTableEntry]:
    """Relative-frequency phrase translation probabilities in both directions."""
    joint = Counter(extractions)
    src_marg: Counter = Counter()
    tgt_marg: Counter = Counter()
    for (s, t), c in joint.items():
        src_marg[s] += c
        tgt_marg[t] += c
    entries = [
        PhraseTableEntry(s, t, c / src_marg[s], c / tgt_marg[t], c)
        for (s, t), c in joint.items()
    ]
    entries.sort(key=lambda e: (e.source, -e.p_tgt_given_src, e.target))
    return entries


def filter_table(table: Sequence[PhraseTableEntry], threshold: float,
                 both_directions: bool = False) -> list[PhraseTableEntry]:
    """Keep entries whose p(target|source) is at least ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    kept = [e for e in table
            if e.p_tgt_given_src >= threshold
            and (not both_directions or e.p_src_given_tgt >= threshold)]
    logger.info("filter_table: threshold %g removed %d of %d entries",
                threshold, len(table) - len(kept), len(table))
    return kept


def extract_corpus(corpus: Sequence[SentencePair], alignments: Sequence[AlignmentLinkSet],
                   max_len: int = DEFAULT_MAX_LEN) -> list[tuple[tuple, tuple]]:
    if len(corpus) != len(alignments):
        raise DataError(f"corpus/alignment count mismatch {len(corpus)} vs {len(alignments)}")
    out = []
    for pair, al in zip(corpus, alignments):
        out.extend(phrase_pairs(pair, al, max_len))
    return out


def build_granularity_datasets(
    corpus: Sequence[SentencePair],
    alignments: Sequence[AlignmentLinkSet],
    table: Sequence[PhraseTableEntry],
    word_table: Sequence[PhraseTableEntry] | None = None,
) -> dict[Granularity, list[GranularitySample]]:
    """Split the corpus into word, phrase and sentence training samples.

    Every surviving table entry extracted from a sentence becomes one sample
    carrying that sentence's pair id. Word entries come from ``word_table``
    when given, otherwise from the single-source-token slice of ``table``.
    """
    if len(corpus) != len(alignments):
        raise DataError(f"corpus/alignment count mismatch {len(corpus)} vs {len(alignments)}")
    words = {(e.source, e.target) for e in (word_table if word_table is not None else table)
             if len(e.source) == 1}
    phrases = {(e.source, e.target) for e in table if len(e.source) > 1}
    lengths = [max(len(s), len(t)) for s, t in words | phrases]
    max_len = max(lengths, default=1)

    out = {g: [] for g in ORDER}
    for pair, al in zip(corpus, alignments):
        seen = set()
        for src, tgt in phrase_pairs(pair, al, max_len):
            if (src, tgt) in seen:
                continue
            seen.add((src, tgt))
            if (src, tgt) in words:
                out[Granularity.WORD].append(GranularitySample(Granularity.WORD, src, tgt, pair.pair_id))
            elif (src, tgt) in phrases:
                out[Granularity.PHRASE].append(GranularitySample(Granularity.PHRASE, src, tgt, pair.pair_id))
        out[Granularity.SENTENCE].append(
            GranularitySample(Granularity.SENTENCE, pair.source, pair.target, pair.pair_id))
    for g in (Granularity.WORD, Granularity.PHRASE):
        if not out[g]:
            logger.warning("no %s-level samples survived filtering; the stage will be skipped", g.value)
    return out


# -- quality filtering -------------------------------------------------------

Scorer = Callable[[GranularitySample], float]


class LexicalScorer:
    """Mean over target tokens of the best t(f|e) among source tokens and NULL."""

    def __init__(self, table: TranslationTable):
        self.table = table

    def __call__(self, sample: GranularitySample) -> float:
        sources = (NULL,) + tuple(sample.source)
        return sum(max(self.table(f, e) for e in sources) for f in sample.target) / len(sample.target)


def sample_key(sample: GranularitySample, vocab: Vocabulary | None = None) -> str:
    def text(ids):
        return " ".join(vocab.decode(ids) if vocab is not None else map(str, ids))
    return f"{sample.provenance}:{text(sample.source)} ||| {text(sample.target)}"


class ExternalScorer:
    """Scores imported from a "provenance-key \\t score" TSV side file."""

    def __init__(self, scores: Mapping[str, float], vocab: Vocabulary | None = None):
        self.scores = dict(scores)
        self.vocab = vocab

    @classmethod
    def from_tsv(cls, path: str | Path, vocab: Vocabulary | None = None) -> "ExternalScorer":
        scores = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    key, score = line.rstrip("\n").rsplit("\t", 1)
                    scores[key] = float(score)
        return cls(scores, vocab)

    def __call__(self, sample: GranularitySample) -> float:
        key = sample_key(sample, self.vocab)
        try:
            return self.scores[key]
        except KeyError:
            raise DataError(f"no external quality score for {key!r}") from None


def quality_filter(samples: Sequence[GranularitySample], keep_ratio: float,
                   scorer: Scorer) -> list[GranularitySample]:
    """Keep the ceil(keep_ratio * N) best-scoring samples, in original order.

    Equal scores are resolved in favour of the earlier sample.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError("keep_ratio must lie in (0, 1]")
    scored = [replace(s, quality=float(scorer(s))) for s in samples]
    n_keep = math.ceil(keep_ratio * len(scored) - 1e-9)
    ranked = sorted(range(len(scored)), key=lambda i: -scored[i].quality)
    keep = sorted(ranked[:n_keep])
    return [scored[i] for i in keep]


# -- file formats --------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_phrase_table(path: str | Path, table: Iterable[PhraseTableEntry],
                       vocab: Vocabulary | None = None) -> None:
    """Moses-style "src ||| tgt ||| p(t|s) p(s|t) count"."""
    def text(ids):
        return " ".join(vocab.decode(ids) if vocab is not None else map(str, ids))

    with open(path, "w", encoding="utf-8") as f:
        for e in table:
            f.write(f"{text(e.source)} ||| {text(e.target)} ||| "
                    f"{_fmt(e.p_tgt_given_src)} {_fmt(e.p_src_given_tgt)} {e.count}\n")


def read_phrase_table(path: str | Path, vocab: Vocabulary | None = None) -> list[PhraseTableEntry]:
    def ids(text):
        toks = text.split()
        return tuple(vocab.encode(toks) if vocab is not None else map(int, toks))

    entries = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            parts = [p.strip() for p in line.rstrip("\n").split("|||")]
            if len(parts) != 3:
                raise DataError(f"{path}:{n}: expected 3 '|||' fields, got {len(parts)}")
            scores = parts[2].split()
            if len(scores) != 3:
                raise DataError(f"{path}:{n}: expected 3 scores, got {len(scores)}")
            entries.append(PhraseTableEntry(ids(parts[0]), ids(parts[1]),
                                            float(scores[0]), float(scores[1]), int(scores[2])))
    return entries


def write_datasets(path: str | Path, datasets: Mapping[Granularity, Sequence[GranularitySample]],
                   vocab: Vocabulary | None = None) -> None:
    """TSV "granularity \\t source \\t target \\t provenance-id \\t quality-score"."""
    def text(ids):
        return " ".join(vocab.decode(ids) if vocab is not None else map(str, ids))

    with open(path, "w", encoding="utf-8") as f:
        for g in ORDER:
            for s in datasets.get(g, ()):
                q = "" if s.quality is None else _fmt(s.quality)
                f.write(f"{g.value}\t{text(s.source)}\t{text(s.target)}\t{s.provenance}\t{q}\n")


def read_datasets(path: str | Path, vocab: Vocabulary | None = None) -> dict[Granularity, list[GranularitySample]]:
    def ids(text):
        toks = text.split()
        return tuple(vocab.encode(toks) if vocab is not None else map(int, toks))

    out = {g: [] for g in ORDER}
    with open(path, encoding="utf-8") as f:
        for line in f:
            g, src, tgt, prov, q = line.rstrip("\n").split("\t")
            gran = Granularity(g)
            out[gran].append(GranularitySample(gran, ids(src), ids(tgt), int(prov),
                                               float(q) if q else None))
    return out
