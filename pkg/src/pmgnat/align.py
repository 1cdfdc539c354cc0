"""IBM Model 1 word alignment with Viterbi decoding and symmetrization."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import SentencePair, Vocabulary
from .errors import DataError

NULL = -1
PRUNE_BELOW = 1e-12

FORWARD = "forward"
REVERSE = "reverse"
HEURISTICS = ("intersection", "union", "grow-diag-final")

_NEIGHBORS = ((-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass(frozen=True)
class AlignmentLinkSet:
    links: frozenset
    source_length: int
    target_length: int

    def __post_init__(self):
        for i, j in self.links:
            if not (0 <= i < self.source_length and 0 <= j < self.target_length):
                raise DataError(
                    f"link {i}-{j} out of range for lengths "
                    f"{self.source_length}x{self.target_length}")

    def to_pharaoh(self) -> str:
        return " ".join(f"{i}-{j}" for i, j in sorted(self.links))

    @classmethod
    def from_pharaoh(cls, line: str, source_length: int, target_length: int) -> "AlignmentLinkSet":
        links = set()
        for item in line.split():
            i, j = item.split("-")
            links.add((int(i), int(j)))
        return cls(frozenset(links), source_length, target_length)


class TranslationTable:
    """Lexical probabilities t(f|e); source ``NULL`` is the empty word."""

    def __init__(self, probs: dict[int, dict[int, float]] | None = None):
        self.probs: dict[int, dict[int, float]] = probs if probs is not None else {}
        self.log_likelihood: list[float] = []

    def __call__(self, f: int, e: int) -> float:
        return self.probs.get(e, {}).get(f, 0.0)

    def __contains__(self, e: int) -> bool:
        return e in self.probs

    def items(self):
        for e, row in self.probs.items():
            for f, p in row.items():
                yield e, f, p

    def dump(self, path: str | Path, src_vocab: Vocabulary | None = None,
             tgt_vocab: Vocabulary | None = None) -> None:
        """Write "source \\t target \\t prob", sorted by source then descending prob."""
        def name(v, i):
            if i == NULL:
                return "NULL"
            return v.token_of[i] if v is not None else str(i)

        with open(path, "w", encoding="utf-8") as out:
            for e in sorted(self.probs):
                row = self.probs[e]
                for f in sorted(row, key=lambda f: (-row[f], f)):
                    out.write(f"{name(src_vocab, e)}\t{name(tgt_vocab, f)}\t{row[f]!r}\n")

    @classmethod
    def load(cls, path: str | Path, src_vocab: Vocabulary | None = None,
             tgt_vocab: Vocabulary | None = None) -> "TranslationTable":
        """Inverse of :meth:`dump`; probabilities round-trip exactly."""
        def index(v, tok):
            if tok == "NULL":
                return NULL
            return v.id_of[tok] if v is not None else int(tok)

        probs: dict[int, dict[int, float]] = {}
        with open(path, encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{n}: expected 3 tab-separated fields")
                try:
                    e, fw = index(src_vocab, parts[0]), index(tgt_vocab, parts[1])
                except (KeyError, ValueError):
                    raise DataError(f"{path}:{n}: unknown token") from None
                probs.setdefault(e, {})[fw] = float(parts[2])
        return cls(probs)


def reverse_pairs(corpus: Iterable[SentencePair]) -> list[SentencePair]:
    return [SentencePair(p.target, p.source, p.pair_id) for p in corpus]


def corpus_log_likelihood(corpus: Sequence[SentencePair], table: TranslationTable) -> float:
    """Model 1 log-likelihood, up to the alignment-independent length term."""
    ll = 0.0
    for pair in corpus:
        sources = (NULL,) + pair.source
        norm = math.log(len(sources))
        for f in pair.target:
            ll += math.log(sum(table(f, e) for e in sources)) - norm
    return ll


def train_model1(corpus: Sequence[SentencePair], iterations: int = 5) -> TranslationTable:
    """Estimate t(target | source) with EM.

    Starts uniform over co-occurring types. ``table.log_likelihood[k]`` is the
    corpus log-likelihood after iteration ``k + 1``.
    """
    if not corpus:
        raise DataError("empty corpus")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")

    cooc: dict[int, set[int]] = defaultdict(set)
    for pair in corpus:
        targets = set(pair.target)
        for e in (NULL,) + pair.source:
            cooc[e] |= targets
    probs = {e: {f: 1.0 / len(fs) for f in sorted(fs)} for e, fs in sorted(cooc.items())}
    table = TranslationTable(probs)

    for _ in range(iterations):
        counts: dict[int, dict[int, float]] = defaultdict(lambda: defaultdict(float))
        totals: dict[int, float] = defaultdict(float)
        for pair in corpus:
            sources = (NULL,) + pair.source
            for f in pair.target:
                z = sum(table(f, e) for e in sources)
                if z == 0.0:
                    continue
                for e in sources:
                    c = table(f, e) / z
                    counts[e][f] += c
                    totals[e] += c
        new = {}
        for e in sorted(counts):
            row = {f: c / totals[e] for f, c in sorted(counts[e].items())}
            new[e] = {f: p for f, p in row.items() if p >= PRUNE_BELOW}
        table.probs = new
        table.log_likelihood.append(corpus_log_likelihood(corpus, table))
    return table


def viterbi_align(pair: SentencePair, table: TranslationTable,
                  direction: str = FORWARD) -> AlignmentLinkSet:
    """Link every generated token to its most probable generator.

    For ``direction="reverse"`` the table must model t(source | target); the
    returned links are always oriented (source index, target index). NULL
    wins only when strictly more probable than every real word, and real
    words tie toward the smaller index.
    """
    if direction == FORWARD:
        gen, emitted = pair.source, pair.target
    elif direction == REVERSE:
        gen, emitted = pair.target, pair.source
    else:
        raise ValueError(f"unknown direction {direction!r}")
    links = set()
    for j, f in enumerate(emitted):
        best_i, best_p = -1, 0.0
        for i, e in enumerate(gen):
            p = table(f, e)
            if p > best_p:
                best_i, best_p = i, p
        if best_i < 0 or table(f, NULL) > best_p:
            continue
        links.add((best_i, j) if direction == FORWARD else (j, best_i))
    return AlignmentLinkSet(frozenset(links), len(pair.source), len(pair.target))


def _grow_diag_final(forward: set, reverse: set, n_src: int, n_tgt: int) -> set:
    union = forward | reverse
    alignment = forward & reverse
    src_aligned = {i for i, _ in alignment}
    tgt_aligned = {j for _, j in alignment}

    def add(i, j):
        alignment.add((i, j))
        src_aligned.add(i)
        tgt_aligned.add(j)

    added = True
    while added:
        added = False
        for i in range(n_src):
            for j in range(n_tgt):
                if (i, j) not in alignment:
                    continue
                for di, dj in _NEIGHBORS:
                    ni, nj = i + di, j + dj
                    if ((ni not in src_aligned or nj not in tgt_aligned)
                            and (ni, nj) in union):
                        add(ni, nj)
                        added = True
    for directional in (forward, reverse):
        for i in range(n_src):
            for j in range(n_tgt):
                if ((i not in src_aligned or j not in tgt_aligned)
                        and (i, j) in directional):
                    add(i, j)
    return alignment


def symmetrize(forward: AlignmentLinkSet, reverse: AlignmentLinkSet,
               heuristic: str = "grow-diag-final") -> AlignmentLinkSet:
    if (forward.source_length, forward.target_length) != (reverse.source_length, reverse.target_length):
        raise DataError(
            f"alignment shape mismatch {forward.source_length}x{forward.target_length} "
            f"vs {reverse.source_length}x{reverse.target_length}")
    f, r = set(forward.links), set(reverse.links)
    if heuristic == "intersection":
        links = f & r
    elif heuristic == "union":
        links = f | r
    elif heuristic == "grow-diag-final":
        links = _grow_diag_final(f, r, forward.source_length, forward.target_length)
    else:
        raise ValueError(f"unknown symmetrization heuristic {heuristic!r}")
    return AlignmentLinkSet(frozenset(links), forward.source_length, forward.target_length)


def align_corpus(corpus: Sequence[SentencePair], forward_table: TranslationTable,
                 reverse_table: TranslationTable,
                 heuristic: str = "grow-diag-final") -> list[AlignmentLinkSet]:
    return [
        symmetrize(viterbi_align(p, forward_table, FORWARD),
                   viterbi_align(p, reverse_table, REVERSE), heuristic)
        for p in corpus
    ]


def write_alignments(path: str | Path, alignments: Iterable[AlignmentLinkSet]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for a in alignments:
            f.write(a.to_pharaoh() + "\n")


def read_alignments(path: str | Path, corpus: Sequence[SentencePair]) -> list[AlignmentLinkSet]:
    with open(path, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f]
    if len(lines) != len(corpus):
        raise DataError(f"alignment/corpus line count mismatch {len(lines)} vs {len(corpus)}")
    return [AlignmentLinkSet.from_pharaoh(line, len(p.source), len(p.target))
            for line, p in zip(lines, corpus)]
