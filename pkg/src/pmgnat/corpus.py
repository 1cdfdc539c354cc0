"""Corpus ingestion, byte-pair encoding and vocabulary construction.

Subwords follow the Sennrich convention: every non-final piece of a word
carries a trailing ``@@`` continuation marker, so ``"aa@@ a@@ b"`` detokenizes
back to ``"aaab"``. Internally, merges are learned over symbols where the last
character of a word carries an end-of-word marker ``</w>``.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError

logger = logging.getLogger(__name__)

EOW = "</w>"
CONT = "@@"
MAX_LEN = 256

PAD, UNK, BOS, EOS, MASK, LENGTH = range(6)
SPECIAL_TOKENS = ("<pad>", "<unk>", "<s>", "</s>", "<mask>", "<len>")


@dataclass
class MergeList:
    merges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.ranks = {}
        for i, pair in enumerate(self.merges):
            if pair in self.ranks:
                raise DataError(f"duplicate merge rule {pair[0]} {pair[1]}")
            self.ranks[pair] = i

    def __len__(self):
        return len(self.merges)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for left, right in self.merges:
                f.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path: str | Path) -> "MergeList":
        merges = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                left, right = line.split(" ")
                merges.append((left, right))
        return cls(merges)


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word[:-1]) + (word[-1] + EOW,)


def _merge_symbols(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            out.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def learn_bpe(corpus: Iterable[str], num_merges: int) -> MergeList:
    """Learn up to ``num_merges`` merge rules greedily from raw text lines.

    Pair frequencies are recounted over the whole word table after every
    merge. Among equally frequent pairs the one whose merged string sorts
    first wins. Learning stops early once no adjacent pair is left.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    word_counts = Counter(w for line in corpus for w in line.split())
    if not word_counts:
        raise DataError("empty corpus")

    vocab = {_word_symbols(w): c for w, c in word_counts.items()}
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pair_counts: Counter = Counter()
        for symbols, count in vocab.items():
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] += count
        if not pair_counts:
            break
        best = min(pair_counts, key=lambda p: (-pair_counts[p], p[0] + p[1], p))
        merges.append(best)
        vocab = {_merge_symbols(s, best): c for s, c in vocab.items()}
    return MergeList(merges)


class BPE:
    """Applies a MergeList with a per-word cache."""

    def __init__(self, merges: MergeList):
        self.merges = merges
        self._cache: dict[str, list[str]] = {}

    def segment_word(self, word: str) -> list[str]:
        if word in self._cache:
            return self._cache[word]
        symbols = _word_symbols(word)
        ranks = self.merges.ranks
        while len(symbols) > 1:
            candidates = [ranks[p] for p in zip(symbols, symbols[1:]) if p in ranks]
            if not candidates:
                break
            symbols = _merge_symbols(symbols, self.merges.merges[min(candidates)])
        pieces = [s + CONT for s in symbols[:-1]] + [symbols[-1][: -len(EOW)]]
        self._cache[word] = pieces
        return pieces

    def __call__(self, words: Sequence[str]) -> list[str]:
        return [piece for w in words for piece in self.segment_word(w)]


def apply_bpe(words: Sequence[str], merges: MergeList) -> list[str]:
    return BPE(merges)(words)


def detokenize(subwords: Sequence[str]) -> list[str]:
    """Undo :func:`apply_bpe` by gluing continuation-marked pieces."""
    words = []
    buf = ""
    for piece in subwords:
        if piece.endswith(CONT):
            buf += piece[: -len(CONT)]
        else:
            words.append(buf + piece)
            buf = ""
    if buf:
        words.append(buf)
    return words


class Vocabulary:
    """Bijective token <-> id map; ids 0-5 are the special symbols."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.token_of: list[str] = list(SPECIAL_TOKENS)
        self.id_of: dict[str, int] = {t: i for i, t in enumerate(self.token_of)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.id_of:
            self.id_of[token] = len(self.token_of)
            self.token_of.append(token)
        return self.id_of[token]

    @classmethod
    def build(cls, lines: Iterable[str]) -> "Vocabulary":
        counts = Counter(tok for line in lines for tok in line.split())
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(t for t in ordered if t not in SPECIAL_TOKENS)

    def __len__(self):
        return len(self.token_of)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id_of.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.token_of[i] for i in ids]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.token_of), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").split("\n")[:-1]
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise DataError(f"{path}: vocabulary does not start with the special tokens")
        return cls(tokens[len(SPECIAL_TOKENS):])


@dataclass(frozen=True)
class SentencePair:
    source: tuple[int, ...]
    target: tuple[int, ...]
    pair_id: int


@dataclass
class LoadReport:
    read: int = 0
    kept: int = 0
    dropped_length: int = 0
    dropped_empty: int = 0


def read_lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def load_parallel(
    source_file: str | Path,
    target_file: str | Path,
    vocab: Vocabulary,
    max_len: int = MAX_LEN,
) -> tuple[list[SentencePair], LoadReport]:
    """Read two aligned, already segmented text files into sentence pairs.

    Pairs with an empty side or a side longer than ``max_len`` tokens are
    dropped (never truncated); pair ids keep the original line numbers.
    """
    src_lines = read_lines(source_file)
    tgt_lines = read_lines(target_file)
    if len(src_lines) != len(tgt_lines):
        raise DataError(f"line count mismatch {len(src_lines)} vs {len(tgt_lines)}")
    report = LoadReport(read=len(src_lines))
    pairs = []
    for i, (s, t) in enumerate(zip(src_lines, tgt_lines)):
        src, tgt = s.split(), t.split()
        if not src or not tgt:
            report.dropped_empty += 1
            continue
        if len(src) > max_len or len(tgt) > max_len:
            report.dropped_length += 1
            continue
        pairs.append(SentencePair(tuple(vocab.encode(src)), tuple(vocab.encode(tgt)), i))
    report.kept = len(pairs)
    if report.dropped_length or report.dropped_empty:
        logger.info("load_parallel: dropped %d overlong and %d empty pairs",
                    report.dropped_length, report.dropped_empty)
    return pairs, report
