"""Synthetic word-for-word translation language used for desk-scale runs.

A sentence is a random sequence of one to six chunks: a noun phrase
``DET [ADJ] NOUN``, a bare noun, adjective + noun, a bare adjective, a verb,
an adverb or a conjunction, so any contiguous span looks like a short
sentence of the same language. Each source word has exactly one target
word, and an adjective directly before a noun is moved behind it on the
target side.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

LEXICON = {
    "det": {"the": "le", "a": "un", "this": "ce", "every": "chaque"},
    "adj": {"red": "rouge", "big": "grand", "old": "vieux", "small": "petit",
            "green": "vert", "happy": "joyeux", "dark": "sombre", "quick": "rapide",
            "cold": "froid", "blue": "bleu"},
    "noun": {"dog": "chien", "cat": "chat", "house": "maison", "tree": "arbre",
             "bird": "oiseau", "car": "voiture", "river": "fleuve", "child": "enfant",
             "book": "livre", "horse": "cheval", "door": "porte", "garden": "jardin",
             "teacher": "maitre", "window": "fenetre", "apple": "pomme"},
    "verb": {"sees": "voit", "likes": "aime", "finds": "trouve", "takes": "prend",
             "follows": "suit", "watches": "regarde", "holds": "tient", "wants": "veut"},
    "adv": {"today": "aujourdhui", "often": "souvent", "again": "encore", "slowly": "lentement"},
    "conj": {"and": "et"},
}
WORD = {s: t for cat in LEXICON.values() for s, t in cat.items()}


CHUNKS = ("np", "noun", "adj_noun", "adj", "verb", "adv", "conj")
CHUNK_WEIGHTS = (0.35, 0.1, 0.15, 0.05, 0.2, 0.1, 0.05)


def _pick(rng: np.random.Generator, cat: str) -> tuple[str, str]:
    return str(rng.choice(list(LEXICON[cat]))), cat


def _chunk(rng: np.random.Generator, kind: str) -> list[tuple[str, str]]:
    if kind == "np":
        words = [_pick(rng, "det")]
        if rng.random() < 0.5:
            words.append(_pick(rng, "adj"))
        return words + [_pick(rng, "noun")]
    if kind == "adj_noun":
        return [_pick(rng, "adj"), _pick(rng, "noun")]
    return [_pick(rng, kind)]


def translate(tagged: list[tuple[str, str]]) -> list[str]:
    out = []
    i = 0
    while i < len(tagged):
        if tagged[i][1] == "adj" and i + 1 < len(tagged) and tagged[i + 1][1] == "noun":
            out += [WORD[tagged[i + 1][0]], WORD[tagged[i][0]]]
            i += 2
        else:
            out.append(WORD[tagged[i][0]])
            i += 1
    return out


def sentence(rng: np.random.Generator, max_chunks: int = 6) -> tuple[str, str]:
    tagged = []
    for _ in range(int(rng.integers(1, max_chunks + 1))):
        tagged += _chunk(rng, str(rng.choice(CHUNKS, p=CHUNK_WEIGHTS)))
    return " ".join(w for w, _ in tagged), " ".join(translate(tagged))


def generate(n: int, seed: int) -> list[tuple[str, str]]:
    rng = np.random.default_rng(seed)
    return [sentence(rng) for _ in range(n)]


SPLITS = {"train": (500, 11), "valid": (50, 12), "test": (100, 13)}
DATA_DIR = Path(__file__).parent / "data" / "toy"


def write_toy_corpus(directory: str | Path = DATA_DIR) -> dict[str, tuple[Path, Path]]:
    """Write train/valid/test ``.src``/``.tgt`` files; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = {}
    for split, (n, seed) in SPLITS.items():
        pairs = generate(n, seed)
        src, tgt = directory / f"{split}.src", directory / f"{split}.tgt"
        src.write_text("".join(s + "\n" for s, _ in pairs), encoding="utf-8")
        tgt.write_text("".join(t + "\n" for _, t in pairs), encoding="utf-8")
        out[split] = (src, tgt)
    return out


def toy_paths(split: str) -> tuple[Path, Path]:
    return DATA_DIR / f"{split}.src", DATA_DIR / f"{split}.tgt"


if __name__ == "__main__":
    for split, (s, t) in write_toy_corpus().items():
        print(split, s, t)
