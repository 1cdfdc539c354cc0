"""Reference implementations written directly from the textbook definitions.

They are deliberately slow and share no code with the package; tests compare
the package against them and freeze the values they produce.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter, defaultdict


# -- BPE: full recount after every merge -------------------------------------------

def bpe_merges(lines, num_merges, eow="</w>"):
    words = Counter(w for line in lines for w in line.split())
    segs = {w: list(w[:-1]) + [w[-1] + eow] for w in words}
    merges = []
    for _ in range(num_merges):
        counts = Counter()
        for w, c in words.items():
            s = segs[w]
            for a, b in zip(s, s[1:]):
                counts[(a, b)] += c
        if not counts:
            break
        top = max(counts.values())
        best = min((p for p, c in counts.items() if c == top), key=lambda p: (p[0] + p[1], p))
        merges.append(best)
        for w in segs:
            s, out, i = segs[w], [], 0
            while i < len(s):
                if i + 1 < len(s) and (s[i], s[i + 1]) == best:
                    out.append(s[i] + s[i + 1])
                    i += 2
                else:
                    out.append(s[i])
                    i += 1
            segs[w] = out
    return merges


# -- IBM Model 1: E-step by explicit enumeration of every alignment -----------------------

NULL = -1


def model1_exact(corpus, iterations):
    """corpus: list of (source tuple, target tuple). Returns {e: {f: t(f|e)}}."""
    cooc = defaultdict(set)
    for src, tgt in corpus:
        for e in (NULL,) + tuple(src):
            cooc[e] |= set(tgt)
    t = {e: {f: 1.0 / len(fs) for f in fs} for e, fs in cooc.items()}
    for _ in range(iterations):
        counts = defaultdict(lambda: defaultdict(float))
        for src, tgt in corpus:
            gens = (NULL,) + tuple(src)
            weights = {}
            for a in itertools.product(range(len(gens)), repeat=len(tgt)):
                w = 1.0
                for j, i in enumerate(a):
                    w *= t[gens[i]].get(tgt[j], 0.0)
                weights[a] = w
            z = sum(weights.values())
            for a, w in weights.items():
                for j, i in enumerate(a):
                    counts[gens[i]][tgt[j]] += w / z
        t = {e: {f: c / sum(row.values()) for f, c in row.items()} for e, row in counts.items()}
    return t


# -- grow-diag-final, transcribed line by line from the published pseudocode ------------

def grow_diag_final(e2f, f2e, en, fn):
    neighboring = ((-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))
    alignment = set(e2f) & set(f2e)
    union = set(e2f) | set(f2e)

    def e_aligned(e):
        return any(p[0] == e for p in alignment)

    def f_aligned(f):
        return any(p[1] == f for p in alignment)

    added = True
    while added:
        added = False
        for e in range(en):
            for f in range(fn):
                if (e, f) in alignment:
                    for de, df in neighboring:
                        e_new, f_new = e + de, f + df
                        if (not e_aligned(e_new) or not f_aligned(f_new)) and (e_new, f_new) in union:
                            if (e_new, f_new) not in alignment:
                                alignment.add((e_new, f_new))
                                added = True
    for a in (e2f, f2e):
        for e_new in range(en):
            for f_new in range(fn):
                if (not e_aligned(e_new) or not f_aligned(f_new)) and (e_new, f_new) in a:
                    alignment.add((e_new, f_new))
    return alignment


# -- phrase extraction: every span pair checked against the consistency definition -------

def consistent_phrases(n, m, links, max_len):
    out = set()
    for s0 in range(n):
        for s1 in range(s0 + 1, min(n, s0 + max_len) + 1):
            for t0 in range(m):
                for t1 in range(t0 + 1, min(m, t0 + max_len) + 1):
                    inside = False
                    ok = True
                    for i, j in links:
                        in_s, in_t = s0 <= i < s1, t0 <= j < t1
                        if in_s != in_t:
                            ok = False
                            break
                        inside |= in_s and in_t
                    if ok and inside:
                        out.add(((s0, s1), (t0, t1)))
    return out


# -- BLEU from per-sentence clipped counts -----------------------------------------------

def corpus_bleu(hyps, refs, max_n=4):
    matches = [0] * max_n
    totals = [0] * max_n
    hl = rl = 0
    for h, r in zip(hyps, refs):
        hl += len(h)
        rl += len(r)
        for n in range(1, max_n + 1):
            hc = Counter(tuple(h[i:i + n]) for i in range(len(h) - n + 1))
            rc = Counter(tuple(r[i:i + n]) for i in range(len(r) - n + 1))
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    if min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if hl > rl else math.exp(1 - rl / hl)
    return 100 * bp * math.exp(log_p)
