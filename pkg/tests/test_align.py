import numpy as np
import pytest

from pmgnat.align import (NULL, REVERSE, AlignmentLinkSet, TranslationTable, align_corpus, read_alignments,
                          reverse_pairs, symmetrize, train_model1, viterbi_align, write_alignments)
from pmgnat.corpus import SentencePair
from pmgnat.errors import DataError

from oracles import grow_diag_final, model1_exact


def pairs(*items):
    return [SentencePair(tuple(s), tuple(t), i) for i, (s, t) in enumerate(items)]


def random_corpus(rng, n, max_len=6, vocab=8):
    return pairs(*[(rng.integers(10, 10 + vocab, rng.integers(1, max_len + 1)).tolist(),
                    rng.integers(30, 30 + vocab, rng.integers(1, max_len + 1)).tolist())
                   for _ in range(n)])


def test_single_cooccurrence_forces_all_mass():
    t = train_model1(pairs(([1], [7])), 1)
    assert t(7, 1) == 1.0
    assert t(7, NULL) == 1.0


def test_two_pair_corpus_matches_exact_em():
    corpus = pairs(([1, 2], [7, 8]), ([1], [7]))
    t = train_model1(corpus, 5)
    assert t(7, 1) > t(8, 1)
    exact = model1_exact([(p.source, p.target) for p in corpus], 5)
    for e, row in exact.items():
        for f, p in row.items():
            assert t(f, e) == pytest.approx(p, abs=1e-9)


def test_rows_are_normalized():
    t = train_model1(random_corpus(np.random.default_rng(0), 30), 4)
    for row in t.probs.values():
        assert sum(row.values()) == pytest.approx(1.0, abs=1e-9)
        assert all(0.0 <= p <= 1.0 for p in row.values())


def test_log_likelihood_never_decreases():
    t = train_model1(random_corpus(np.random.default_rng(1), 20), 10)
    ll = t.log_likelihood
    assert len(ll) == 10
    assert all(b >= a - 1e-12 for a, b in zip(ll, ll[1:]))


def test_empty_corpus_rejected():
    with pytest.raises(DataError):
        train_model1([], 3)


def test_viterbi_unique_argmax():
    table = TranslationTable({1: {7: 0.9}, NULL: {7: 0.1}})
    assert viterbi_align(SentencePair((1,), (7,), 0), table).links == {(0, 0)}


def test_viterbi_null_tie_keeps_the_word():
    table = TranslationTable({1: {7: 0.5}, NULL: {7: 0.5}})
    assert viterbi_align(SentencePair((1,), (7,), 0), table).links == {(0, 0)}
    table = TranslationTable({1: {7: 0.4}, NULL: {7: 0.6}})
    assert viterbi_align(SentencePair((1,), (7,), 0), table).links == set()


def test_viterbi_matches_exhaustive_argmax():
    rng = np.random.default_rng(5)
    src, tgt = (1, 2, 3), (7, 8, 9)
    probs = {e: {f: float(rng.random()) for f in tgt} for e in (NULL,) + src}
    probs[2][8] = probs[3][8] = 0.99  # tie between two real words
    table = TranslationTable(probs)
    expected = set()
    for j, f in enumerate(tgt):
        scores = [table(f, e) for e in src]
        best = max(range(3), key=lambda i: (scores[i], -i))
        if scores[best] >= table(f, NULL):
            expected.add((best, j))
    assert viterbi_align(SentencePair(src, tgt, 0), table).links == expected
    assert (1, 1) in expected


def test_unknown_token_aligns_to_nothing():
    table = TranslationTable({1: {7: 1.0}})
    assert viterbi_align(SentencePair((1, 5), (7, 6), 0), table).links == {(0, 0)}


def test_reverse_direction_is_transposed():
    table = TranslationTable({7: {1: 0.9}, 8: {2: 0.9}})
    pair = SentencePair((1, 2), (8, 7), 0)
    assert viterbi_align(pair, table, REVERSE).links == {(0, 1), (1, 0)}


def _links(s, n=2, m=2):
    return AlignmentLinkSet(frozenset(s), n, m)


def test_symmetrize_agreement_is_fixed_point():
    links = _links({(0, 1), (1, 0)})
    for h in ("intersection", "union", "grow-diag-final"):
        assert symmetrize(links, links, h).links == links.links


def test_intersection_and_union():
    f, r = _links({(0, 0), (1, 1)}), _links({(0, 0)})
    assert symmetrize(f, r, "intersection").links == {(0, 0)}
    assert symmetrize(f, r, "union").links == {(0, 0), (1, 1)}


def test_symmetrize_shape_mismatch():
    with pytest.raises(DataError):
        symmetrize(_links({(0, 0)}, 2, 2), _links({(0, 0)}, 2, 3))


def test_grow_diag_final_matches_pseudocode():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n, m = 5, 5
        f = {(int(i), int(j)) for i, j in rng.integers(0, 5, (rng.integers(0, 9), 2))}
        r = {(int(i), int(j)) for i, j in rng.integers(0, 5, (rng.integers(0, 9), 2))}
        got = symmetrize(_links(f, n, m), _links(r, n, m), "grow-diag-final").links
        assert got == grow_diag_final(f, r, n, m)
        assert f & r <= got <= f | r


def test_out_of_range_link_rejected():
    with pytest.raises(DataError):
        AlignmentLinkSet(frozenset({(2, 0)}), 2, 2)


def test_pharaoh_round_trip(tmp_path):
    corpus = pairs(([1, 2, 3], [7, 8]), ([1], [7]))
    al = [_links({(0, 0), (2, 1)}, 3, 2), _links(set(), 1, 1)]
    write_alignments(tmp_path / "a", al)
    assert (tmp_path / "a").read_text() == "0-0 2-1\n\n"
    assert read_alignments(tmp_path / "a", corpus) == al


def test_table_dump_round_trip(tmp_path):
    t = train_model1(random_corpus(np.random.default_rng(2), 10), 3)
    t.dump(tmp_path / "t.tsv")
    lines = (tmp_path / "t.tsv").read_text().splitlines()
    assert lines[0].startswith("NULL\t")
    assert TranslationTable.load(tmp_path / "t.tsv").probs == t.probs


def test_alignment_is_deterministic():
    corpus = random_corpus(np.random.default_rng(3), 25)

    def run():
        fwd, rev = train_model1(corpus, 5), train_model1(reverse_pairs(corpus), 5)
        return align_corpus(corpus, fwd, rev)

    assert run() == run()
