import time

import numpy as np
import pytest

from pmgnat.align import NULL, AlignmentLinkSet, TranslationTable
from pmgnat.corpus import SentencePair, Vocabulary
from pmgnat.errors import DataError
from pmgnat.phrase import (DEFAULT_MAX_LEN, SWEEP_RATIOS, ExternalScorer, Granularity, GranularitySample,
                           LexicalScorer, PhraseTableEntry, build_granularity_datasets, extract_corpus,
                           extract_phrases, filter_table, phrase_pairs, quality_filter, read_datasets,
                           read_phrase_table, sample_key, score_phrase_table, write_datasets,
                           write_phrase_table)

from oracles import consistent_phrases


def al(links, n, m):
    return AlignmentLinkSet(frozenset(links), n, m)


def test_diagonal_three_tokens():
    pair = SentencePair((1, 2, 3), (4, 5, 6), 0)
    got = extract_phrases(pair, al({(0, 0), (1, 1), (2, 2)}, 3, 3), 3)
    assert got == {((0, 1), (0, 1)), ((1, 2), (1, 2)), ((2, 3), (2, 3)),
                   ((0, 2), (0, 2)), ((1, 3), (1, 3)), ((0, 3), (0, 3))}


def test_empty_alignment_extracts_nothing():
    assert extract_phrases(SentencePair((1, 2), (3, 4), 0), al(set(), 2, 2), 3) == set()


def test_unaligned_target_edges_are_extended():
    got = extract_phrases(SentencePair((1,), (3, 4, 5), 0), al({(0, 1)}, 1, 3), 3)
    assert got == {((0, 1), (1, 2)), ((0, 1), (0, 2)), ((0, 1), (1, 3)), ((0, 1), (0, 3))}


def test_out_of_range_alignment_rejected():
    with pytest.raises(DataError):
        extract_phrases(SentencePair((1, 2), (3,), 0), al({(0, 0)}, 2, 2), 2)


def test_matches_brute_force_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n, m = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        links = {(int(rng.integers(n)), int(rng.integers(m))) for _ in range(rng.integers(0, 10))}
        k = int(rng.integers(1, 5))
        pair = SentencePair(tuple(range(n)), tuple(range(m)), 0)
        assert extract_phrases(pair, al(links, n, m), k) == consistent_phrases(n, m, links, k)


def _sentence(v, text):
    return tuple(v.encode(text.split()))


def test_illustrative_english_chinese_pairs():
    en = "He is very good at English ."
    zh1, zh2 = "他 英文 很 好 。", "他 非常 擅长 英语 。"
    v = Vocabulary.build([en, zh1, zh2])
    p1 = SentencePair(_sentence(v, en), _sentence(v, zh1), 0)
    p2 = SentencePair(_sentence(v, en), _sentence(v, zh2), 1)
    a1 = al({(0, 0), (2, 2), (3, 3), (5, 1), (6, 4)}, 7, 5)
    a2 = al({(0, 0), (2, 1), (3, 2), (4, 2), (5, 3), (6, 4)}, 7, 5)

    def text(pp):
        return {(" ".join(v.decode(s)), " ".join(v.decode(t))) for s, t in pp}

    assert ("very good", "很 好") in text(phrase_pairs(p1, a1))
    assert ("good at English", "擅长 英语") in text(phrase_pairs(p2, a2))


def test_scoring_single_extraction():
    (e,) = score_phrase_table([((1,), (2,))])
    assert (e.p_tgt_given_src, e.p_src_given_tgt, e.count) == (1.0, 1.0, 1)


def test_scoring_relative_frequencies():
    table = score_phrase_table([((1,), (2,)), ((1,), (2,)), ((1,), (3,))])
    assert [(e.target, e.p_tgt_given_src) for e in table] == [((2,), 2 / 3), ((3,), 1 / 3)]


def test_scoring_normalizes_per_source():
    rng = np.random.default_rng(4)
    ext = [((int(rng.integers(3)),), (int(rng.integers(5)),)) for _ in range(200)]
    sums = {}
    for e in score_phrase_table(ext):
        sums[e.source] = sums.get(e.source, 0.0) + e.p_tgt_given_src
    assert all(abs(s - 1.0) < 1e-9 for s in sums.values())


def _entries(ps):
    return [PhraseTableEntry((i,), (i + 100,), p, 1.0, 1) for i, p in enumerate(ps)]


def test_threshold_zero_is_identity():
    table = _entries([0.01, 0.3])
    assert filter_table(table, 0.0) == table


def test_threshold_boundary_is_inclusive():
    kept = filter_table(_entries([0.04, 0.05, 0.50]), 0.05)
    assert [e.p_tgt_given_src for e in kept] == [0.05, 0.50]


def test_threshold_both_directions():
    table = [PhraseTableEntry((1,), (2,), 0.5, 0.01, 1), PhraseTableEntry((1,), (3,), 0.5, 0.5, 1)]
    assert filter_table(table, 0.05, both_directions=True) == table[1:]


def _samples(scores):
    return [GranularitySample(Granularity.PHRASE, (i, i), (i,), i, None) for i in range(len(scores))]


def test_quality_filter_half():
    scores = [3, 1, 2, 4]
    kept = quality_filter(_samples(scores), 0.5, lambda s: scores[s.provenance])
    assert [scores[s.provenance] for s in kept] == [3, 4]


def test_quality_filter_full_keeps_order():
    samples = _samples([5, 1, 3])
    kept = quality_filter(samples, 1.0, lambda s: -s.provenance)
    assert [s.provenance for s in kept] == [0, 1, 2]


def test_quality_filter_ties_prefer_earlier():
    kept = quality_filter(_samples([1, 1, 1, 1]), 0.5, lambda s: 1.0)
    assert [s.provenance for s in kept] == [0, 1]


def test_sweep_ratios():
    assert SWEEP_RATIOS == (0.10, 0.35, 0.50, 1.00)
    samples = _samples(list(range(20)))
    assert [len(quality_filter(samples, r, lambda s: 0.0)) for r in SWEEP_RATIOS] == [2, 7, 10, 20]


def test_lexical_scorer():
    table = TranslationTable({1: {5: 0.8, 6: 0.2}, NULL: {5: 0.1, 6: 0.5}})
    s = GranularitySample(Granularity.PHRASE, (1, 2), (5, 6), 0)
    assert LexicalScorer(table)(s) == pytest.approx((0.8 + 0.5) / 2)


def test_external_scorer(tmp_path):
    v = Vocabulary.build(["a b x"])
    s = GranularitySample(Granularity.WORD, tuple(v.encode(["a"])), tuple(v.encode(["x"])), 7)
    assert sample_key(s, v) == "7:a ||| x"
    (tmp_path / "q.tsv").write_text("7:a ||| x\t0.25\n")
    assert ExternalScorer.from_tsv(tmp_path / "q.tsv", v)(s) == 0.25
    with pytest.raises(DataError):
        ExternalScorer({}, v)(s)


def test_one_pair_datasets():
    pair = SentencePair((1, 2), (3, 4), 0)
    a = al({(0, 0), (1, 1)}, 2, 2)
    table = score_phrase_table(extract_corpus([pair], [a], 2))
    ds = build_granularity_datasets([pair], [a], table)
    assert {(s.source, s.target) for s in ds[Granularity.WORD]} == {((1,), (3,)), ((2,), (4,))}
    assert [(s.source, s.target) for s in ds[Granularity.PHRASE]] == [((1, 2), (3, 4))]
    assert [(s.source, s.target) for s in ds[Granularity.SENTENCE]] == [((1, 2), (3, 4))]


def test_dataset_provenance_and_shapes():
    rng = np.random.default_rng(9)
    corpus, aligns = [], []
    for i in range(40):
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        corpus.append(SentencePair(tuple(rng.integers(10, 16, n).tolist()), tuple(rng.integers(20, 26, m).tolist()), i))
        aligns.append(al({(int(rng.integers(n)), int(rng.integers(m))) for _ in range(n)}, n, m))
    table = filter_table(score_phrase_table(extract_corpus(corpus, aligns, 4)), 0.05)
    ds = build_granularity_datasets(corpus, aligns, table)
    assert len(ds[Granularity.SENTENCE]) == len(corpus)
    by_id = {p.pair_id: p for p in corpus}
    for s in ds[Granularity.WORD]:
        assert len(s.source) == 1
    for s in ds[Granularity.PHRASE]:
        assert 2 <= len(s.source) <= 4
        src = by_id[s.provenance].source
        k = len(s.source)
        assert any(src[i:i + k] == s.source for i in range(len(src) - k + 1))


def test_empty_table_warns(caplog):
    pair = SentencePair((1, 2), (3, 4), 0)
    ds = build_granularity_datasets([pair], [al({(0, 0)}, 2, 2)], [])
    assert ds[Granularity.WORD] == [] and ds[Granularity.PHRASE] == []
    assert "no word-level samples" in caplog.text


def test_file_round_trips(tmp_path):
    v = Vocabulary.build(["a b x y"])
    table = score_phrase_table([(tuple(v.encode(["a"])), tuple(v.encode(["x"]))),
                                (tuple(v.encode(["a", "b"])), tuple(v.encode(["x", "y"])))])
    write_phrase_table(tmp_path / "pt", table, v)
    assert (tmp_path / "pt").read_text().splitlines()[0] == "a ||| x ||| 1.0 1.0 1"
    assert read_phrase_table(tmp_path / "pt", v) == table

    ds = {Granularity.WORD: [GranularitySample(Granularity.WORD, (6,), (8,), 3, 0.5)],
          Granularity.PHRASE: [], Granularity.SENTENCE: [GranularitySample(Granularity.SENTENCE, (6, 7), (8, 9), 3)]}
    write_datasets(tmp_path / "ds", ds, v)
    assert (tmp_path / "ds").read_text().splitlines()[0] == "word\ta\tx\t3\t0.5"
    assert read_datasets(tmp_path / "ds", v) == ds


def test_default_max_len():
    assert DEFAULT_MAX_LEN == 6


def test_bad_phrase_table_line(tmp_path):
    (tmp_path / "pt").write_text("a ||| x\n")
    with pytest.raises(DataError):
        read_phrase_table(tmp_path / "pt")


def test_extraction_is_fast_enough():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    for _ in range(200):
        pair = SentencePair(tuple(range(20)), tuple(range(20)), 0)
        extract_phrases(pair, al({(i, int(rng.integers(20))) for i in range(20)}, 20, 20), 6)
    assert time.perf_counter() - t0 < 5.0
