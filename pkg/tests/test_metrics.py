import json
import math

import numpy as np
import pytest

from pmgnat.errors import DataError
from pmgnat.metrics import (bleu, bleu_details, bleu_from_stats, corpus_stats, evaluate, granularity_eval,
                            length_binned_eval, ngram_delta, ribes, ribes_sentence, significance,
                            word_ranks, write_gnuplot_script, write_json, write_length_bins)
from pmgnat.natmodel import ModelConfig, init_model
from pmgnat.phrase import Granularity, GranularitySample

from oracles import corpus_bleu


def t(s):
    return s.split()


def test_bleu_short_hypothesis():
    r = bleu_details([t("a b c d")], [t("a b c d e")])
    assert r.precisions == [1.0, 1.0, 1.0, 1.0]
    assert r.brevity_penalty == pytest.approx(math.exp(1 - 5 / 4))
    assert r.score == pytest.approx(77.88, abs=0.01)


def test_bleu_identity_and_no_overlap():
    assert bleu([t("x y z w v")], [t("x y z w v")]) == pytest.approx(100.0)
    assert bleu([t("a b c d e")], [t("a b c e d")]) == 0.0
    with pytest.raises(DataError):
        bleu([t("a")], [t("a"), t("b")])


def test_bleu_matches_oracle_on_random_corpora():
    rng = np.random.default_rng(0)
    for _ in range(50):
        refs = [rng.integers(0, 6, rng.integers(4, 12)).tolist() for _ in range(8)]
        hyps = [rng.integers(0, 6, rng.integers(4, 12)).tolist() for _ in range(8)]
        assert bleu(hyps, refs) == pytest.approx(corpus_bleu(hyps, refs), abs=1e-9)


def test_smoothing_rescues_zero_counts():
    assert bleu([t("a b")], [t("a b")], smooth=False) == 0.0
    assert bleu([t("a b")], [t("a b")], smooth=True) > 0.0
    assert bleu([t("a b")], [t("a b")], effective_order=True) == pytest.approx(100.0)


def test_ribes_examples():
    assert ribes_sentence(t("a b c"), t("a b c")) == 1.0
    assert ribes_sentence(t("c b a"), t("a b c")) == 0.0
    assert ribes_sentence(t("a c b"), t("a b c")) == pytest.approx(2 / 3, abs=1e-4)
    assert ribes_sentence(t("x y"), t("a b")) == 0.0
    assert ribes([t("a b c"), t("c b a")], [t("a b c"), t("a b c")]) == pytest.approx(0.5)


def test_ribes_context_disambiguation():
    # "a" is ambiguous alone; its right neighbour picks the occurrence
    assert word_ranks(t("a x a y"), t("a y a x")) == [2, 3, 0, 1]
    assert word_ranks(t("a a"), t("a a")) == [0, 1]
    assert word_ranks(t("a b a"), t("a a")) == []


def test_ngram_delta_identity_and_dominance():
    refs = [t("a b c d e f g"), t("h i j k l m n")]
    b = [t("a b c d"), t("h i j k")]
    assert all(v == 0 for v in ngram_delta(b, b, refs).values())
    a = [t("a b c d e"), t("h i j k l")]
    deltas = ngram_delta(a, b, refs)
    assert sorted(deltas) == [2, 3, 4, 5, 6]
    assert all(v >= 0 for v in deltas.values())


def test_length_bins_partition():
    refs = [t("a b c d e"), t("f g h i j")]
    srcs = [["s"] * 5, ["s"] * 20]
    bins = length_binned_eval(refs, refs, refs, srcs, [0, 10, math.inf])
    assert [b.count for b in bins] == [1, 1]
    assert length_binned_eval(refs, refs, refs, srcs, [0, 3, 4]) == []


def test_single_bin_equals_corpus():
    rng = np.random.default_rng(1)
    refs = [rng.integers(0, 5, 8).tolist() for _ in range(10)]
    ha = [rng.integers(0, 5, 8).tolist() for _ in range(10)]
    hb = [r[:6] for r in refs]
    (b,) = length_binned_eval(ha, hb, refs, refs, [0, math.inf])
    assert (b.bleu_a, b.bleu_b) == (bleu(ha, refs), bleu(hb, refs))
    assert (b.ribes_a, b.ribes_b) == (ribes(ha, refs), ribes(hb, refs))


def test_bin_counts_aggregate_to_corpus():
    rng = np.random.default_rng(2)
    refs = [rng.integers(0, 5, rng.integers(3, 10)).tolist() for _ in range(30)]
    hyps = [rng.integers(0, 5, rng.integers(3, 10)).tolist() for _ in range(30)]
    edges = [0, 5, 8, math.inf]
    parts = [corpus_stats([hyps[i] for i in idx], [refs[i] for i in idx])
             for lo, hi in zip(edges, edges[1:])
             if (idx := [i for i in range(30) if lo <= len(refs[i]) < hi])]
    assert bleu_from_stats(np.concatenate(parts)).score == bleu(hyps, refs)


def test_bin_files(tmp_path):
    refs = [t("a b c d e")]
    bins = length_binned_eval(refs, refs, refs, refs, [0, math.inf])
    write_length_bins(tmp_path / "b.tsv", bins)
    lines = (tmp_path / "b.tsv").read_text().splitlines()
    assert lines[0].split("\t")[:4] == ["bin", "low", "high", "count"]
    assert lines[1].split("\t")[2] == "inf"
    write_gnuplot_script(tmp_path / "b.gp", "b.tsv")
    assert "'b.tsv'" in (tmp_path / "b.gp").read_text()


def test_significance_identity_dominance_determinism():
    refs = [t("a b c d e"), t("f g h i j"), t("k l m n o")]
    assert significance(refs, refs, refs, 200) == 1.0
    junk = [t("z z z z z")] * 3
    assert significance(refs, junk, refs, 200) == 0.0
    mixed = [refs[0], t("f g h x y"), junk[0]]
    assert significance(refs, mixed, refs, 300, seed=4) == significance(refs, mixed, refs, 300, seed=4)
    with pytest.raises(ValueError):
        significance(refs, refs, refs, 50)


def test_evaluate_report_and_json(tmp_path):
    rep = evaluate([t("a b c d")], [t("a b c d e")])
    assert 0 <= rep.bleu <= 100 and 0 <= rep.ribes <= 1
    write_json(tmp_path / "r.json", {"report": rep, "edge": math.inf})
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["edge"] == "inf"
    assert data["report"]["bleu"] == pytest.approx(rep.bleu)


def test_granularity_eval_identical_checkpoints():
    ckpt = init_model(ModelConfig(vocab_size=20, embed_dim=16, hidden_dim=16, max_length=16), 0)
    sets = {Granularity.WORD: [GranularitySample(Granularity.WORD, (6,), (7,), 0)],
            Granularity.PHRASE: [],
            Granularity.SENTENCE: [GranularitySample(Granularity.SENTENCE, (6, 8, 9), (7, 10, 11), 0)]}
    rows = granularity_eval(ckpt, sets, iterations=2, baseline=ckpt)
    assert set(rows) == {"word", "sentence"}
    assert rows["word"]["max_n"] == 1
    assert all(r["delta"] == 0 for r in rows.values())
