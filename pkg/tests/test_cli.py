import json
import subprocess
import sys
from importlib import resources

import pytest

from pmgnat.cli import main

from test_pipeline import FAST

TOY = resources.files("pmgnat") / "data" / "toy"


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    for split in ("train", "test"):
        for side in ("src", "tgt"):
            (d / f"{split}.{side}").write_text((TOY / f"{split}.{side}").read_text())
    (d / "fast.ini").write_text(FAST)
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_bpe_learn_and_apply(work, capsys):
    assert run("bpe", "learn", work / "train.src", work / "train.tgt", "--merges", 40, "--codes", work / "codes") == 0
    assert len((work / "codes").read_text().splitlines()) == 40
    assert run("bpe", "apply", "--codes", work / "codes", "--input", work / "test.src",
               "--output", work / "test.bpe") == 0
    assert len((work / "test.bpe").read_text().splitlines()) == 100


def test_word_level_tools_chain(work):
    src, tgt = work / "train.src", work / "train.tgt"
    assert run("align", "--src", src, "--tgt", tgt, "--iterations", 3, "--output", work / "train.align",
               "--tables", work / "m1") == 0
    assert (work / "m1.fwd.tsv").is_file()
    assert run("extract", "--src", src, "--tgt", tgt, "--alignments", work / "train.align",
               "--max-len", 4, "--output", work / "pt") == 0
    assert run("filter", "--table", work / "pt", "--threshold", 0.05, "--output", work / "pt.f") == 0
    full = (work / "pt").read_text().splitlines()
    kept = (work / "pt.f").read_text().splitlines()
    assert 0 < len(kept) <= len(full)
    assert run("datasets", "--src", src, "--tgt", tgt, "--alignments", work / "train.align",
               "--table", work / "pt.f", "--keep-ratio", 0.5, "--lexical-table", work / "m1.fwd.tsv",
               "--output", work / "ds.tsv") == 0
    kinds = {line.split("\t")[0] for line in (work / "ds.tsv").read_text().splitlines()}
    assert kinds == {"word", "phrase", "sentence"}


def test_train_decode_evaluate(work, capsys):
    assert run("datasets", "--src", work / "train.src", "--tgt", work / "train.tgt", "--alignments",
               work / "train.align", "--table", work / "pt.f", "--output", work / "ds_full.tsv") == 0
    words = sorted({w for f in ("train.src", "train.tgt", "test.src", "test.tgt")
                    for w in (work / f).read_text().split()})
    (work / "vocab").write_text("".join(t + "\n" for t in ["<pad>", "<unk>", "<s>", "</s>", "<mask>", "<len>"] + words))
    assert run("train", "--config", work / "fast.ini", "--datasets", work / "ds_full.tsv", "--vocab", work / "vocab",
               "--output", work / "m.ckpt") == 0
    assert (work / "m.ckpt.json").is_file()
    assert run("decode", "--checkpoint", work / "m.ckpt", "--vocab", work / "vocab", "--iterations", 2,
               "--input", work / "test.src", "--output", work / "test.hyp") == 0
    assert len((work / "test.hyp").read_text().splitlines()) == 100
    capsys.readouterr()
    assert run("evaluate", "--hyp", work / "test.hyp", "--ref", work / "test.tgt", "--src", work / "test.src",
               "--json", work / "eval.json") == 0
    assert capsys.readouterr().out.startswith("BLEU ")
    assert json.loads((work / "eval.json").read_text())["length_bins"]


def test_pipeline_compare_sweep(work, capsys):
    out = work / "runs"
    assert run("pipeline", "--config", work / "fast.ini", "--output-dir", out / "a") == 0
    assert run("pipeline", "--config", work / "fast.ini", "--output-dir", out / "a", "--resume") == 0
    assert "stages run: none" in capsys.readouterr().out
    assert run("compare", out / "a", out / "a", "--resamples", 100, "--output", out / "cmp") == 0
    assert "p = 1.000" in capsys.readouterr().out
    assert run("sweep", "--config", work / "fast.ini", "--output-dir", out / "sweep") == 0
    rows = (out / "sweep" / "sweep.tsv").read_text().splitlines()
    assert rows[0].split("\t")[:3] == ["ratio", "word_samples", "phrase_samples"]
    assert [r.split("\t")[0] for r in rows[1:]] == ["0.10", "0.35", "0.50", "1.00"]
    words = [int(r.split("\t")[1]) for r in rows[1:]]
    assert words == sorted(words)


def test_exit_codes(work, tmp_path, capsys):
    (tmp_path / "bad.ini").write_text("[schedule]\nstrategy = sideways\n")
    assert run("pipeline", "--config", tmp_path / "bad.ini") == 1
    assert run("evaluate", "--hyp", tmp_path / "none", "--ref", work / "test.tgt") == 2
    (tmp_path / "short").write_text("a\n")
    assert run("evaluate", "--hyp", tmp_path / "short", "--ref", work / "test.tgt") == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        run("nosuch")


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "pmgnat", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "pipeline" in r.stdout
