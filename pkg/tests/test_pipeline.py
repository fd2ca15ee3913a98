import hashlib
import json
import shutil

import pytest

from nngec import cli
from nngec import pipeline as pl
from nngec.config import parse_assignments, resolve_config
from nngec.corpus import read_sentences
from nngec.m2 import read_m2, score_corpus

SMALL = [
    "data.synthetic_pairs=300", "data.dev_size=30", "data.test_size=30", "data.lm_sentences=400",
    "nnglm.epochs=2", "nnjm.epochs=1", "nnjm.noise_samples=20", "mert.iterations=2", "mert.restarts=1",
    "mert.nbest=8", "decoder.beam_size=8",
]


def _cfg(*extra):
    return resolve_config(overrides=parse_assignments(SMALL + list(extra)), environ={}, profile="desk")


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    cfg = _cfg()
    wd = tmp_path_factory.mktemp("small")
    pl.run_pipeline(cfg, wd)
    return cfg, wd


def test_layout_and_manifest(small_run):
    cfg, wd = small_run
    for rel in ("data/train.src", "model/phrase-table.txt", "model/lm1.json", "model/lm2.json",
                "model/nnglm-rescaled.bin", "model/nnjm.bin", "report.txt", "report.kv"):
        assert (wd / rel).is_file(), rel
    for v in pl.VARIANTS:
        assert (wd / "tune" / v / "weights.txt").is_file()
        assert (wd / "output" / f"{v}.test.txt").is_file()
    manifest = json.loads((wd / "manifest.json").read_text())
    assert manifest["config"] == cfg.to_dict()
    for rel, digest in manifest["files"].items():
        assert hashlib.sha256((wd / rel).read_bytes()).hexdigest() == digest
    header = (wd / "report.txt").read_text().splitlines()[0]
    assert json.loads(header.removeprefix("# config ")) == cfg.to_dict()
    assert (wd / "tune" / "nnjm" / "tuning.log").read_text().startswith("# config {")


def test_neural_variants_start_from_baseline(small_run):
    _, wd = small_run
    log = (wd / "tune" / "nnglm+nnjm" / "tuning.log").read_text().splitlines()
    assert log[1].startswith("# restart seeds")
    assert log[2].split("\t") == ["iteration", "pool_size", "dev_f", "pool_f"]


def test_offline_rescoring_matches_report(small_run, capsys):
    cfg, wd = small_run
    kv = pl.read_report_kv(wd / "report.kv")
    for split in ("dev", "test"):
        entries = read_m2(wd / "data" / f"{split}.m2")
        for v in pl.VARIANTS:
            hyps = read_sentences(wd / "output" / f"{v}.{split}.txt")
            r = score_corpus(hyps, [e.source for e in entries], pl.gold_sets(entries))
            assert (r.tp, r.fp, r.fn) == tuple(int(kv[f"{v}.{split}.{k}"]) for k in ("tp", "fp", "fn"))
            assert repr(r.f) == kv[f"{v}.{split}.f"]
    hyp = wd / "output" / "baseline.test.txt"
    assert cli.main(["evaluate", "--hyp", str(hyp), "--gold", str(wd / "data" / "test.m2")]) == 0
    assert f"tp={kv['baseline.test.tp']} fp={kv['baseline.test.fp']}" in capsys.readouterr().out


def test_stage_isolation_rerun(small_run, tmp_path):
    cfg, wd = small_run
    copy = tmp_path / "copy"
    shutil.copytree(wd, copy)
    shutil.rmtree(copy / "output")
    (copy / "model" / "phrase-table.txt").unlink()
    cwd = pl.Workdir(copy)
    pl.run_stage("train-tm", pl.stage_train_tm, cfg, cwd)
    pl.run_stage("correct", pl.stage_correct, cfg, cwd)
    assert pl.same_artifacts(wd, copy) == []


def test_cli_stages_reproduce_pipeline(small_run, tmp_path, capsys):
    cfg, wd = small_run
    out = tmp_path / "cli"
    common = ["-w", str(out), "--profile", "desk"] + [a for s in SMALL for a in ("--set", s)]
    for name, _ in pl.STAGES:
        assert cli.main([name] + common) == 0, name
    pl.write_manifest(cfg, pl.Workdir(out))
    assert pl.same_artifacts(wd, out) == []
    capsys.readouterr()
    src = tmp_path / "in.txt"
    src.write_text("he eat an apple .\n\n", encoding="utf-8")
    assert cli.main(["correct", "--variant", "nnjm", "--input", str(src), "-o", str(tmp_path / "o.txt")] + common) == 0
    assert len(read_sentences(tmp_path / "o.txt")) == 2
    assert cli.main(["nbest", "-i", str(src), "-o", str(tmp_path / "nb.txt"), "-n", "3"] + common) == 0
    assert (tmp_path / "nb.txt").read_text().startswith("0 ||| ")


def test_parallel_decoding_matches_serial(small_run):
    cfg, wd = small_run
    work = pl.Workdir(wd)
    models = pl.load_models(cfg, work, "nnglm+nnjm")
    weights = pl.FeatureWeights.load(wd / "tune" / "nnglm+nnjm" / "weights.txt")
    sources = [e.source for e in read_m2(wd / "data" / "dev.m2")]
    assert pl.decode_corpus(sources, models, weights, 8, jobs=2) == pl.decode_corpus(sources, models, weights, 8)


def test_missing_input_names_stage(tmp_path):
    with pytest.raises(pl.StageError, match="stage train-nnjm"):
        pl.run_stage("train-nnjm", pl.stage_train_nnjm, _cfg(), pl.Workdir(tmp_path))


def test_external_data(tmp_path):
    src = tmp_path / "t.src"
    tgt = tmp_path / "t.tgt"
    src.write_text("he eat apple .\nshe like cats .\n\n", encoding="utf-8")
    tgt.write_text("he eats apples .\nshe likes cats .\nx\n", encoding="utf-8")
    m2 = tmp_path / "d.m2"
    m2.write_text("S he eat apple .\nA 1 2|||verb|||eats|||REQUIRED|||-NONE-|||0\n\n", encoding="utf-8")
    cfg = _cfg(f"data.train_source={src}", f"data.train_target={tgt}", f"data.dev_gold={m2}", f"data.test_gold={m2}")
    wd = pl.Workdir(tmp_path / "w")
    pl.stage_prepare(cfg, wd)
    assert read_sentences(wd.root / "data" / "train.src") == [tuple("he eat apple .".split()), tuple("she like cats .".split())]
    assert [e.annotator_sets() for e in read_m2(wd.root / "data" / "test.m2")] == [e.annotator_sets() for e in read_m2(m2)]
    bad = _cfg(f"data.train_source={src}", f"data.train_target={tgt}")
    with pytest.raises(pl.StageError, match="dev_gold"):
        pl.stage_prepare(bad, pl.Workdir(tmp_path / "w2"))
