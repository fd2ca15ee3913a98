"""Stage-by-stage experiment driver.

Every stage reads its inputs from and writes its outputs to a work
directory, so any stage can be rerun on its own.  Layout::

    data/    raw and cleaned corpora, dev/test M2 gold, LM text
    model/   vocabularies, alignments, phrase table, LMs, neural models
    tune/    per-variant weights and tuning logs
    output/  per-variant dev/test corrections
    report.txt, report.kv, manifest.json

Nothing written depends on wall-clock time, so reruns with the same seed
reproduce every file byte for byte.
"""

import hashlib
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .alignment import PhraseTable, align_corpus, build_phrase_table
from .corpus import Vocabulary, build_vocab, clean_corpus, load_parallel, read_sentences, write_sentences
from .decoder import FeatureWeights, Models, decode, decode_nbest
from .lm import NGramModel, train_kn
from .m2 import apply_edits, bootstrap_sign_test, read_m2, score_corpus, write_m2
from .mert import mert
from .neural import SGDConfig
from .nnglm import GlobalLexiconModel, HypothesisScorer, train_nnglm, train_rescaler
from .nnjm import JointModel, train_nce
from .synth import SyntheticErrorSpec, generate_sentences, synthesize_corpus

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "nnglm", "nnjm", "nnglm+nnjm")
VARIANT_LABELS = {"baseline": "Baseline", "nnglm": "+NNGLM", "nnjm": "+NNJM", "nnglm+nnjm": "+NNGLM +NNJM"}
INITIAL_WEIGHTS = {
    "p_fwd": 0.2, "p_inv": 0.2, "lex_fwd": 0.2, "lex_inv": 0.2,
    "word_penalty": 0.0, "phrase_penalty": 0.0, "lm1": 0.5, "lm2": 0.5,
}


class StageError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage


def stage_seed(cfg, stage):
    """Per-stage seed derived from the master seed and the stage name."""
    return (cfg["general"]["seed"] * 1000003 + zlib.crc32(stage.encode())) % (2**31)


class Workdir:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, *parts):
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def require(self, stage, *parts):
        p = self.root.joinpath(*parts)
        if not p.exists():
            raise StageError(stage, f"missing input {p}; run the earlier stages first")
        return p


def write_alignments(path, alignments):
    with open(path, "w", encoding="utf-8") as f:
        for links in alignments:
            f.write(" ".join(f"{i}-{j}" for i, j in sorted(links)) + "\n")


def read_alignments(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f.read().splitlines():
            out.append({tuple(int(x) for x in item.split("-")) for item in line.split()})
    return out


def gold_sets(entries):
    return [e.annotator_sets() for e in entries]


def references(entries):
    """Corrected sentences from the first annotator's edits."""
    return [apply_edits(e.source, e.annotator_sets()[0]) for e in entries]


# -- parallel decoding -------------------------------------------------------

_WORKER = {}


def _init_worker(models, beam):
    _WORKER["models"] = models
    _WORKER["beam"] = beam


def _decode_one(args):
    source, weights = args
    return decode(source, _WORKER["models"], weights, _WORKER["beam"])


def _nbest_one(args):
    source, weights, n = args
    out = decode_nbest(source, _WORKER["models"], weights, _WORKER["beam"], n)
    return [(d.target, tuple(d.features)) for d in out]


def _run_parallel(fn, items, models, beam, jobs):
    if jobs <= 1 or len(items) < 2:
        _init_worker(models, beam)
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (jobs * 4))
    with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(models, beam)) as ex:
        return list(ex.map(fn, items, chunksize=chunk))


def decode_corpus(sources, models, weights, beam, jobs=1):
    return _run_parallel(_decode_one, [(s, weights) for s in sources], models, beam, jobs)


def nbest_corpus(sources, models, weights, beam, n, jobs=1):
    return _run_parallel(_nbest_one, [(s, weights, n) for s in sources], models, beam, jobs)


# -- stages -----------------------------------------------------------------

def stage_synth(cfg, wd):
    """Seeded synthetic corpus standing in for learner data."""
    d = cfg["data"]
    total = d["synthetic_pairs"] + d["dev_size"] + d["test_size"]
    seed = stage_seed(cfg, "synth")
    sentences = generate_sentences(total, seed=seed)
    corpus, gold = synthesize_corpus(sentences, SyntheticErrorSpec(seed=seed + 1))
    n_train, n_dev = d["synthetic_pairs"], d["dev_size"]
    train = corpus.pairs[:n_train]
    write_sentences(wd.path("data", "raw.src"), [s for s, _ in train])
    write_sentences(wd.path("data", "raw.tgt"), [t for _, t in train])
    write_m2(wd.path("data", "dev.m2"), gold[n_train : n_train + n_dev])
    write_m2(wd.path("data", "test.m2"), gold[n_train + n_dev :])
    lm_text = generate_sentences(d["lm_sentences"], seed=seed + 2)
    write_sentences(wd.path("data", "lm.txt"), lm_text)
    log.info("synth: %d train, %d dev, %d test pairs, %d LM sentences", n_train, n_dev, len(gold) - n_train - n_dev, len(lm_text))


def stage_prepare(cfg, wd):
    """Clean the training corpus and build the neural vocabularies."""
    d = cfg["data"]
    if d["train_source"]:
        corpus = load_parallel(d["train_source"], d["train_target"])
        for key, name in (("dev_gold", "dev.m2"), ("test_gold", "test.m2")):
            if not d[key]:
                raise StageError("prepare", f"data.{key} is required with external training data")
            write_m2(wd.path("data", name), read_m2(d[key]))
        if d["lm_corpus"]:
            write_sentences(wd.path("data", "lm.txt"), read_sentences(d["lm_corpus"]))
    else:
        corpus = load_parallel(wd.require("prepare", "data", "raw.src"), wd.require("prepare", "data", "raw.tgt"))
    cleaned = clean_corpus(corpus)
    log.info("prepare: kept %d of %d pairs", len(cleaned), len(corpus))
    if not len(cleaned):
        raise StageError("prepare", "no training pairs survive cleaning")
    write_sentences(wd.path("data", "train.src"), cleaned.sources)
    write_sentences(wd.path("data", "train.tgt"), cleaned.targets)
    for model in ("nnglm", "nnjm"):
        build_vocab(cleaned.sources, cfg[model]["source_vocab"]).save(wd.path("model", f"{model}.src.vocab"))
        build_vocab(cleaned.targets, cfg[model]["target_vocab"]).save(wd.path("model", f"{model}.tgt.vocab"))


def _train_pairs(wd, stage):
    return load_parallel(wd.require(stage, "data", "train.src"), wd.require(stage, "data", "train.tgt")).pairs


def stage_align(cfg, wd):
    pairs = _train_pairs(wd, "align")
    a = cfg["align"]
    write_alignments(wd.path("model", "train.align"), align_corpus(pairs, a["mode"], a["ibm_iterations"]))


def stage_train_tm(cfg, wd):
    pairs = _train_pairs(wd, "train-tm")
    alignments = read_alignments(wd.require("train-tm", "model", "train.align"))
    table = build_phrase_table(pairs, alignments, cfg["align"]["max_phrase_length"])
    table.save(wd.path("model", "phrase-table.txt"))
    log.info("train-tm: %d source phrases", len(table))


def stage_train_lm(cfg, wd):
    order = cfg["lm"]["order"]
    targets = [t for _, t in _train_pairs(wd, "train-lm")]
    train_kn(targets, order).save(wd.path("model", "lm1.json"))
    lm_path = wd.root / "data" / "lm.txt"
    if cfg["lm"]["second_lm"] and lm_path.exists():
        train_kn(read_sentences(lm_path), order).save(wd.path("model", "lm2.json"))


def stage_train_nnglm(cfg, wd):
    c = cfg["nnglm"]
    pairs = _train_pairs(wd, "train-nnglm")
    sv = Vocabulary.load(wd.require("train-nnglm", "model", "nnglm.src.vocab"))
    tv = Vocabulary.load(wd.require("train-nnglm", "model", "nnglm.tgt.vocab"))
    sgd = SGDConfig(c["learning_rate"], c["mini_batch_size"], c["epochs"], c["average_gradient"])
    model = train_nnglm(pairs, sv, tv, sgd, c["hidden_size"], seed=stage_seed(cfg, "train-nnglm"))
    model.save(wd.path("model", "nnglm.bin"))


def stage_rescale(cfg, wd):
    model, _ = GlobalLexiconModel.load(wd.require("rescale", "model", "nnglm.bin"))
    dev = read_m2(wd.require("rescale", "data", "dev.m2"))
    dev_pairs = [(e.source, r) for e, r in zip(dev, references(dev))]
    try:
        rescaler = train_rescaler(model, dev_pairs, cfg["nnglm"]["l2"])
    except ValueError as e:
        raise StageError("rescale", str(e)) from None
    model.save(wd.path("model", "nnglm-rescaled.bin"), rescaler)
    scorer = HypothesisScorer(model, rescaler)
    test = read_m2(wd.require("rescale", "data", "test.m2"))
    scorer.precompute([e.source for e in dev] + [e.source for e in test])
    scorer.save_tables(wd.path("model", "nnglm-tables.bin"))
    log.info("rescale: w=%.6f b=%.6f", rescaler.w, rescaler.b)


def stage_train_nnjm(cfg, wd):
    c = cfg["nnjm"]
    pairs = _train_pairs(wd, "train-nnjm")
    alignments = read_alignments(wd.require("train-nnjm", "model", "train.align"))
    sv = Vocabulary.load(wd.require("train-nnjm", "model", "nnjm.src.vocab"))
    tv = Vocabulary.load(wd.require("train-nnjm", "model", "nnjm.tgt.vocab"))
    sgd = SGDConfig(c["learning_rate"], c["mini_batch_size"], c["epochs"], c["average_gradient"])
    model, noise = train_nce(
        pairs, alignments, sv, tv, sgd,
        k=c["noise_samples"], m=c["source_window"], n=c["order"],
        embed_dim=c["embed_dim"], hidden_size=c["hidden_size"], seed=stage_seed(cfg, "train-nnjm"),
    )
    model.save(wd.path("model", "nnjm.bin"), noise)


def load_models(cfg, wd, variant, stage="decode"):
    table = PhraseTable.load(wd.require(stage, "model", "phrase-table.txt"))
    lms = [NGramModel.load(wd.require(stage, "model", "lm1.json"))]
    if (wd.root / "model" / "lm2.json").exists():
        lms.append(NGramModel.load(wd.root / "model" / "lm2.json"))
    nnglm = nnjm = None
    if "nnglm" in variant.split("+"):
        model, rescaler = GlobalLexiconModel.load(wd.require(stage, "model", "nnglm-rescaled.bin"))
        nnglm = HypothesisScorer(model, rescaler)
        tables = wd.root / "model" / "nnglm-tables.bin"
        if tables.exists():
            nnglm.load_tables(tables)
    if "nnjm" in variant.split("+"):
        nnjm, _ = JointModel.load(wd.require(stage, "model", "nnjm.bin"))
    return Models(table, lms, nnglm=nnglm, nnjm=nnjm, table_limit=cfg["decoder"]["table_limit"])


def _initial_weights(names, warm=None):
    values = dict(INITIAL_WEIGHTS)
    if warm is not None:
        values.update(warm.as_dict())
    return FeatureWeights(names, {n: values.get(n, 0.0) for n in names})


def tune_variant(cfg, wd, variant, warm=None):
    """MERT for one variant; neural variants start from the tuned baseline."""
    models = load_models(cfg, wd, variant, "tune")
    dev = read_m2(wd.require("tune", "data", "dev.m2"))
    sources = [e.source for e in dev]
    beam, jobs = cfg["decoder"]["beam_size"], cfg["general"]["jobs"]
    m = cfg["mert"]

    def nbest_fn(weights, n):
        return nbest_corpus(sources, models, weights, beam, n, jobs)

    weights, run = mert(
        sources, gold_sets(dev), nbest_fn, _initial_weights(models.feature_names, warm),
        iterations=m["iterations"], restarts=m["restarts"], nbest_n=m["nbest"],
        seed=stage_seed(cfg, f"tune-{variant}"), beta=cfg["eval"]["beta"],
    )
    weights.save(wd.path("tune", variant, "weights.txt"))
    with open(wd.path("tune", variant, "tuning.log"), "w", encoding="utf-8") as f:
        f.write(f"# config {cfg.to_json()}\n")
        f.write(f"# restart seeds {run.seeds}\n")
        f.write("\n".join(run.log_lines()) + "\n")
    log.info("tune %s: dev F trace %s", variant, [round(x, 4) for x in run.dev_f])
    return weights


def stage_tune(cfg, wd, variants=VARIANTS):
    base = None
    if "baseline" in variants:
        base = tune_variant(cfg, wd, "baseline")
    for v in variants:
        if v == "baseline":
            continue
        if base is None:
            base = FeatureWeights.load(wd.require("tune", "tune", "baseline", "weights.txt"))
        tune_variant(cfg, wd, v, warm=base)


def stage_correct(cfg, wd, variants=VARIANTS):
    beam, jobs = cfg["decoder"]["beam_size"], cfg["general"]["jobs"]
    for v in variants:
        models = load_models(cfg, wd, v, "correct")
        weights = FeatureWeights.load(wd.require("correct", "tune", v, "weights.txt"))
        for split in ("dev", "test"):
            entries = read_m2(wd.require("correct", "data", f"{split}.m2"))
            hyps = decode_corpus([e.source for e in entries], models, weights, beam, jobs)
            write_sentences(wd.path("output", f"{v}.{split}.txt"), hyps)


def evaluate_variants(cfg, wd, variants=VARIANTS):
    """Per variant and split: ScoreReport and p-value against the baseline."""
    beta = cfg["eval"]["beta"]
    rows = {}
    for split in ("dev", "test"):
        entries = read_m2(wd.require("evaluate", "data", f"{split}.m2"))
        sources, gold = [e.source for e in entries], gold_sets(entries)
        hyps = {v: read_sentences(wd.require("evaluate", "output", f"{v}.{split}.txt")) for v in variants}
        for v in variants:
            report = score_corpus(hyps[v], sources, gold, beta)
            p = None
            if v != "baseline" and "baseline" in hyps:
                p = bootstrap_sign_test(
                    hyps[v], hyps["baseline"], sources, gold,
                    cfg["eval"]["bootstrap_samples"], stage_seed(cfg, f"sigtest-{split}-{v}"), beta,
                )
            rows[(v, split)] = (report, p)
    return rows


def format_report(cfg, rows, variants=VARIANTS):
    header = f"{'System':<14}{'Dev P':>8}{'Dev R':>8}{'Dev F0.5':>10}{'Test P':>8}{'Test R':>8}{'Test F0.5':>11}{'p(test)':>9}"
    lines = [f"# config {cfg.to_json()}", header, "-" * len(header)]
    kv = [f"config={cfg.to_json()}"]
    for v in variants:
        dev, _ = rows[(v, "dev")]
        test, p = rows[(v, "test")]
        p_txt = "-" if p is None else f"{p:.4f}"
        lines.append(
            f"{VARIANT_LABELS[v]:<14}{100 * dev.precision:>8.2f}{100 * dev.recall:>8.2f}{100 * dev.f:>10.2f}"
            f"{100 * test.precision:>8.2f}{100 * test.recall:>8.2f}{100 * test.f:>11.2f}{p_txt:>9}"
        )
        for split in ("dev", "test"):
            r, pv = rows[(v, split)]
            kv += [
                f"{v}.{split}.tp={r.tp}", f"{v}.{split}.fp={r.fp}", f"{v}.{split}.fn={r.fn}",
                f"{v}.{split}.precision={r.precision!r}", f"{v}.{split}.recall={r.recall!r}", f"{v}.{split}.f={r.f!r}",
            ]
            if pv is not None:
                kv.append(f"{v}.{split}.p_value={pv!r}")
    return "\n".join(lines) + "\n", "\n".join(kv) + "\n"


def read_report_kv(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f.read().splitlines():
            k, v = line.split("=", 1)
            out[k] = v
    return out


def stage_evaluate(cfg, wd, variants=VARIANTS):
    rows = evaluate_variants(cfg, wd, variants)
    text, kv = format_report(cfg, rows, variants)
    wd.path("report.txt").write_text(text, encoding="utf-8")
    wd.path("report.kv").write_text(kv, encoding="utf-8")
    return rows


def write_manifest(cfg, wd):
    """Config plus a content hash of every artifact."""
    files = {}
    for p in sorted(wd.root.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(wd.root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    manifest = {"config": cfg.to_dict(), "files": files}
    wd.path("manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


STAGES = (
    ("synth", stage_synth),
    ("prepare", stage_prepare),
    ("align", stage_align),
    ("train-tm", stage_train_tm),
    ("train-lm", stage_train_lm),
    ("train-nnglm", stage_train_nnglm),
    ("rescale", stage_rescale),
    ("train-nnjm", stage_train_nnjm),
    ("tune", stage_tune),
    ("correct", stage_correct),
    ("evaluate", stage_evaluate),
)


def run_stage(name, fn, cfg, wd):
    log.info("stage %s", name)
    try:
        return fn(cfg, wd)
    except StageError:
        raise
    except (ValueError, OSError, RuntimeError) as e:
        raise StageError(name, f"{type(e).__name__}: {e}") from e


def run_pipeline(cfg, workdir):
    """Run every stage; returns the evaluation rows."""
    wd = Workdir(workdir)
    log.info("resolved config %s", cfg.to_json())
    rows = None
    for name, fn in STAGES:
        if name == "synth" and cfg["data"]["train_source"]:
            continue
        rows = run_stage(name, fn, cfg, wd)
    write_manifest(cfg, wd)
    return rows


def same_artifacts(dir_a, dir_b):
    """Relative paths whose contents differ between two work directories."""
    a, b = Path(dir_a), Path(dir_b)
    names = {p.relative_to(a).as_posix() for p in a.rglob("*") if p.is_file()}
    names |= {p.relative_to(b).as_posix() for p in b.rglob("*") if p.is_file()}
    diff = []
    for n in sorted(names):
        pa, pb = a / n, b / n
        if not (pa.exists() and pb.exists()) or pa.read_bytes() != pb.read_bytes():
            diff.append(n)
    return diff
