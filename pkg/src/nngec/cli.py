"""Command-line front end: ``nngec <stage> [options]``."""

import argparse
import logging
import sys

from . import pipeline as pl
from .config import ConfigError, parse_assignments, resolve_config
from .corpus import read_sentences, write_sentences
from .decoder import FeatureWeights, decode_nbest, write_nbest
from .m2 import bootstrap_sign_test, read_m2, score_corpus

log = logging.getLogger("nngec")

STAGE_COMMANDS = {name: fn for name, fn in pl.STAGES if name not in ("tune", "correct", "evaluate")}


def _common(p):
    p.add_argument("--workdir", "-w", default="work", help="artifact directory (default: ./work)")
    p.add_argument("--config", "-c", help="INI config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one setting")
    p.add_argument("--profile", choices=["full", "desk"], help="start from a preset (default: full)")
    p.add_argument("--seed", type=int, help="shorthand for --set general.seed=N")
    p.add_argument("--jobs", "-j", type=int, help="cap on worker processes")
    p.add_argument("--verbose", "-v", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="nngec", description="Phrase-based GEC with neural lexicon and joint-model features.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        _common(sub.add_parser(name, help=f"run the {name} stage"))

    p = sub.add_parser("tune", help="MERT-tune one or all system variants")
    _common(p)
    p.add_argument("--variant", choices=pl.VARIANTS, action="append", help="repeatable; default all")

    p = sub.add_parser("correct", help="decode dev/test, or an arbitrary file with --input")
    _common(p)
    p.add_argument("--variant", choices=pl.VARIANTS, action="append")
    p.add_argument("--input", "-i", help="one tokenized sentence per line")
    p.add_argument("--output", "-o", help="defaults to stdout")
    p.add_argument("--weights", help="weights file (default: the tuned one)")

    p = sub.add_parser("nbest", help="write an n-best list for an input file")
    _common(p)
    p.add_argument("--variant", choices=pl.VARIANTS, default="baseline")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("-n", type=int, default=100)
    p.add_argument("--weights")

    p = sub.add_parser("evaluate", help="score hypotheses; without --hyp, write the pipeline report")
    _common(p)
    p.add_argument("--hyp", help="system output, one sentence per line")
    p.add_argument("--gold", help="M2 gold file")

    p = sub.add_parser("sigtest", help="bootstrap sign test: is system A better than B?")
    _common(p)
    p.add_argument("--a", required=True, help="system A output")
    p.add_argument("--b", required=True, help="system B output")
    p.add_argument("--gold", required=True, help="M2 gold file")
    p.add_argument("--samples", type=int)

    p = sub.add_parser("pipeline", help="run every stage and write the report")
    _common(p)
    return ap


def config_from_args(args):
    overrides = parse_assignments(args.set)
    g = overrides.setdefault("general", {})
    if args.seed is not None:
        g["seed"] = str(args.seed)
    if args.jobs is not None:
        g["jobs"] = str(args.jobs)
    return resolve_config(args.config, overrides, profile=args.profile)


def _weights(args, wd, variant, stage):
    path = args.weights or wd.require(stage, "tune", variant, "weights.txt")
    return FeatureWeights.load(path)


def _cmd_correct(cfg, wd, args):
    variants = args.variant or list(pl.VARIANTS)
    if not args.input:
        pl.run_stage("correct", lambda c, w: pl.stage_correct(c, w, variants), cfg, wd)
        return
    if len(variants) != 1:
        raise ConfigError("--input needs exactly one --variant")
    models = pl.load_models(cfg, wd, variants[0], "correct")
    sources = read_sentences(args.input)
    hyps = pl.decode_corpus(sources, models, _weights(args, wd, variants[0], "correct"),
                            cfg["decoder"]["beam_size"], cfg["general"]["jobs"])
    if args.output:
        write_sentences(args.output, hyps)
    else:
        for h in hyps:
            print(" ".join(h))


def _cmd_nbest(cfg, wd, args):
    models = pl.load_models(cfg, wd, args.variant, "nbest")
    weights = _weights(args, wd, args.variant, "nbest")
    beam = cfg["decoder"]["beam_size"]
    nbests = [decode_nbest(s, models, weights, beam, args.n) for s in read_sentences(args.input)]
    write_nbest(args.output, nbests, models.feature_names)


def _cmd_evaluate(cfg, wd, args):
    if args.hyp:
        if not args.gold:
            raise ConfigError("--hyp needs --gold")
        entries = read_m2(args.gold)
        report = score_corpus(read_sentences(args.hyp), [e.source for e in entries],
                              pl.gold_sets(entries), cfg["eval"]["beta"])
        print(f"tp={report.tp} fp={report.fp} fn={report.fn} {report}")
        return
    pl.run_stage("evaluate", pl.stage_evaluate, cfg, wd)
    print(wd.path("report.txt").read_text(encoding="utf-8"), end="")


def _cmd_sigtest(cfg, args):
    entries = read_m2(args.gold)
    samples = args.samples or cfg["eval"]["bootstrap_samples"]
    p = bootstrap_sign_test(read_sentences(args.a), read_sentences(args.b), [e.source for e in entries],
                            pl.gold_sets(entries), samples, pl.stage_seed(cfg, "sigtest"), cfg["eval"]["beta"])
    print(f"p={p:.6f}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigError, OSError) as e:
        print(f"nngec: config error: {e}", file=sys.stderr)
        return 2
    log.info("resolved config %s", cfg.to_json())
    wd = pl.Workdir(args.workdir)
    try:
        cmd = args.command
        if cmd in STAGE_COMMANDS:
            pl.run_stage(cmd, STAGE_COMMANDS[cmd], cfg, wd)
        elif cmd == "tune":
            variants = args.variant or list(pl.VARIANTS)
            pl.run_stage("tune", lambda c, w: pl.stage_tune(c, w, variants), cfg, wd)
        elif cmd == "correct":
            _cmd_correct(cfg, wd, args)
        elif cmd == "nbest":
            _cmd_nbest(cfg, wd, args)
        elif cmd == "evaluate":
            _cmd_evaluate(cfg, wd, args)
        elif cmd == "sigtest":
            _cmd_sigtest(cfg, args)
        elif cmd == "pipeline":
            pl.run_pipeline(cfg, args.workdir)
            print(wd.path("report.txt").read_text(encoding="utf-8"), end="")
    except pl.StageError as e:
        print(f"nngec: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"nngec: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
