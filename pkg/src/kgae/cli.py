"""Command-line entry point: ``kgae <subcommand> ...``."""
import argparse
import csv
import json
import logging
import os
import re
import sys
from dataclasses import fields

from . import __version__
from .checkpoint import checkpoint_digest, file_digest
from .config import TrainConfig, resolve_config
from .corpus import detokenize, gen_synthetic_corpus, load_corpus, write_synthetic
from .errors import ConfigError, KGAEError
from .graph import KnowledgeGraph, build_graph
from .metrics import evaluate, load_lexicon

log = logging.getLogger("kgae")

SWEEP_HEADER = ["ratio", "seed", "bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "ce_p", "ce_r", "ce_f1"]


class UsageError(ConfigError):
    """Configuration problem attributable to one command-line flag."""

    def __init__(self, flag, message):
        super().__init__(f"{flag}: {message}")
        self.flag = flag


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(self.prog.split()[-1], message)


def _flag(key):
    return "--" + key.replace("_", "-")


def _parse_bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_ints(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _add_config_flags(p, skip=()):
    """One optional flag per TrainConfig field; None means 'not given'."""
    g = p.add_argument_group("config overrides")
    for f in fields(TrainConfig):
        if f.name in skip:
            continue
        kind = type(f.default)
        if kind is bool:
            conv = _parse_bool
        elif kind is tuple:
            conv = _parse_ints
        else:
            conv = kind
        g.add_argument(_flag(f.name), dest="cfg_" + f.name, type=conv, default=None, metavar=f.name.upper())
    p.add_argument("--config", help="flat TOML config file")


def _overrides(args):
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}


def _resolve(args, extra=None):
    overrides = _overrides(args)
    overrides.update(extra or {})
    try:
        return resolve_config(getattr(args, "config", None), overrides)
    except ConfigError as e:
        bad = [k for k in overrides if re.search(rf"\b{k}\b", str(e))]
        flag = _flag(bad[0]) if bad else "--config"
        raise UsageError(flag, str(e)) from None


def _digests(paths):
    out = {}
    for p in paths:
        if p and os.path.isfile(p):
            out[p] = file_digest(p)
            side = os.path.splitext(p)[0] + ".images.bin"
            if os.path.isfile(side):
                out[side] = file_digest(side)
    return out


def write_manifest(path, argv, cfg=None, source=None, inputs=(), outputs=None, extra=None):
    man = {"tool": "kgae", "version": __version__, "command": list(argv),
           "inputs": _digests(inputs), "outputs": outputs or {}}
    if cfg is not None:
        man["config"] = cfg.to_json()
        man["config_source"] = source
    man.update(extra or {})
    with open(path, "w") as fh:
        json.dump(man, fh, indent=1, sort_keys=True)
    return man


def _beside(path, name="run.json"):
    path = path.rstrip("/")
    return path + "." + name if not os.path.isdir(path) else os.path.join(path, name)


# -- subcommands ---------------------------------------------------------------

def cmd_gen_synthetic(args, argv):
    corpora = gen_synthetic_corpus(args.seed, args.n_images, args.n_reports, args.n_pairs, args.n_test)
    paths = write_synthetic(args.out_dir, corpora)
    write_manifest(os.path.join(args.out_dir, "run.json"), argv,
                   outputs={k: file_digest(v) for k, v in paths.items()})
    log.info("wrote %s", ", ".join(f"{k}={len(v)}" for k, v in corpora.items()))


def _read_lexicon_phrases(path):
    if path.endswith(".json"):
        return sorted({e["phrase"] for e in load_lexicon(path)})
    with open(path) as fh:
        return [ln.strip() for ln in fh if ln.strip()]


def cmd_build_kg(args, argv):
    studies = load_corpus(args.corpus, read_pairing=False)
    texts = [s.report for s in studies if s.report]
    if not texts:
        raise UsageError("--corpus", f"{args.corpus} holds no report texts")
    graph = build_graph(texts, _read_lexicon_phrases(args.lexicon), args.n_kg, args.d, args.embedding_seed)
    graph.save(args.out)
    write_manifest(_beside(args.out), argv, inputs=[args.corpus, args.lexicon],
                   outputs={args.out: file_digest(args.out)})
    log.info("graph with %d nodes written to %s", graph.n_kg, args.out)


def _save_trained(trained, out, argv, cfg, source, inputs, extra=None):
    from .pipelines import stage_summary
    trained.save(out)
    write_manifest(os.path.join(out, "run.json"), argv, cfg, source, inputs,
                   {"checkpoint": checkpoint_digest(out)},
                   dict(stages=stage_summary(trained), **(extra or {})))


def cmd_train_unsup(args, argv):
    from .pipelines import train_unsupervised
    cfg, source = _resolve(args)
    images = load_corpus(args.images, read_pairing=False)
    reports = load_corpus(args.reports, read_pairing=False)
    graph = KnowledgeGraph.load(args.graph)
    if graph.d != cfg.d:
        raise UsageError("--d", f"graph width {graph.d} differs from d={cfg.d}")
    trained = train_unsupervised(images, reports, graph, cfg)
    _save_trained(trained, args.out, argv, cfg, source, [args.images, args.reports, args.graph, args.config])


def cmd_finetune(args, argv):
    from .pipelines import Trained, finetune
    if not 0.0 < args.ratio <= 1.0:
        raise UsageError("--ratio", f"must lie in (0, 1], got {args.ratio}")
    base = Trained.load(args.base)
    merged = base.config.to_json()
    merged.update(_overrides(args))
    merged["ratio"] = args.ratio
    cfg, source = _resolve(argparse.Namespace(config=args.config), merged)
    for k, v in _overrides(args).items():
        source[k] = "flag"
    pairs = load_corpus(args.pairs)
    trained = finetune(pairs, args.ratio, base, cfg)
    _save_trained(trained, args.out, argv, cfg, source, [args.pairs, args.config],
                  {"base_checkpoint": checkpoint_digest(args.base)})


def cmd_generate(args, argv):
    from .pipelines import Trained
    trained = Trained.load(args.ckpt)
    studies = load_corpus(args.images, read_pairing=False)
    if args.image_id:
        by_id = {s.id: s for s in studies}
        missing = [i for i in args.image_id if i not in by_id]
        if missing:
            raise UsageError("--image-id", "unknown study id(s): " + ", ".join(missing))
        studies = [by_id[i] for i in args.image_id]
    studies = [s for s in studies if s.image is not None]
    ids = trained.model.generate_from_images([s.image for s in studies], trained.with_visual, args.max_len)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for s, toks in zip(studies, ids):
            rec = {"id": s.id, "generated_text": detokenize(toks, trained.vocab), "token_ids": [int(t) for t in toks]}
            out.write(json.dumps(rec) + "\n")
    finally:
        if args.out:
            out.close()
    if args.out:
        write_manifest(_beside(args.out), argv, inputs=[args.images],
                       outputs={args.out: file_digest(args.out)},
                       extra={"checkpoint": checkpoint_digest(args.ckpt)})


def _read_generated(path):
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            text = rec.get("generated_text", rec.get("report"))
            if "id" not in rec or text is None:
                raise UsageError("--generated", f"{path}:{n}: need 'id' and 'generated_text' (or 'report')")
            out[rec["id"]] = text
    return out


def cmd_evaluate(args, argv):
    gen = _read_generated(args.generated)
    refs = {s.id: s for s in load_corpus(args.corpus, read_pairing=False)}
    missing = sorted(set(gen) - set(refs))
    if missing:
        raise UsageError("--generated", f"{len(missing)} ids absent from the reference corpus, e.g. {missing[0]}")
    ids = sorted(gen)
    rep = evaluate([gen[i] for i in ids], [refs[i].report for i in ids], [refs[i].labels for i in ids],
                   load_lexicon(args.lexicon))
    payload = rep.to_json()
    text = json.dumps(payload, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        write_manifest(_beside(args.out), argv, inputs=[args.generated, args.corpus, args.lexicon],
                       outputs={args.out: file_digest(args.out)})
    else:
        print(text)


def _data_dir_corpora(data_dir):
    return {name: load_corpus(os.path.join(data_dir, f"{name}.jsonl"), read_pairing=(name == "pairs"))
            for name in ("images", "reports", "pairs", "test")}


def _parse_floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_sweep_ratio(args, argv):
    from .experiments import ratio_sweep
    cfg, source = _resolve(args)
    ratios = _parse_floats(args.ratios)
    bad = [r for r in ratios if not 0.0 <= r <= 1.0]
    if bad or not ratios:
        raise UsageError("--ratios", f"ratios must lie in [0, 1], got {args.ratios}")
    corpora = _data_dir_corpora(args.data_dir)
    rows = ratio_sweep(corpora, cfg, ratios, _parse_ints(args.seeds), load_lexicon(args.lexicon or
                       os.path.join(args.data_dir, "lexicon.json")))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([r[k] for k in SWEEP_HEADER])
    write_manifest(_beside(args.out), argv, cfg, source,
                   [os.path.join(args.data_dir, f"{n}.jsonl") for n in ("images", "reports", "pairs", "test")],
                   {args.out: file_digest(args.out)})


def cmd_ablate(args, argv):
    from .experiments import ablation
    switches = []
    if args.no_bank:
        switches.append(("no-bank", {"use_bank": False}))
    if args.no_shared_f:
        switches.append(("no-shared-f", {"shared_f": False}))
    for n in args.bank_size or []:
        if n < 1:
            raise UsageError("--bank-size", f"must be positive, got {n}")
        switches.append((f"bank-size={n}", {"n_bank": n}))
    if not switches:
        raise UsageError("ablate", "give at least one of --no-bank, --no-shared-f, --bank-size")
    cfg, source = _resolve(args)
    corpora = _data_dir_corpora(args.data_dir)
    report = ablation(corpora, cfg, switches, _parse_ints(args.seeds),
                      load_lexicon(args.lexicon or os.path.join(args.data_dir, "lexicon.json")))
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        write_manifest(_beside(args.out), argv, cfg, source,
                       [os.path.join(args.data_dir, f"{n}.jsonl") for n in ("images", "reports", "test")],
                       {args.out: file_digest(args.out)})
    else:
        print(text)


# -- parser ------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="kgae", description="Knowledge-graph auto-encoder for report generation.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-synthetic", help="write synthetic image/report corpora")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-images", type=int, default=2000)
    s.add_argument("--n-reports", type=int, default=2000)
    s.add_argument("--n-pairs", type=int, default=0)
    s.add_argument("--n-test", type=int, default=500)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_gen_synthetic)

    s = sub.add_parser("build-kg", help="build the knowledge graph from a report corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--lexicon", required=True, help="phrase list (.txt) or lexicon (.json)")
    s.add_argument("--n-kg", type=int, default=16)
    s.add_argument("--d", type=int, default=32)
    s.add_argument("--embedding-seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_build_kg)

    s = sub.add_parser("train-unsup", help="unsupervised training on unpaired images and reports")
    s.add_argument("--images", required=True)
    s.add_argument("--reports", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--out", required=True)
    _add_config_flags(s)
    s.set_defaults(fn=cmd_train_unsup)

    s = sub.add_parser("finetune", help="fine-tune a checkpoint on a fraction of paired studies")
    s.add_argument("--pairs", required=True)
    s.add_argument("--ratio", type=float, required=True)
    s.add_argument("--base", required=True)
    s.add_argument("--out", required=True)
    _add_config_flags(s, skip=("ratio",))
    s.set_defaults(fn=cmd_finetune)

    s = sub.add_parser("generate", help="generate reports for images")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--images", required=True, help="corpus holding the images")
    s.add_argument("--image-id", action="append", help="restrict to these study ids (repeatable)")
    s.add_argument("--max-len", type=int, default=None)
    s.add_argument("--out", help="JSONL output (default stdout)")
    s.set_defaults(fn=cmd_generate)

    s = sub.add_parser("evaluate", help="BLEU, ROUGE-L and clinical efficacy")
    s.add_argument("--generated", required=True)
    s.add_argument("--corpus", required=True, help="reference corpus")
    s.add_argument("--lexicon", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_evaluate)

    for name, fn, text in (("sweep-ratio", cmd_sweep_ratio, "paired-ratio sweep to CSV"),
                           ("ablate", cmd_ablate, "train ablated and full models under identical seeds")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--data-dir", required=True, help="directory written by gen-synthetic")
        s.add_argument("--lexicon")
        s.add_argument("--seeds", default="0,1,2")
        s.add_argument("--out", required=(name == "sweep-ratio"))
        _add_config_flags(s)
        s.set_defaults(fn=fn)
        if name == "sweep-ratio":
            s.add_argument("--ratios", default="0.2,0.4,0.6,0.8,1.0")
        else:
            s.add_argument("--no-bank", action="store_true")
            s.add_argument("--no-shared-f", action="store_true")
            s.add_argument("--bank-size", type=int, action="append")
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"kgae: error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.fn(args, argv)
    except ConfigError as e:
        print(f"kgae: error: {e}", file=sys.stderr)
        return 2
    except (KGAEError, OSError, ValueError, KeyError) as e:
        print(f"kgae: failed: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
