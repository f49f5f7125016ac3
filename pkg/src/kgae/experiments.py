"""Multi-seed drivers: unsupervised bases, paired-ratio sweeps and ablations."""
import logging
from dataclasses import replace

import numpy as np

from .corpus import gen_synthetic_corpus, realize_report, sample_findings
from .graph import build_graph
from .metrics import evaluate
from .pipelines import finetune, infer, train_unsupervised

log = logging.getLogger(__name__)


def synthetic_data(seed, n_images=2000, n_reports=2000, n_pairs=1000, n_test=500):
    """Unpaired training sets, a disjoint paired set and a held-out test set.

    The paired studies come from their own generator stream, so the unpaired
    sets used for unsupervised training contain none of them.
    """
    base = gen_synthetic_corpus(seed, n_images, n_reports, 0, n_test)
    paired = gen_synthetic_corpus(seed, n_pairs, n_pairs, n_pairs, 0)["pairs"]
    base["pairs"] = paired
    return base


def lexicon_phrase_list(lexicon):
    seen = []
    for phrase, _, _ in lexicon:
        if phrase not in seen:
            seen.append(phrase)
    return seen


def graph_for(reports, cfg, lexicon):
    return build_graph([s.report for s in reports], lexicon_phrase_list(lexicon), cfg.n_kg, cfg.d,
                       cfg.embedding_seed)


def unsupervised_run(corpora, cfg, lexicon):
    graph = graph_for(corpora["reports"], cfg, lexicon)
    return train_unsupervised(corpora["images"], corpora["reports"], graph, cfg)


def evaluate_images(trained, test, lexicon):
    gen = infer([s.image for s in test], trained)
    return evaluate(gen, [s.report for s in test], [s.labels for s in test], lexicon)


def random_template_reports(n, seed):
    """Reports for randomly drawn finding sets, ignoring the image entirely."""
    rng = np.random.default_rng([seed, 51])
    return [realize_report(sample_findings(rng), rng) for _ in range(n)]


def random_template_baseline(test, lexicon, seed=0):
    gen = random_template_reports(len(test), seed)
    return evaluate(gen, [s.report for s in test], [s.labels for s in test], lexicon)


def _row(ratio, seed, rep):
    row = {"ratio": ratio, "seed": seed, "rouge_l": rep.rouge_l, "ce_p": rep.ce_precision,
           "ce_r": rep.ce_recall, "ce_f1": rep.ce_f1}
    row.update({f"bleu{n + 1}": b for n, b in enumerate(rep.bleu)})
    return row


def ratio_sweep(corpora, cfg, ratios, seeds, lexicon, bases=None, **_):
    """One metric row per (ratio, seed); ratio 0 is the unsupervised base itself."""
    bases = {} if bases is None else bases
    rows = []
    for seed in seeds:
        run_cfg = replace(cfg, seed=seed)
        if seed not in bases:
            bases[seed] = unsupervised_run(corpora, run_cfg, lexicon)
        for ratio in ratios:
            if ratio == 0:
                trained = bases[seed]
            else:
                trained = finetune(corpora["pairs"], ratio, bases[seed], replace(run_cfg, ratio=ratio))
            rows.append(_row(ratio, seed, evaluate_images(trained, corpora["test"], lexicon)))
            log.info("ratio %.2f seed %d: BLEU-4 %.4f CE-F1 %.4f", ratio, seed, rows[-1]["bleu4"],
                     rows[-1]["ce_f1"])
    return rows


def median_by(rows, key, metric="bleu4"):
    groups = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r[metric])
    return {k: float(np.median(v)) for k, v in sorted(groups.items())}


def ablation(corpora, cfg, switches, seeds, lexicon, bases=None):
    """Full and ablated unsupervised models under identical seeds and data order.

    ``switches`` is a list of (name, config changes). Returns per-seed metrics
    for every variant plus paired deltas (ablated minus full) and medians.
    """
    bases = {} if bases is None else bases
    variants = [("full", {})] + list(switches)
    out = {"seeds": list(seeds), "variants": {}}
    for name, changes in variants:
        per_seed = {}
        for seed in seeds:
            run_cfg = replace(cfg, seed=seed, **changes)
            if name == "full":
                if seed not in bases:
                    bases[seed] = unsupervised_run(corpora, run_cfg, lexicon)
                trained = bases[seed]
            else:
                trained = unsupervised_run(corpora, run_cfg, lexicon)
            rep = evaluate_images(trained, corpora["test"], lexicon)
            per_seed[seed] = {"bleu4": rep.bleu4, "ce_f1": rep.ce_f1, "rouge_l": rep.rouge_l}
            log.info("%s seed %d: BLEU-4 %.4f", name, seed, rep.bleu4)
        out["variants"][name] = {
            "changes": changes,
            "per_seed": per_seed,
            "median_bleu4": float(np.median([m["bleu4"] for m in per_seed.values()])),
        }
    full = out["variants"]["full"]["per_seed"]
    for name, _ in switches:
        v = out["variants"][name]
        v["delta_bleu4"] = {s: v["per_seed"][s]["bleu4"] - full[s]["bleu4"] for s in seeds}
    return out
