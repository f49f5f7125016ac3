"""BLEU-1..4, ROUGE-L and clinical-efficacy scores."""
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .corpus import NO_FINDING, OBSERVATIONS, words
from .errors import ConfigError, ContractError

BLEU_EPS = 1e-9
ROUGE_BETA = 1.2
NEGATION_CUES = ("no", "without", "normal", "negative")


def _check(candidates, references):
    if len(candidates) != len(references):
        raise ContractError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        raise ContractError("empty corpus")


def _ngrams(toks, n):
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def bleu_stats(candidates, references, max_n=4):
    """Clipped n-gram matches, candidate n-gram totals and the two corpus lengths."""
    matches = np.zeros(max_n)
    totals = np.zeros(max_n)
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c, r = words(cand), words(ref)
        c_len += len(c)
        r_len += len(r)
        for n in range(1, max_n + 1):
            cn, rn = _ngrams(c, n), _ngrams(r, n)
            matches[n - 1] += sum(min(k, rn[g]) for g, k in cn.items())
            totals[n - 1] += max(len(c) - n + 1, 0)
    return matches, totals, c_len, r_len


def bleu_n(candidates, references, n):
    """Corpus BLEU with uniform weights over orders 1..n and a brevity penalty."""
    _check(candidates, references)
    matches, totals, c_len, r_len = bleu_stats(candidates, references, n)
    if matches[0] == 0 or c_len == 0:
        return 0.0
    logp = 0.0
    for m, t in zip(matches, totals):
        p = m / t if t > 0 and m > 0 else BLEU_EPS
        logp += math.log(p) / n
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return float(bp * math.exp(logp))


def rouge_l_single(candidate, reference, beta=ROUGE_BETA):
    c, r = words(candidate), words(reference)
    if not c or not r:
        return 0.0
    vocab = {}
    ci = [vocab.setdefault(w, len(vocab)) for w in c]
    ri = [vocab.setdefault(w, len(vocab)) for w in r]
    lcs = kernels.lcs_length(ci, ri)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return ((1 + beta ** 2) * p * rec) / (rec + beta ** 2 * p)


def rouge_l(candidates, references):
    _check(candidates, references)
    return float(np.mean([rouge_l_single(c, r) for c, r in zip(candidates, references)]))


# -- clinical efficacy --------------------------------------------------------

def load_lexicon(path):
    with open(path) as fh:
        raw = json.load(fh)
    return [(e["phrase"], e["label"], bool(e.get("positive", True))) for e in raw]


def _validate_lexicon(lexicon):
    out = []
    for phrase, label, positive in lexicon:
        if isinstance(label, str):
            if label not in OBSERVATIONS:
                raise ConfigError(f"unknown label {label!r} in lexicon")
            label = OBSERVATIONS.index(label)
        if not 0 <= int(label) < len(OBSERVATIONS):
            raise ConfigError(f"unknown label index {label} in lexicon")
        out.append((" ".join(words(phrase)), int(label), bool(positive)))
    return out


def extract_labels(text, lexicon):
    """14 booleans read off ``text`` by phrase matching with negation cues."""
    lexicon = _validate_lexicon(lexicon)
    pred = [False] * len(OBSERVATIONS)
    for sent in " ".join(words(text or "")).split(" . "):
        padded = f" {sent.strip(' .')} "
        for phrase, label, positive in lexicon:
            at = padded.find(f" {phrase} ")
            if at < 0:
                continue
            if positive and any(cue in padded[:at + 1].split() for cue in NEGATION_CUES):
                positive = False
            if positive:
                pred[label] = True
    pred[NO_FINDING] = not any(v for i, v in enumerate(pred) if i != NO_FINDING)
    return pred


def _prf(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def clinical_efficacy(generated, reference_labels, lexicon):
    """Micro precision/recall/F1 plus a per-label breakdown."""
    if len(generated) != len(reference_labels):
        raise ContractError(f"{len(generated)} texts but {len(reference_labels)} label rows")
    lexicon = _validate_lexicon(lexicon)
    pred = np.array([extract_labels(t, lexicon) for t in generated], dtype=bool).reshape(-1, len(OBSERVATIONS))
    ref = np.asarray(reference_labels, dtype=bool).reshape(-1, len(OBSERVATIONS))
    tp = (pred & ref).sum(axis=0)
    fp = (pred & ~ref).sum(axis=0)
    fn = (~pred & ref).sum(axis=0)
    per_label = {}
    for i, name in enumerate(OBSERVATIONS):
        p, r, f = _prf(tp[i], fp[i], fn[i])
        per_label[name] = {"precision": p, "recall": r, "f1": f, "support": int(ref[:, i].sum())}
    p, r, f = _prf(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    return p, r, f, per_label


@dataclass
class MetricReport:
    bleu: list
    rouge_l: float
    ce_precision: float
    ce_recall: float
    ce_f1: float
    n_samples: int
    per_label: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)

    @property
    def bleu4(self):
        return self.bleu[3]


def evaluate(generated, references, reference_labels, lexicon):
    bleu = [bleu_n(generated, references, n) for n in range(1, 5)]
    p, r, f, per = clinical_efficacy(generated, reference_labels, lexicon)
    return MetricReport(bleu, rouge_l(generated, references), p, r, f, len(generated), per)
