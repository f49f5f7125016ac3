"""Studies, tokenization, corpus files and the synthetic study generator."""
import base64
import json
import os
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SchemaError

OBSERVATIONS = [
    "Atelectasis", "Cardiomegaly", "Consolidation", "Edema", "Enlarged Cardiomediastinum",
    "Fracture", "Lung Lesion", "Lung Opacity", "No Finding", "Pleural Effusion",
    "Pleural Other", "Pneumonia", "Pneumothorax", "Support Devices",
]
NO_FINDING = OBSERVATIONS.index("No Finding")

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ["<pad>", "<bos>", "<eos>", "<unk>"]

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


# -- tokenization -----------------------------------------------------------

def words(text):
    return _TOKEN_RE.findall(text.lower())


def normalize(text):
    return " ".join(words(text))


@dataclass
class Vocabulary:
    tokens: list

    def __post_init__(self):
        if self.tokens[:4] != SPECIALS:
            raise SchemaError("vocabulary must start with the reserved tokens " + " ".join(SPECIALS))
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def build(cls, texts):
        seen = set()
        for t in texts:
            seen.update(words(t))
        return cls(SPECIALS + sorted(seen - set(SPECIALS)))


def tokenize(text, vocab):
    return [vocab.index.get(w, UNK) for w in words(text)] + [EOS]


def detokenize(ids, vocab):
    out = []
    for i in ids:
        i = int(i)
        if i == EOS:
            break
        if i in (PAD, BOS):
            continue
        out.append(vocab.tokens[i])
    return " ".join(out)


# -- studies and files ------------------------------------------------------

@dataclass
class Study:
    id: str
    image: np.ndarray = None
    report: str = None
    labels: list = field(default_factory=lambda: [False] * len(OBSERVATIONS))
    pair_id: str = None
    token_ids: list = field(default=None, repr=False, compare=False)


def _encode_image_inline(img):
    h, w = img.shape
    return f"b64:{h}x{w}:" + base64.b64encode(np.ascontiguousarray(img, dtype="<f4").tobytes()).decode()


def _decode_image(ref, base_dir, sidecars):
    if ref.startswith("b64:"):
        _, hw, payload = ref.split(":", 2)
        h, w = (int(x) for x in hw.split("x"))
        return np.frombuffer(base64.b64decode(payload), dtype="<f4").reshape(h, w).copy()
    name, rest = ref.rsplit("@", 1)
    offset, hw = rest.split(":")
    h, w = (int(x) for x in hw.split("x"))
    if name not in sidecars:
        sidecars[name] = np.fromfile(os.path.join(base_dir, name), dtype=np.uint8)
    buf = sidecars[name]
    start = int(offset)
    return buf[start:start + 4 * h * w].view("<f4").reshape(h, w).copy()


def save_corpus(studies, path, sidecar=True):
    """Write JSONL; images go to ``<stem>.images.bin`` unless ``sidecar`` is False."""
    path = str(path)
    base_dir = os.path.dirname(path) or "."
    bin_name = os.path.splitext(os.path.basename(path))[0] + ".images.bin"
    offset = 0
    bin_fh = None
    try:
        with open(path, "w") as fh:
            for s in studies:
                ref = None
                if s.image is not None:
                    img = np.ascontiguousarray(s.image, dtype="<f4")
                    if sidecar:
                        if bin_fh is None:
                            bin_fh = open(os.path.join(base_dir, bin_name), "wb")
                        bin_fh.write(img.tobytes())
                        ref = f"{bin_name}@{offset}:{img.shape[0]}x{img.shape[1]}"
                        offset += img.nbytes
                    else:
                        ref = _encode_image_inline(img)
                rec = {"id": s.id, "image_ref": ref, "report": s.report,
                       "labels": [bool(x) for x in s.labels], "pair_id": s.pair_id}
                fh.write(json.dumps(rec) + "\n")
    finally:
        if bin_fh is not None:
            bin_fh.close()


_REQUIRED = ("id", "image_ref", "report", "labels", "pair_id")


def _parse(line, lineno, base_dir, sidecars, read_pairing):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise SchemaError(f"line {lineno}: malformed JSON ({e.msg})") from None
    if not isinstance(rec, dict):
        raise SchemaError(f"line {lineno}: record is not an object")
    for key in _REQUIRED:
        if key not in rec:
            raise SchemaError(f"line {lineno}: missing field {key!r}")
    labels = rec["labels"]
    if not isinstance(labels, list) or len(labels) != len(OBSERVATIONS):
        raise SchemaError(f"line {lineno}: field 'labels' must hold {len(OBSERVATIONS)} booleans")
    img = _decode_image(rec["image_ref"], base_dir, sidecars) if rec["image_ref"] else None
    return Study(str(rec["id"]), img, rec["report"], [bool(x) for x in labels],
                 rec["pair_id"] if read_pairing else None)


def load_corpus(path, read_pairing=True):
    """Read a JSONL corpus. ``read_pairing=False`` never touches ``pair_id`` values."""
    path = str(path)
    base_dir = os.path.dirname(path) or "."
    sidecars, out = {}, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                out.append(_parse(line, lineno, base_dir, sidecars, read_pairing))
    return out


# -- synthetic catalog ------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    label: str
    region: str
    prob: float
    patch: tuple
    templates: tuple


# (label, region, sampling probability, glyph patch (row, col), templates)
CATALOG = (
    Finding("Atelectasis", "lungs", 0.14, (5, 1), (
        "there is bibasilar atelectasis", "minimal atelectasis at the lung bases",
        "subsegmental atelectasis is present")),
    Finding("Cardiomegaly", "cardiac", 0.16, (4, 3), (
        "the heart is enlarged", "there is cardiomegaly", "the cardiac silhouette is enlarged")),
    Finding("Consolidation", "lungs", 0.10, (4, 5), (
        "focal consolidation is present", "there is right lower lobe consolidation",
        "patchy consolidation in the left lung")),
    Finding("Edema", "lungs", 0.12, (2, 2), (
        "there is mild pulmonary edema", "interstitial edema is present",
        "vascular congestion with edema")),
    Finding("Enlarged Cardiomediastinum", "cardiac", 0.08, (1, 3), (
        "the mediastinum is widened", "enlarged cardiomediastinal contour",
        "the mediastinal contour is prominent")),
    Finding("Fracture", "bones", 0.07, (0, 0), (
        "there is a healed rib fracture", "an acute rib fracture is seen",
        "a displaced clavicle fracture")),
    Finding("Lung Lesion", "lungs", 0.08, (1, 5), (
        "there is a pulmonary nodule", "a mass is seen in the right upper lobe",
        "innumerable nodules are present")),
    Finding("Lung Opacity", "lungs", 0.18, (3, 1), (
        "there is a hazy opacity", "patchy airspace opacity is seen",
        "increased opacity at the left base")),
    Finding("Pleural Effusion", "pleura", 0.15, (6, 5), (
        "there is a small pleural effusion", "bilateral pleural effusions are present",
        "a moderate left effusion")),
    Finding("Pleural Other", "pleura", 0.06, (0, 6), (
        "there is pleural thickening", "apical pleural scarring is noted",
        "blunting of the costophrenic angle")),
    Finding("Pneumonia", "lungs", 0.09, (5, 3), (
        "findings concerning for pneumonia", "there is a right lower lobe pneumonia",
        "airspace disease compatible with pneumonia")),
    Finding("Pneumothorax", "pleura", 0.07, (0, 2), (
        "there is a small apical pneumothorax", "a right pneumothorax is present",
        "a tiny left pneumothorax")),
    Finding("Support Devices", "devices", 0.13, (2, 6), (
        "a central venous catheter is in place", "an endotracheal tube is present",
        "a pacemaker is seen")),
)

REGIONS = ("cardiac", "lungs", "pleura", "bones", "devices")
NORMAL_SENTENCES = {
    "cardiac": ("heart size is normal", "the cardiomediastinal silhouette is normal"),
    "lungs": ("the lungs are clear", "no focal airspace disease"),
    "pleura": ("there is no pleural effusion or pneumothorax", "no pleural effusion or pneumothorax is seen"),
    "bones": ("no acute osseous abnormality", "the osseous structures are intact"),
    "devices": (),
}

IMAGE_SIZE = 56
PATCH = 8
GLYPH = 6


def glyph_patterns(catalog=CATALOG):
    """Fixed binary 6x6 glyph per finding (independent of the corpus seed)."""
    rng = np.random.default_rng(20240611)
    pats = []
    while len(pats) < len(catalog):
        p = rng.random((GLYPH, GLYPH)) < 0.5
        if all((p != q).sum() >= 10 for q in pats):
            pats.append(p)
    return pats


def lexicon_entries(catalog=CATALOG):
    """(phrase, label index, polarity) triples recognised by the labeler."""
    out = []
    for f in catalog:
        idx = OBSERVATIONS.index(f.label)
        out.extend((t, idx, True) for t in f.templates)
    for region, sents in NORMAL_SENTENCES.items():
        for s in sents:
            for f in catalog:
                if f.region == region:
                    out.append((s, OBSERVATIONS.index(f.label), False))
    return out


def lexicon_phrases(catalog=CATALOG):
    seen = []
    for p, _, _ in lexicon_entries(catalog):
        if p not in seen:
            seen.append(p)
    return seen


def phrasing_weights(k):
    """Template preference: each alternative is half as likely as the one before."""
    w = 0.5 ** np.arange(k)
    return w / w.sum()


def _pick(options, rng):
    return options[rng.choice(len(options), p=phrasing_weights(len(options)))]


def realize_report(findings, rng, catalog=CATALOG):
    present = set(findings)
    sents = []
    for region in REGIONS:
        hits = [f for f in catalog if f.region == region and f.label in present]
        if hits:
            sents.extend(_pick(f.templates, rng) for f in hits)
        elif NORMAL_SENTENCES[region]:
            sents.append(_pick(NORMAL_SENTENCES[region], rng))
    return " . ".join(sents) + " ."


def render_image(findings, rng, catalog=CATALOG, patterns=None, noise=0.08):
    patterns = glyph_patterns(catalog) if patterns is None else patterns
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    c = (IMAGE_SIZE - 1) / 2
    body = np.exp(-(((yy - c) / 24.0) ** 2 + ((xx - c) / 20.0) ** 2) * 2.0)
    img = 0.25 * body + rng.normal(0.0, noise, size=(IMAGE_SIZE, IMAGE_SIZE))
    present = set(findings)
    for f, pat in zip(catalog, patterns):
        if f.label in present:
            r, col = f.patch
            y0, x0 = r * PATCH + 1, col * PATCH + 1
            strength = 0.75 + 0.2 * rng.random()
            img[y0:y0 + GLYPH, x0:x0 + GLYPH] += strength * pat
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def sample_findings(rng, catalog=CATALOG):
    return [f.label for f in catalog if rng.random() < f.prob]


def labels_for(findings):
    lab = [o in findings for o in OBSERVATIONS]
    lab[NO_FINDING] = not any(lab)
    return lab


def _study_rng(seed, stream, index):
    return np.random.default_rng([seed, stream, index])


def make_study(seed, stream, index, kind, prefix, catalog=CATALOG, patterns=None):
    """One synthetic study. ``kind`` is 'image', 'report' or 'both'."""
    rng = _study_rng(seed, stream, index)
    findings = sample_findings(rng, catalog)
    report_rng = np.random.default_rng([seed, stream, index, 1])
    image_rng = np.random.default_rng([seed, stream, index, 2])
    s = Study(f"{prefix}-{index:06d}", labels=labels_for(findings))
    if kind in ("image", "both"):
        s.image = render_image(findings, image_rng, catalog, patterns)
    if kind in ("report", "both"):
        s.report = realize_report(findings, report_rng, catalog)
    return s


_STREAMS = {"paired": 0, "image": 1, "report": 2, "test": 3}


def gen_synthetic_corpus(seed, n_images, n_reports, n_pairs=0, n_test=0, catalog=CATALOG):
    """Synthetic corpora as a dict of study lists.

    ``images`` and ``reports`` are the unpaired sets; their first ``n_pairs``
    entries come from shared underlying studies and carry ``pair_id``.
    ``pairs`` holds those shared studies whole, ``test`` fresh full studies.
    """
    if n_pairs > min(n_images, n_reports):
        raise ConfigError(f"n_pairs={n_pairs} exceeds min(n_images, n_reports)={min(n_images, n_reports)}")
    if min(n_images, n_reports, n_pairs, n_test) < 0:
        raise ConfigError("study counts must be non-negative")
    pats = glyph_patterns(catalog)
    pairs, images, reports = [], [], []
    for i in range(n_pairs):
        s = make_study(seed, _STREAMS["paired"], i, "both", "pair", catalog, pats)
        img_id, rep_id = f"img-p{i:06d}", f"rep-p{i:06d}"
        pairs.append(Study(s.id, s.image, s.report, s.labels, None))
        images.append(Study(img_id, s.image, None, s.labels, rep_id))
        reports.append(Study(rep_id, None, s.report, s.labels, img_id))
    for i in range(n_images - n_pairs):
        images.append(make_study(seed, _STREAMS["image"], i, "image", "img", catalog, pats))
    for i in range(n_reports - n_pairs):
        reports.append(make_study(seed, _STREAMS["report"], i, "report", "rep", catalog, pats))
    test = [make_study(seed, _STREAMS["test"], i, "both", "test", catalog, pats) for i in range(n_test)]
    return {"images": images, "reports": reports, "pairs": pairs, "test": test}


def write_synthetic(out_dir, corpora, catalog=CATALOG):
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, studies in corpora.items():
        paths[name] = os.path.join(out_dir, f"{name}.jsonl")
        save_corpus(studies, paths[name])
    with open(os.path.join(out_dir, "lexicon.txt"), "w") as fh:
        fh.write("\n".join(lexicon_phrases(catalog)) + "\n")
    with open(os.path.join(out_dir, "lexicon.json"), "w") as fh:
        json.dump([{"phrase": p, "label": i, "positive": pos} for p, i, pos in lexicon_entries(catalog)], fh, indent=1)
    with open(os.path.join(out_dir, "labels.json"), "w") as fh:
        json.dump(OBSERVATIONS, fh, indent=1)
    return paths


def finding_frequencies(studies):
    c = Counter()
    for s in studies:
        c.update(o for o, v in zip(OBSERVATIONS, s.labels) if v)
    return {o: c[o] / len(studies) for o in OBSERVATIONS}
