"""Training regimes (unsupervised, semi-/fully supervised) and inference."""
import copy
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_into, read_checkpoint, save_checkpoint
from .config import TrainConfig
from .corpus import PAD, BOS, Vocabulary, detokenize, tokenize
from .errors import ConfigError, ContractError
from .graph import KnowledgeGraph
from .encoders import pad_batch
from .model import KGAE, ModelConfig
from .optim import AdamState, adam_step, clip_grad_norm

log = logging.getLogger(__name__)

MEMORY_KNOWLEDGE = "knowledge"
MEMORY_VISUAL = "knowledge+visual"


@dataclass
class Trained:
    """A model with everything needed to run or save it."""
    model: KGAE
    vocab: Vocabulary
    graph: KnowledgeGraph
    config: TrainConfig
    regime: str = "unsupervised"
    memory: str = MEMORY_KNOWLEDGE
    history: dict = field(default_factory=dict)

    @property
    def with_visual(self):
        return self.memory == MEMORY_VISUAL

    def save(self, path):
        meta = {"seed": self.config.seed, "regime": self.regime, "decoder_memory": self.memory,
                "train_config": self.config.to_json(), "model_config": self.model.cfg.to_json(),
                "vocab": list(self.vocab.tokens), "graph": self.graph.to_json()}
        return save_checkpoint(path, self.model.parameters(), meta)

    @classmethod
    def load(cls, path, graph=None):
        manifest, arrays = read_checkpoint(path)
        graph = graph or KnowledgeGraph.from_json(manifest["graph"])
        vocab = Vocabulary(manifest["vocab"])
        model = KGAE(ModelConfig.from_json(manifest["model_config"]), graph, len(vocab))
        load_into(model.parameters(), arrays)
        return cls(model, vocab, graph, TrainConfig.from_dict(manifest["train_config"]),
                   manifest.get("regime", "unsupervised"), manifest.get("decoder_memory", MEMORY_KNOWLEDGE))


def _batches(rng, n, batch_size):
    """Endless stream of index batches, one seeded permutation per epoch."""
    while True:
        perm = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield perm[i:i + batch_size]


def _teacher_forcing(token_lists):
    inputs = [[BOS] + list(t[:-1]) for t in token_lists]
    ids_in, _ = pad_batch(inputs, pad=PAD)
    ids_out, _ = pad_batch(token_lists, pad=PAD)
    return ids_in, ids_out


def decoder_loss(model, memory, token_lists):
    ids_in, ids_out = _teacher_forcing(token_lists)
    logits = model.decoder.decode_train(memory, ids_in)
    return T.cross_entropy(logits, ids_out, ignore_index=PAD)


@contextmanager
def _frozen(params):
    for p in params.values():
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params.values():
            p.requires_grad = True


def _step(loss, params, opt, clip):
    for p in params.values():
        p.grad = None
    T.backward(loss)
    for p in params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    clip_grad_norm(params, clip)
    adam_step(params, opt)
    return float(loss.data)


def _adam(cfg, lr=None):
    return AdamState(lr=cfg.lr if lr is None else lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                     weight_decay=cfg.weight_decay)


def check_unpaired(images, reports):
    """Reject image and report sets that share study ids."""
    shared = {s.id for s in images} & {s.id for s in reports}
    if shared:
        raise ContractError(f"image and report sets share {len(shared)} study ids (e.g. {sorted(shared)[0]!r}); "
                            "unsupervised training requires disjoint sets")


def train_stage1(model, images, reports, cfg, steps=None):
    """Both knowledge encoders, F, graph and the classifier on per-modality BCE."""
    steps = cfg.stage1_steps if steps is None else steps
    params = model.encoder_params()
    opt = _adam(cfg, cfg.stage1_lr)
    img_x = np.stack([s.image for s in images]).astype(np.float64)
    img_y = np.array([s.labels for s in images], dtype=np.float64)
    rep_tok = [s.token_ids for s in reports]
    rep_y = np.array([s.labels for s in reports], dtype=np.float64)
    img_it = _batches(np.random.default_rng([cfg.seed, 11]), len(images), cfg.batch_size)
    rep_it = _batches(np.random.default_rng([cfg.seed, 12]), len(reports), cfg.batch_size)
    losses = []
    for _ in range(steps):
        bi, br = next(img_it), next(rep_it)
        v = model.node_embeddings()
        _, g_i = model.encode_images(img_x[bi], v)
        _, g_r = model.encode_reports([rep_tok[j] for j in br], v)
        loss = (T.bce_with_logits(model.classifier.logits(g_i), img_y[bi]) +
                T.bce_with_logits(model.classifier.logits(g_r), rep_y[br]))
        losses.append(_step(loss, params, opt, cfg.clip_norm))
    return losses


def report_knowledge(model, token_lists, batch_size=64):
    """G_R for every report with the encoder frozen."""
    out = []
    with T.no_grad():
        v = model.node_embeddings()
        for i in range(0, len(token_lists), batch_size):
            out.append(model.encode_reports(token_lists[i:i + batch_size], v)[1].data)
    return np.concatenate(out, axis=0)


def train_stage2(model, reports, cfg, steps=None):
    """Decoder and bank on R -> G_R -> R auto-encoding; KE_R, F and the graph stay frozen.

    With ``cfg.stage2_embedder`` the report embedder trains too, so wording that
    the label-trained encoder ignores can still reach the decoder.
    """
    steps = cfg.stage2_steps if steps is None else steps
    tokens = [s.token_ids for s in reports]
    params = model.decoder_params()
    if cfg.stage2_embedder:
        params.update(model.group("report_embedder."))
        with T.no_grad():
            v = T.Tensor(model.node_embeddings().data)
    else:
        g_all = report_knowledge(model, tokens)
    opt = _adam(cfg)
    it = _batches(np.random.default_rng([cfg.seed, 21]), len(reports), cfg.batch_size)
    losses = []
    with _frozen(model.group("ke_report.", "mapper.")):
        for _ in range(steps):
            b = next(it)
            batch = [tokens[j] for j in b]
            g = model.encode_reports(batch, v)[1] if cfg.stage2_embedder else T.Tensor(g_all[b])
            loss = decoder_loss(model, g, batch)
            losses.append(_step(loss, params, opt, cfg.clip_norm))
    return losses


def label_groups(studies):
    """Observation-label vector (as bytes) -> indices of the studies carrying it."""
    groups = {}
    for i, s in enumerate(studies):
        groups.setdefault(np.asarray(s.labels, dtype=bool).tobytes(), []).append(i)
    return groups


def train_image_alignment(model, images, reports, cfg, steps=None):
    """Fit the image side to the frozen report auto-encoder.

    Each image is matched, by its observation labels alone, to a random report
    of the unpaired report set with the same labels; the image embedder and
    image attention then minimise BCE plus the frozen decoder's loss on that
    report. Images whose label vector no report carries only get the BCE term.
    """
    steps = cfg.align_steps if steps is None else steps
    params = model.group("image_embedder.", "ke_image.")
    opt = _adam(cfg, cfg.align_lr)
    img_x = np.stack([s.image for s in images]).astype(np.float64)
    img_y = np.array([s.labels for s in images], dtype=np.float64)
    groups = label_groups(reports)
    it = _batches(np.random.default_rng([cfg.seed, 41]), len(images), cfg.batch_size)
    pick = np.random.default_rng([cfg.seed, 42])
    with T.no_grad():
        v = T.Tensor(model.node_embeddings().data)
    losses = []
    for _ in range(steps):
        b = next(it)
        rows, targets = [], []
        for k, i in enumerate(b):
            cands = groups.get(img_y[i].astype(bool).tobytes())
            if cands:
                rows.append(k)
                targets.append(reports[cands[pick.integers(len(cands))]].token_ids)
        _, g_i = model.encode_images(img_x[b], v)
        loss = T.bce_with_logits(model.classifier.logits(g_i), img_y[b])
        if rows:
            loss = loss + decoder_loss(model, g_i[np.array(rows)], targets)
        losses.append(_step(loss, params, opt, cfg.clip_norm))
    return losses


def attach_tokens(studies, vocab):
    for s in studies:
        s.token_ids = tokenize(s.report, vocab)
    return studies


def train_unsupervised(images, reports, graph, cfg, vocab=None):
    """Stage 1 (encoder BCE on unpaired images and reports), Stage 2 (report
    auto-encoding), then image-side alignment to the frozen auto-encoder.

    Only ``id``, ``image``, ``report`` and ``labels`` of each study are read.
    """
    check_unpaired(images, reports)
    vocab = vocab or Vocabulary.build([s.report for s in reports])
    attach_tokens(reports, vocab)
    longest = max(len(s.token_ids) for s in reports)
    if longest > cfg.t_max:
        raise ConfigError(f"longest report has {longest} tokens; raise t_max above {cfg.t_max}")
    model = KGAE(cfg.model_config(), graph, len(vocab), seed=cfg.seed)
    log.info("stage 1: %d steps on %d images / %d reports", cfg.stage1_steps, len(images), len(reports))
    h1 = train_stage1(model, images, reports, cfg)
    log.info("stage 2: %d steps", cfg.stage2_steps)
    h2 = train_stage2(model, reports, cfg)
    log.info("image alignment: %d steps", cfg.align_steps)
    h3 = train_image_alignment(model, images, reports, cfg)
    return Trained(model, vocab, graph, cfg, "unsupervised", MEMORY_KNOWLEDGE,
                   {"stage1": h1, "stage2": h2, "align": h3})


def select_pairs(n, ratio, seed):
    """Deterministic subset of ``round(ratio * n)`` pair indices (at least one)."""
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"ratio must lie in (0, 1], got {ratio}")
    k = max(1, int(round(ratio * n)))
    rng = np.random.default_rng([seed, 31])
    return np.sort(rng.permutation(n)[:k])


def finetune(pairs, ratio, base, cfg=None, epochs=None):
    """Fine-tune every parameter on I -> [G_I ; I'] -> R with a seeded subset of pairs.

    ``base`` is left untouched; the returned model is a copy.
    """
    cfg = cfg or base.config
    epochs = cfg.finetune_epochs if epochs is None else epochs
    subset = [pairs[i] for i in select_pairs(len(pairs), ratio, cfg.seed)]
    attach_tokens(subset, base.vocab)
    model = copy.deepcopy(base.model)
    params = model.parameters()
    opt = _adam(cfg, cfg.finetune_lr)
    rng = np.random.default_rng([cfg.seed, 32])
    x = np.stack([s.image for s in subset]).astype(np.float64)
    uses = np.zeros(len(subset), dtype=np.int64)
    losses, per_epoch = [], []
    for _ in range(epochs):
        perm = rng.permutation(len(subset))
        for i in range(0, len(subset), cfg.batch_size):
            b = perm[i:i + cfg.batch_size]
            uses[b] += 1
            mem = model.image_memory(x[b], with_visual=True)
            loss = decoder_loss(model, mem, [subset[j].token_ids for j in b])
            losses.append(_step(loss, params, opt, cfg.clip_norm))
        per_epoch.append(uses.copy())
    regime = "supervised" if ratio == 1.0 else "semi-supervised"
    return Trained(model, base.vocab, base.graph, cfg, regime, MEMORY_VISUAL,
                   {"finetune": losses, "pair_uses": per_epoch, "n_pairs": len(subset)})


def infer(images, trained, max_len=None):
    """Report text for each image via I -> G_I -> R."""
    single = not isinstance(images, list) and np.asarray(images).ndim == 2
    batch = [images] if single else list(images)
    ids = trained.model.generate_from_images(batch, trained.with_visual, max_len)
    texts = [detokenize(t, trained.vocab) for t in ids]
    return texts[0] if single else texts


def reconstruct(reports, trained, max_len=None):
    """Auto-encode report texts through G_R; returns generated token lists."""
    toks = [tokenize(r, trained.vocab) for r in reports]
    return trained.model.generate_from_reports(toks, max_len)


def stage_summary(trained, window=100):
    """Steps and trailing mean loss of every recorded training stage."""
    out = {}
    for name, hist in trained.history.items():
        if name == "pair_uses" or not isinstance(hist, list):
            continue
        tail = hist[-window:]
        out[name] = {"steps": len(hist), "final_loss": float(np.mean(tail)) if tail else None}
    if "n_pairs" in trained.history:
        out["n_pairs"] = trained.history["n_pairs"]
    return out


def moving_average(x, w):
    x = np.asarray(x, dtype=float)
    if len(x) < w:
        return x[:0]
    c = np.cumsum(np.insert(x, 0, 0.0))
    return (c[w:] - c[:-w]) / w


def steps_for_epochs(n, batch_size, epochs):
    return epochs * math.ceil(n / batch_size)
