import math
from dataclasses import replace

import numpy as np
import pytest

from kgae import tensor as T
from kgae.checkpoint import checkpoint_digest, read_checkpoint
from kgae.config import TrainConfig
from kgae.corpus import Study, Vocabulary, gen_synthetic_corpus, lexicon_phrases
from kgae.errors import ConfigError, ContractError, LoadError
from kgae.graph import build_graph
from kgae.pipelines import (Trained, attach_tokens, finetune, infer, moving_average, reconstruct, select_pairs,
                            train_stage2, train_unsupervised)
from kgae.model import KGAE

TINY = TrainConfig(d=8, heads=2, n_kg=6, n_bank=4, decoder_layers=1, conv_channels=(2, 2, 4), batch_size=8,
                   stage1_steps=4, stage2_steps=4, align_steps=3, finetune_epochs=2)


class Guarded:
    """Study stand-in whose pairing field cannot be read."""

    def __init__(self, s):
        self.id, self.image, self.report, self.labels = s.id, s.image, s.report, s.labels
        self.token_ids = None

    @property
    def pair_id(self):
        raise AssertionError("pairing field read during unsupervised training")


def _graph(reports, cfg=TINY):
    return build_graph([s.report for s in reports], lexicon_phrases(), cfg.n_kg, cfg.d, cfg.embedding_seed)


@pytest.fixture(scope="module")
def data():
    return gen_synthetic_corpus(2, 24, 24, 8, 6)


@pytest.fixture(scope="module")
def base(data):
    return train_unsupervised(data["images"], data["reports"], _graph(data["reports"]), TINY)


def test_shared_ids_rejected(data):
    imgs = data["images"][:4]
    reps = [Study(imgs[0].id, None, "the lungs are clear .", imgs[0].labels)] + data["reports"][:3]
    with pytest.raises(ContractError, match="share"):
        train_unsupervised(imgs, reps, _graph(data["reports"]), TINY)


def test_pairing_never_read(data, tmp_path):
    imgs = [Guarded(s) for s in data["images"]]
    reps = [Guarded(s) for s in data["reports"]]
    trained = train_unsupervised(imgs, reps, _graph(data["reports"]), TINY)
    trained.save(tmp_path / "guarded")


def test_shuffled_pairing_gives_same_checkpoint(data, tmp_path):
    graph = _graph(data["reports"])
    a = train_unsupervised(data["images"], data["reports"], graph, TINY)
    rng = np.random.default_rng(0)
    ids = [s.pair_id for s in data["reports"]]
    shuffled = [Study(s.id, s.image, s.report, s.labels, ids[j]) for s, j in
                zip(data["reports"], rng.permutation(len(ids)))]
    b = train_unsupervised(data["images"], shuffled, graph, TINY)
    a.save(tmp_path / "a")
    b.save(tmp_path / "b")
    assert checkpoint_digest(tmp_path / "a") == checkpoint_digest(tmp_path / "b")


def test_reproducible_checkpoint(data, base, tmp_path):
    again = train_unsupervised(data["images"], data["reports"], _graph(data["reports"]), TINY)
    base.save(tmp_path / "a")
    again.save(tmp_path / "b")
    assert checkpoint_digest(tmp_path / "a") == checkpoint_digest(tmp_path / "b")
    manifest, _ = read_checkpoint(tmp_path / "a")
    assert manifest["seed"] == TINY.seed and manifest["regime"] == "unsupervised"


def test_stage1_bce_at_init_is_ln2(data):
    graph = _graph(data["reports"])
    reps = data["reports"][:5]
    vocab = Vocabulary.build([s.report for s in reps])
    attach_tokens(reps, vocab)
    model = KGAE(TINY.model_config(), graph, len(vocab))
    model.classifier.fc.w.data[:] = 0
    _, g = model.encode_reports([s.token_ids for s in reps])
    y = np.array([s.labels for s in reps], dtype=float)
    assert abs(float(T.bce_with_logits(model.classifier.logits(g), y).data) - math.log(2)) < 1e-12


def test_stage2_overfits_single_report(data):
    reps = data["reports"][:1]
    vocab = Vocabulary.build([s.report for s in reps])
    attach_tokens(reps, vocab)
    cfg = replace(TrainConfig(), lr=3e-3, batch_size=1)
    model = KGAE(cfg.model_config(), _graph(data["reports"], cfg), len(vocab))
    losses = train_stage2(model, reps, cfg, steps=500)
    assert min(losses[-10:]) < 0.01
    ma = moving_average(losses, 100)
    assert np.all(np.diff(ma) <= 1e-12)


def test_finetune_ratio_one_uses_each_pair_once_per_epoch(data, base):
    tuned = finetune(data["pairs"], 1.0, base)
    for k, uses in enumerate(tuned.history["pair_uses"], 1):
        assert np.all(uses == k)
    assert tuned.regime == "supervised" and tuned.with_visual


def test_finetune_leaves_base_untouched(data, base):
    before = {k: v.data.copy() for k, v in base.model.parameters().items()}
    finetune(data["pairs"], 0.5, base)
    assert all(np.array_equal(before[k], v.data) for k, v in base.model.parameters().items())


def test_subset_selection():
    assert np.array_equal(select_pairs(50, 0.4, 3), select_pairs(50, 0.4, 3))
    assert len(select_pairs(50, 0.4, 3)) == 20 and len(set(select_pairs(50, 0.4, 3))) == 20
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ConfigError):
            select_pairs(10, bad, 0)


def test_finetune_reproducible(data, base, tmp_path):
    finetune(data["pairs"], 0.5, base).save(tmp_path / "a")
    finetune(data["pairs"], 0.5, base).save(tmp_path / "b")
    assert checkpoint_digest(tmp_path / "a") == checkpoint_digest(tmp_path / "b")


def test_infer_deterministic_and_reload(data, base, tmp_path):
    imgs = [s.image for s in data["test"]]
    first = infer(imgs, base, max_len=12)
    assert first == infer(imgs, base, max_len=12)
    assert isinstance(infer(imgs[0], base, max_len=12), str)
    base.save(tmp_path / "ck")
    again = Trained.load(tmp_path / "ck")
    assert infer(imgs, again, max_len=12) == first
    assert reconstruct([data["reports"][0].report], again, max_len=8) == \
        reconstruct([data["reports"][0].report], base, max_len=8)


def test_missing_parameters_listed(base, tmp_path):
    base.save(tmp_path / "ck")
    manifest, arrays = read_checkpoint(tmp_path / "ck")
    from kgae.checkpoint import load_into
    arrays.pop("decoder.bank")
    with pytest.raises(LoadError, match="decoder.bank"):
        load_into(base.model.parameters(), arrays)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(ratio=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(d=10, heads=4)
