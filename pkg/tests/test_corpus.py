import json
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgae.corpus import (CATALOG, EOS, NO_FINDING, NORMAL_SENTENCES, OBSERVATIONS, UNK, Study, Vocabulary,
                         detokenize, finding_frequencies, gen_synthetic_corpus, load_corpus, lexicon_entries,
                         normalize, realize_report, save_corpus, tokenize, write_synthetic)
from kgae.errors import ConfigError, SchemaError
from kgae.metrics import extract_labels


@pytest.fixture(scope="module")
def vocab(tiny_corpus):
    return Vocabulary.build([s.report for s in tiny_corpus["reports"]] + ["lungs are clear ."])


def test_empty_text_is_eos(vocab):
    assert tokenize("", vocab) == [EOS]


def test_known_words(vocab):
    ids = tokenize("Lungs are clear.", vocab)
    assert len(ids) == 5 and ids[-1] == EOS and UNK not in ids
    assert tokenize("zebra", vocab) == [UNK, EOS]


def test_reserved_ids_and_dense(vocab):
    assert vocab.tokens[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    assert sorted(vocab.index.values()) == list(range(len(vocab)))
    with pytest.raises(SchemaError):
        Vocabulary(["a", "b", "c", "d"])


def test_round_trip_on_generated_reports():
    corpora = gen_synthetic_corpus(3, 0, 1000)
    texts = [s.report for s in corpora["reports"]]
    vocab = Vocabulary.build(texts)
    assert all(detokenize(tokenize(t, vocab), vocab) == normalize(t) for t in texts)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["the", "lungs", "are", "clear", ".", ",", "no", "effusion"]), max_size=20))
def test_round_trip_property(tokens):
    vocab = Vocabulary.build(["the lungs are clear . , no effusion"])
    text = " ".join(tokens)
    assert detokenize(tokenize(text, vocab), vocab) == normalize(text)


def test_generator_is_deterministic(tmp_path):
    a = write_synthetic(tmp_path / "a", gen_synthetic_corpus(5, 20, 20, 5, 5))
    b = write_synthetic(tmp_path / "b", gen_synthetic_corpus(5, 20, 20, 5, 5))
    for name in a:
        assert open(a[name], "rb").read() == open(b[name], "rb").read()
    binary = lambda p: (tmp_path / p / "images.images.bin").read_bytes()
    assert binary("a") == binary("b")


def test_zero_finding_study():
    report = realize_report([], np.random.default_rng(0))
    lab = extract_labels(report, lexicon_entries())
    assert lab == [i == NO_FINDING for i in range(len(OBSERVATIONS))]
    positives = {t for f in CATALOG for t in f.templates}
    assert not any(p in report for p in positives)


def test_pair_count_limit():
    with pytest.raises(ConfigError):
        gen_synthetic_corpus(0, 5, 3, 4)


def test_pairing_is_a_bijection(tiny_corpus):
    imgs = {s.id: s.pair_id for s in tiny_corpus["images"] if s.pair_id}
    reps = {s.id: s.pair_id for s in tiny_corpus["reports"] if s.pair_id}
    assert len(imgs) == len(reps) == 10
    assert all(reps[r] == i for i, r in imgs.items())


def test_marginal_frequencies():
    studies = gen_synthetic_corpus(11, 0, 10000)["reports"]
    freq = finding_frequencies(studies)
    for f in CATALOG:
        assert abs(freq[f.label] - f.prob) < 0.02, f.label


def test_phrasing_preference():
    studies = gen_synthetic_corpus(12, 0, 5000)["reports"]
    first, second = NORMAL_SENTENCES["cardiac"]
    n1 = sum(first in s.report for s in studies)
    n2 = sum(second in s.report for s in studies)
    assert abs(n1 / (n1 + n2) - 2 / 3) < 0.02


def test_labels_recoverable_from_text(tiny_corpus):
    lex = lexicon_entries()
    for s in tiny_corpus["reports"] + tiny_corpus["test"]:
        assert extract_labels(s.report, lex) == list(s.labels)


@pytest.mark.parametrize("sidecar", [True, False])
def test_save_load_identity(tmp_path, tiny_corpus, sidecar):
    studies = tiny_corpus["images"][:6] + tiny_corpus["reports"][:6] + tiny_corpus["test"][:3]
    path = tmp_path / "c.jsonl"
    save_corpus(studies, path, sidecar=sidecar)
    back = load_corpus(path)
    assert [s.id for s in back] == [s.id for s in studies]
    for a, b in zip(studies, back):
        assert a.report == b.report and a.labels == b.labels and a.pair_id == b.pair_id
        assert (a.image is None and b.image is None) or np.array_equal(a.image, b.image)


def test_load_without_pairing(tmp_path, tiny_corpus):
    path = tmp_path / "c.jsonl"
    save_corpus(tiny_corpus["images"][:3], path)
    assert all(s.pair_id is None for s in load_corpus(path, read_pairing=False))


def test_missing_field_names_field_and_line(tmp_path):
    path = tmp_path / "c.jsonl"
    good = {"id": "a", "image_ref": None, "report": "x", "labels": [False] * 14, "pair_id": None}
    bad = dict(good)
    del bad["labels"]
    path.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(SchemaError, match=r"line 2.*'labels'"):
        load_corpus(path)
    path.write_text("{not json\n")
    with pytest.raises(SchemaError, match="line 1"):
        load_corpus(path)


def test_large_corpus_load_budget(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.random((56, 56)).astype(np.float32)
    studies = [Study(f"s{i}", img, "the lungs are clear .", [False] * 14, None) for i in range(10000)]
    path = tmp_path / "big.jsonl"
    save_corpus(studies, path)
    t = time.perf_counter()
    back = load_corpus(path)
    assert time.perf_counter() - t < 5.0 and len(back) == 10000
