import numpy as np
import pytest

from kgae import tensor as T
from kgae.corpus import IMAGE_SIZE, render_image, tokenize
from kgae.encoders import ImageEmbedder, KnowledgeEncoder, ObservationClassifier, SharedMapper, knowledge_encode
from kgae.errors import ConfigError, ContractError, DimensionError
from kgae.model import ModelConfig
from kgae.nn import MultiHeadAttention


def _attn(d=4, heads=1, seed=0):
    return MultiHeadAttention(d, heads, np.random.default_rng(seed))


def test_head_count_must_divide_width():
    with pytest.raises(ConfigError):
        _attn(d=6, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(d=10, heads=4)


def test_one_key_gives_its_value_projection():
    att = _attn(d=4, heads=2)
    y = np.random.default_rng(1).normal(size=(1, 4))
    expect = y @ att.wv.data @ att.wo.data
    for seed in range(3):
        x = np.random.default_rng(10 + seed).normal(size=(5, 4))
        assert np.max(np.abs(att(x, y).data - expect)) < 1e-12


def test_identical_keys_uniform_weights():
    att = _attn(d=8, heads=4)
    y = np.tile(np.random.default_rng(2).normal(size=(1, 8)), (6, 1))
    _, w = att(np.random.default_rng(3).normal(size=(3, 8)), y, return_weights=True)
    assert np.max(np.abs(w.data - 1 / 6)) < 1e-12


def test_two_by_three_by_hand():
    att = _attn(d=2, heads=1)
    att.wq.data[:] = [[1.0, 0.0], [0.5, 1.0]]
    att.wk.data[:] = [[0.0, 1.0], [1.0, 0.0]]
    att.wv.data[:] = [[2.0, 0.0], [0.0, 1.0]]
    att.wo.data[:] = np.eye(2)
    x = np.array([[1.0, 2.0], [0.0, -1.0]])
    y = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    out = np.zeros((2, 2))
    for i in range(2):
        q = [x[i, 0] * 1.0 + x[i, 1] * 0.5, x[i, 1] * 1.0]
        s = []
        for j in range(3):
            k = [y[j, 1], y[j, 0]]
            s.append((q[0] * k[0] + q[1] * k[1]) / np.sqrt(2))
        e = np.exp(np.array(s) - max(s))
        a = e / e.sum()
        for j in range(3):
            out[i] += a[j] * np.array([2 * y[j, 0], y[j, 1]])
    assert np.max(np.abs(att(x, y).data - out)) < 1e-12


def test_attention_rows_sum_to_one_per_head():
    att = _attn(d=8, heads=4)
    rng = np.random.default_rng(4)
    _, w = att(rng.normal(size=(2, 5, 8)) * 10, rng.normal(size=(2, 7, 8)) * 10, return_weights=True)
    assert w.shape == (2, 4, 5, 7)
    assert np.max(np.abs(w.data.sum(-1) - 1)) < 1e-9


def test_all_zero_image_with_zero_biases():
    cfg = ModelConfig(d=8, heads=2, conv_channels=(2, 2, 4))
    emb = ImageEmbedder(cfg, np.random.default_rng(0))
    out = emb(np.zeros((IMAGE_SIZE, IMAGE_SIZE)))
    assert out.shape == (1, 49, 8) and not out.data.any()


def test_image_embedding_shape_and_size_error():
    cfg = ModelConfig(d=8, heads=2, conv_channels=(2, 2, 4))
    emb = ImageEmbedder(cfg, np.random.default_rng(0))
    assert emb(np.random.default_rng(1).random((3, IMAGE_SIZE, IMAGE_SIZE))).shape == (3, 49, 8)
    with pytest.raises(DimensionError):
        emb(np.zeros((30, 30)))


def test_one_glyph_changes_some_row():
    cfg = ModelConfig(d=8, heads=2, conv_channels=(2, 2, 4))
    emb = ImageEmbedder(cfg, np.random.default_rng(0))
    a = render_image([], np.random.default_rng(5))
    b = render_image(["Cardiomegaly"], np.random.default_rng(5))
    diff = np.abs(emb(a).data - emb(b).data).max(axis=-1)
    assert (diff > 1e-9).any()


def test_report_shape_and_padding_invariance(tiny_model):
    model, vocab, _ = tiny_model
    ids = tokenize("the lungs are clear . there is cardiomegaly .", vocab)
    emb = model.report_embedder
    short = emb(np.array([ids]), np.array([len(ids)])).data
    for fill in (0, 5, 11):
        padded = np.array([ids + [fill] * 7])
        assert np.max(np.abs(emb(padded, np.array([len(ids)])).data - short)) < 1e-12
    assert short.shape == (1, 49, 8)
    assert emb(np.array([ids[:2]]), np.array([2])).shape == (1, 49, 8)


def test_empty_report_rejected(tiny_model):
    model, _, _ = tiny_model
    with pytest.raises(ContractError):
        model.report_embedder(np.zeros((1, 3), dtype=int), np.array([0]))


def test_single_node_graph_rows_identical():
    cfg = ModelConfig(d=4, heads=2)
    rng = np.random.default_rng(0)
    enc, f = KnowledgeEncoder(cfg, "report", rng), SharedMapper(4, 8, rng)
    v = rng.normal(size=(1, 4))
    g = knowledge_encode(rng.normal(size=(6, 4)), v, enc, f, "report").data
    assert np.max(np.abs(g - g[:1])) < 1e-12


def test_two_node_graph_by_hand():
    cfg = ModelConfig(d=2, heads=1)
    rng = np.random.default_rng(0)
    enc, f = KnowledgeEncoder(cfg, "report", rng), SharedMapper(2, 3, rng)
    a = enc.attn
    a.wq.data[:] = np.eye(2)
    a.wk.data[:] = np.eye(2)
    a.wv.data[:] = [[1.0, 0.0], [0.0, 2.0]]
    a.wo.data[:] = np.eye(2)
    f.fc1.w.data[:] = [[1.0, -1.0, 0.5], [0.0, 1.0, -1.0]]
    f.fc1.b.data[:] = [0.0, 0.1, 0.0]
    f.fc2.w.data[:] = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    f.fc2.b.data[:] = [0.5, -0.5]
    r = np.array([[1.0, 0.0], [0.0, 3.0]])
    v = np.array([[2.0, 0.0], [0.0, 1.0]])
    expect = []
    for row in r:
        s = np.array([row @ v[0], row @ v[1]]) / np.sqrt(2)
        w = np.exp(s - s.max())
        w /= w.sum()
        h = w[0] * np.array([2.0, 0.0]) + w[1] * np.array([0.0, 2.0])
        z = np.maximum(h @ f.fc1.w.data + f.fc1.b.data, 0)
        expect.append(z @ f.fc2.w.data + f.fc2.b.data)
    got = knowledge_encode(r, v, enc, f, "report").data
    assert np.max(np.abs(got - np.array(expect))) < 1e-12


def test_modality_mismatch():
    cfg = ModelConfig(d=4, heads=2)
    rng = np.random.default_rng(0)
    with pytest.raises(ContractError):
        knowledge_encode(np.zeros((2, 4)), np.zeros((3, 4)), KnowledgeEncoder(cfg, "image", rng),
                         SharedMapper(4, 8, rng), "report")


def test_mapper_sharing_witness(tiny_model, tiny_corpus):
    model, vocab, _ = tiny_model
    images = np.array([s.image for s in tiny_corpus["images"][:2]])
    toks = [tokenize(s.report, vocab) for s in tiny_corpus["reports"][:2]]
    assert model.image_mapper() is model.mapper
    gi0, gr0 = model.encode_images(images)[1].data, model.encode_reports(toks)[1].data
    model.mapper.fc2.b.data += 0.3
    gi1, gr1 = model.encode_images(images)[1].data, model.encode_reports(toks)[1].data
    assert np.allclose(gi1 - gi0, 0.3) and np.allclose(gr1 - gr0, 0.3)
    assert gi0.shape[-1] == gr0.shape[-1]


def test_mapper_grads_accumulate_from_both_modalities(tiny_model, tiny_corpus):
    model, vocab, _ = tiny_model
    images = np.array([s.image for s in tiny_corpus["images"][:2]])
    toks = [tokenize(s.report, vocab) for s in tiny_corpus["reports"][:2]]
    w = model.mapper.fc1.w

    def grad_of(*terms):
        model.zero_grad()
        loss = None
        for t in terms:
            part = T.tsum(t()[1])
            loss = part if loss is None else loss + part
        T.backward(loss)
        return w.grad.copy()

    gi = grad_of(lambda: model.encode_images(images))
    gr = grad_of(lambda: model.encode_reports(toks))
    both = grad_of(lambda: model.encode_images(images), lambda: model.encode_reports(toks))
    assert np.max(np.abs(both - (gi + gr))) < 1e-10
    assert np.abs(gi).max() > 0 and np.abs(gr).max() > 0


def test_classifier_zero_case_and_range():
    clf = ObservationClassifier(4, np.random.default_rng(0))
    clf.fc.w.data[:] = 0
    p = clf(np.zeros((3, 4))).data
    assert p.shape == (14,) and np.all(p == 0.5)
    clf2 = ObservationClassifier(4, np.random.default_rng(1))
    q = clf2(np.random.default_rng(2).normal(size=(5, 4))).data
    assert q.shape == (14,) and np.all((q > 0) & (q < 1))


def test_encoders_deterministic(tiny_corpus, tiny_model):
    from kgae.model import KGAE
    model, vocab, graph = tiny_model
    other = KGAE(model.cfg, graph, len(vocab), seed=3)
    images = np.array([s.image for s in tiny_corpus["images"][:3]])
    assert np.array_equal(model.encode_images(images)[1].data, other.encode_images(images)[1].data)
