"""Image/report embedding and projection onto the knowledge graph."""
import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, sinusoid_table

N_LABELS = 14


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, stride, pad, rng):
        fan_in = c_in * k * k
        self.w = T.parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k)))
        self.b = T.parameter(np.zeros(c_out))
        self.stride, self.pad = stride, pad

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, self.stride, self.pad)


class ImageEmbedder(Module):
    """Strided conv stack -> adaptive pool to a grid -> per-cell projection to d.

    Output rows are grid cells in row-major order (N_I = grid * grid).
    """

    def __init__(self, cfg, rng):
        self.image_size = cfg.image_size
        self.grid = cfg.grid
        chans = (1,) + tuple(cfg.conv_channels)
        self.convs = [Conv2d(chans[i], chans[i + 1], 4, 2, 1, rng) for i in range(len(chans) - 1)]
        self.proj = Linear(chans[-1], cfg.d, rng)

    def __call__(self, images):
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[:, None]
        if x.shape[1:] != (1, self.image_size, self.image_size):
            raise DimensionError(f"expected images of shape ({self.image_size}, {self.image_size}), got {x.shape[2:]}")
        h = T.Tensor(x)
        for conv in self.convs:
            h = T.relu(conv(h))
        h = T.adaptive_avg_pool2d(h, (self.grid, self.grid))
        n, c = h.shape[:2]
        h = T.transpose(T.reshape(h, (n, c, self.grid * self.grid)), (0, 2, 1))
        return self.proj(h)


class EncoderLayer(Module):
    """Pre-norm self-attention + FFN block over token features."""

    def __init__(self, d, heads, d_ff, rng):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, d_ff, d, rng)

    def __call__(self, x, key_mask):
        h = self.ln1(x)
        x = x + self.attn(h, h, mask=key_mask)
        return x + self.ffn(self.ln2(x))


def pad_batch(seqs, t_max=None, pad=0):
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    width = int(lengths.max()) if len(seqs) else 0
    if t_max is not None and width > t_max:
        raise ContractError(f"sequence of length {width} exceeds T_max={t_max}")
    out = np.full((len(seqs), max(width, 1)), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lengths


class ReportEmbedder(Module):
    """Token transformer followed by learned-query pooling to exactly N_R rows."""

    def __init__(self, cfg, vocab_size, rng):
        d = cfg.d
        self.t_max = cfg.t_max
        self.vocab_size = vocab_size
        self.tok = T.parameter(rng.normal(0.0, 1.0, size=(vocab_size, d)))
        self._pos = sinusoid_table(cfg.t_max, d)
        self.layers = [EncoderLayer(d, cfg.heads, cfg.ff_mult * d, rng) for _ in range(cfg.report_layers)]
        self.ln = LayerNorm(d)
        self.queries = T.parameter(rng.normal(0.0, 1.0, size=(cfg.n_rows, d)))
        self.pool = MultiHeadAttention(d, cfg.heads, rng)

    def __call__(self, ids, lengths):
        ids = np.asarray(ids, dtype=np.int64)
        lengths = np.asarray(lengths)
        if ids.ndim == 1:
            ids, lengths = ids[None], np.atleast_1d(lengths)
        if (lengths < 1).any():
            raise ContractError("cannot embed an empty report")
        if ids.shape[1] > self.t_max:
            raise ContractError(f"report length {ids.shape[1]} exceeds T_max={self.t_max}")
        if ids.max() >= self.vocab_size or ids.min() < 0:
            raise ContractError("token id outside the vocabulary")
        n, t = ids.shape
        valid = np.arange(t)[None, :] < lengths[:, None]
        key_mask = valid[:, None, None, :]
        x = T.take_rows(self.tok, ids) + self._pos[:t]
        for layer in self.layers:
            x = layer(x, key_mask)
        x = self.ln(x)
        return self.pool(self.queries, x, mask=key_mask)


class KnowledgeEncoder(Module):
    """Modality-specific attention with embeddings as queries and V' as lookup."""

    def __init__(self, cfg, modality, rng):
        self.modality = modality
        self.attn = MultiHeadAttention(cfg.d, cfg.heads, rng)

    def __call__(self, embedding, node_embeddings, return_weights=False):
        return self.attn(embedding, node_embeddings, return_weights=return_weights)


class SharedMapper(FeedForward):
    """F: FC-ReLU-FC, d -> hidden -> d."""

    def __init__(self, d, hidden, rng):
        super().__init__(d, hidden, d, rng)


def knowledge_encode(embedding, node_embeddings, encoder, mapper, modality):
    if encoder.modality != modality:
        raise ContractError(f"{modality} input routed to the {encoder.modality} knowledge encoder")
    return mapper(encoder(embedding, node_embeddings))


class ObservationClassifier(Module):
    """Mean-pool rows, one linear layer; sigmoid gives the 14 probabilities."""

    def __init__(self, d, rng, n_labels=N_LABELS):
        self.fc = Linear(d, n_labels, rng)

    def logits(self, g):
        return self.fc(T.mean(g, axis=-2))

    def __call__(self, g):
        return T.sigmoid(self.logits(g))
