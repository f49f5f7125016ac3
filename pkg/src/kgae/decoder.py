"""Transformer decoder with knowledge-driven attention and the knowledge bank."""
import numpy as np

from . import tensor as T
from .corpus import BOS, EOS
from .errors import ContractError, DimensionError
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, causal_mask, sinusoid_table


class TokenEmbedding(Module):
    """[word ; position] (2d) projected back to d."""

    def __init__(self, vocab_size, d, t_max, rng):
        self.t_max = t_max
        self.word = T.parameter(rng.normal(0.0, 1.0, size=(vocab_size, d)))
        self._pos = sinusoid_table(t_max, d)
        self.proj = Linear(2 * d, d, rng)

    def __call__(self, ids, offset=0):
        ids = np.asarray(ids, dtype=np.int64)
        t = ids.shape[-1]
        if offset + t > self.t_max:
            raise ContractError(f"position {offset + t - 1} exceeds T_max={self.t_max}")
        w = T.take_rows(self.word, ids)
        e = np.broadcast_to(self._pos[offset:offset + t], w.shape)
        return self.proj(T.concat([w, T.Tensor(e)], axis=-1))


def bank_distill(g, bank):
    """B_k = softmax(G_k B^T) B, normalised over the bank rows."""
    g, bank = T.as_tensor(g), T.as_tensor(bank)
    if g.shape[-1] != bank.shape[-1]:
        raise DimensionError(f"knowledge width {g.shape[-1]} does not match bank width {bank.shape[-1]}")
    weights = T.softmax(T.matmul(g, T.transpose(bank)), axis=-1)
    return T.matmul(weights, bank)


def knowledge_memory(g, bank):
    """Row-wise [G_k ; B_k], or G_k alone when the bank is disabled."""
    if bank is None:
        return g
    return T.concat([g, bank_distill(g, bank)], axis=-2)


class DecoderLayer(Module):
    def __init__(self, d, heads, d_ff, rng):
        self.ln1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.know_attn = MultiHeadAttention(d, heads, rng)
        self.ln3 = LayerNorm(d)
        self.ffn = FeedForward(d, d_ff, d, rng)

    def __call__(self, x, memory, mask):
        h = self.ln1(x)
        x = x + self.self_attn(h, h, mask=mask)
        x = x + self.know_attn(self.ln2(x), memory)
        return x + self.ffn(self.ln3(x))

    def step(self, x, mem_kv, cache):
        """One new position; ``cache`` holds this layer's self-attention keys/values."""
        h = self.ln1(x)
        k, v = self.self_attn.project_kv(h)
        if cache:
            k = T.concat([cache[0], k], axis=-2)
            v = T.concat([cache[1], v], axis=-2)
        cache[:] = [k, v]
        x = x + self.self_attn.attend(h, k, v)
        x = x + self.know_attn.attend(self.ln2(x), *mem_kv)
        return x + self.ffn(self.ln3(x))


class KnowledgeDecoder(Module):
    def __init__(self, cfg, vocab_size, rng):
        d = cfg.d
        self.t_max = cfg.t_max
        self.embed = TokenEmbedding(vocab_size, d, cfg.t_max, rng)
        self.layers = [DecoderLayer(d, cfg.heads, cfg.ff_mult * d, rng) for _ in range(cfg.decoder_layers)]
        self.ln_f = LayerNorm(d)
        self.out_ffn = FeedForward(d, 2 * d, 2 * d, rng)
        self.w_p = T.parameter(rng.normal(0.0, 1.0 / np.sqrt(2 * d), size=(2 * d, vocab_size)))
        self.bank = T.parameter(rng.normal(0.0, 1.0 / np.sqrt(d), size=(cfg.n_bank, d))) if cfg.use_bank else None

    def memory(self, g):
        return knowledge_memory(g, self.bank)

    def _head(self, h):
        return T.linear(self.out_ffn(self.ln_f(h)), self.w_p)

    def decode_train(self, g, input_ids):
        """Teacher-forced logits (B, T, |D|) for BOS-shifted ``input_ids``."""
        input_ids = np.asarray(input_ids, dtype=np.int64)
        if input_ids.ndim == 1:
            input_ids = input_ids[None]
        t = input_ids.shape[-1]
        if t > self.t_max:
            raise ContractError(f"target length {t} exceeds T_max={self.t_max}")
        mem = self.memory(g)
        x = self.embed(input_ids)
        mask = causal_mask(t)
        for layer in self.layers:
            x = layer(x, mem, mask)
        return self._head(x)

    def generate(self, g, max_len=None):
        """Greedy decoding from BOS; ties go to the lowest token id.

        ``g`` is (N, d) or (B, N, d); returns one id list per batch item,
        without BOS and EOS.
        """
        max_len = self.t_max if max_len is None else min(max_len, self.t_max)
        g = T.as_tensor(g)
        single = g.ndim == 2
        if single:
            g = T.reshape(g, (1,) + g.shape)
        b = g.shape[0]
        out = [[] for _ in range(b)]
        done = np.zeros(b, dtype=bool)
        with T.no_grad():
            mem = self.memory(g)
            mem_kv = [layer.know_attn.project_kv(mem) for layer in self.layers]
            caches = [[] for _ in self.layers]
            tok = np.full((b, 1), BOS, dtype=np.int64)
            for pos in range(max_len):
                x = self.embed(tok, offset=pos)
                for layer, kv, cache in zip(self.layers, mem_kv, caches):
                    x = layer.step(x, kv, cache)
                logits = self._head(x).data[:, -1]
                nxt = logits.argmax(axis=-1)
                for i in np.flatnonzero(~done):
                    if nxt[i] == EOS:
                        done[i] = True
                    else:
                        out[i].append(int(nxt[i]))
                if done.all():
                    break
                tok = nxt[:, None]
        return out[0] if single else out
