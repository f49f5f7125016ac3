"""Knowledge graph: phrase nodes, co-occurrence edges and the residual GCN."""
import json
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, SchemaError, ShortfallError
from .nn import Module


def _norm(text):
    return " " + " ".join(re.findall(r"[a-z0-9]+", text.lower())) + " "


def phrases_in(text, lexicon):
    """Lexicon phrases occurring in ``text`` (case-insensitive, whole-word substring)."""
    t = _norm(text)
    return [p for p in lexicon if _norm(p) in t]


def build_node_vocabulary(corpus, lexicon, n_kg):
    """The ``n_kg`` phrases found in the most reports; ties go to the smaller string."""
    if not corpus:
        raise ValueError("empty report corpus")
    if n_kg < 1:
        raise ValueError("n_kg must be >= 1")
    lex = sorted({p.strip().lower() for p in lexicon if p.strip()})
    counts = Counter()
    for text in corpus:
        counts.update(set(phrases_in(text, lex)))
    if len(counts) < n_kg:
        raise ShortfallError(n_kg, len(counts))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [p for p, _ in ranked[:n_kg]]


def compute_edge_weights(corpus, nodes):
    """Report-level co-occurrence counts scaled by their global maximum."""
    n = len(nodes)
    index = {p: i for i, p in enumerate(nodes)}
    counts = np.zeros((n, n))
    for text in corpus:
        hit = np.zeros(n)
        for p in phrases_in(text, nodes):
            hit[index[p]] = 1.0
        counts += np.outer(hit, hit)
    np.fill_diagonal(counts, 0.0)
    top = counts.max() if n else 0.0
    return counts / top if top > 0 else counts


@dataclass
class KnowledgeGraph:
    nodes: list
    edges: np.ndarray
    d: int
    embedding_seed: int = 0

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        n = len(self.nodes)
        if n < 1:
            raise SchemaError("graph needs at least one node")
        if self.edges.shape != (n, n):
            raise SchemaError(f"edge matrix shape {self.edges.shape} does not match {n} nodes")

    @property
    def n_kg(self):
        return len(self.nodes)

    def initial_embeddings(self):
        rng = np.random.default_rng(self.embedding_seed)
        return rng.normal(0.0, 1.0 / np.sqrt(self.d), size=(self.n_kg, self.d))

    def to_json(self):
        return {"d": int(self.d), "nodes": list(self.nodes),
                "edges": [float(x) for x in self.edges.reshape(-1)],
                "embedding_seed": int(self.embedding_seed)}

    @classmethod
    def from_json(cls, obj):
        for key in ("d", "nodes", "edges", "embedding_seed"):
            if key not in obj:
                raise SchemaError(f"graph file missing field {key!r}")
        n = len(obj["nodes"])
        edges = np.asarray(obj["edges"], dtype=np.float64)
        if edges.size != n * n:
            raise SchemaError(f"graph file has {edges.size} edge weights for {n} nodes")
        return cls(list(obj["nodes"]), edges.reshape(n, n), int(obj["d"]), int(obj["embedding_seed"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def build_graph(corpus, lexicon, n_kg, d, embedding_seed=0):
    nodes = build_node_vocabulary(corpus, lexicon, n_kg)
    return KnowledgeGraph(nodes, compute_edge_weights(corpus, nodes), d, embedding_seed)


def gcn_layer(v, edges, w):
    """v'_i = v_i + ReLU(sum_j e_ij W v_j) in row form: V + ReLU(E V W^T)."""
    v, w = T.as_tensor(v), T.as_tensor(w)
    d = v.shape[-1]
    if w.shape != (d, d):
        raise DimensionError(f"GCN weight {w.shape} incompatible with node embeddings {v.shape}")
    if edges.shape != (v.shape[0], v.shape[0]):
        raise DimensionError(f"edge matrix {edges.shape} incompatible with node embeddings {v.shape}")
    return v + T.relu(T.matmul(T.Tensor(edges), T.matmul(v, T.transpose(w))))


class GraphEmbedder(Module):
    """Learnable node embeddings V and the single GCN weight matrix."""

    def __init__(self, graph, rng):
        self.edges = graph.edges
        self.node_emb = T.parameter(graph.initial_embeddings())
        self.w_gcn = T.parameter(rng.normal(0.0, 1.0 / np.sqrt(graph.d), size=(graph.d, graph.d)))

    def __call__(self):
        return gcn_layer(self.node_emb, self.edges, self.w_gcn)


def gcn_embed(graph, w_gcn, node_emb=None):
    """Functional form: refined embeddings V' for ``graph``."""
    v = graph.initial_embeddings() if node_emb is None else node_emb
    return gcn_layer(v, graph.edges, w_gcn)
