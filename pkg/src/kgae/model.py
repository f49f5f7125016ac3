"""The full auto-encoder: graph, both knowledge encoders, classifier, decoder."""
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .decoder import KnowledgeDecoder
from .encoders import (ImageEmbedder, KnowledgeEncoder, ObservationClassifier, ReportEmbedder,
                       SharedMapper, knowledge_encode, pad_batch)
from .errors import ConfigError
from .graph import GraphEmbedder
from .nn import Module


@dataclass
class ModelConfig:
    d: int = 32
    heads: int = 4
    f_hidden: int = 0  # 0 means 4 * d
    image_size: int = 56
    grid: int = 7
    conv_channels: tuple = (8, 16, 32)
    report_layers: int = 1
    decoder_layers: int = 3
    ff_mult: int = 4
    t_max: int = 64
    n_bank: int = 64
    use_bank: bool = True
    shared_f: bool = True

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"heads={self.heads} must be positive and divide d={self.d}")
        if self.n_bank < 1:
            raise ConfigError("n_bank must be >= 1")
        if self.f_hidden == 0:
            self.f_hidden = 4 * self.d

    @property
    def n_rows(self):
        return self.grid * self.grid

    def to_json(self):
        out = asdict(self)
        out["conv_channels"] = list(self.conv_channels)
        return out

    @classmethod
    def from_json(cls, obj):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})


class KGAE(Module):
    def __init__(self, cfg, graph, vocab_size, seed=0):
        if graph.d != cfg.d:
            raise ConfigError(f"graph width {graph.d} differs from model width {cfg.d}")
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.graph = GraphEmbedder(graph, rng)
        self.image_embedder = ImageEmbedder(cfg, rng)
        self.report_embedder = ReportEmbedder(cfg, vocab_size, rng)
        self.ke_image = KnowledgeEncoder(cfg, "image", rng)
        self.ke_report = KnowledgeEncoder(cfg, "report", rng)
        self.mapper = SharedMapper(cfg.d, cfg.f_hidden, rng)
        self.mapper_image = None if cfg.shared_f else SharedMapper(cfg.d, cfg.f_hidden, rng)
        self.classifier = ObservationClassifier(cfg.d, rng)
        self.decoder = KnowledgeDecoder(cfg, vocab_size, rng)

    # -- encoders -------------------------------------------------------------
    def node_embeddings(self):
        return self.graph()

    def image_mapper(self):
        return self.mapper if self.mapper_image is None else self.mapper_image

    def encode_images(self, images, node_emb=None):
        """(I', G_I) for a batch of images."""
        v = self.node_embeddings() if node_emb is None else node_emb
        emb = self.image_embedder(images)
        return emb, knowledge_encode(emb, v, self.ke_image, self.image_mapper(), "image")

    def encode_reports(self, token_lists, node_emb=None):
        """(R', G_R) for a batch of token-id lists."""
        v = self.node_embeddings() if node_emb is None else node_emb
        ids, lengths = pad_batch(token_lists, self.cfg.t_max)
        emb = self.report_embedder(ids, lengths)
        return emb, knowledge_encode(emb, v, self.ke_report, self.mapper, "report")

    def image_memory(self, images, with_visual=False, node_emb=None):
        emb, g = self.encode_images(images, node_emb)
        return T.concat([g, emb], axis=-2) if with_visual else g

    # -- parameter groups -------------------------------------------------------
    def group(self, *prefixes):
        return {k: v for k, v in self.parameters().items() if k.startswith(prefixes)}

    def encoder_params(self):
        return self.group("graph.", "image_embedder.", "report_embedder.", "ke_image.", "ke_report.",
                          "mapper.", "mapper_image.", "classifier.")

    def decoder_params(self):
        return self.group("decoder.")

    # -- inference ----------------------------------------------------------------
    def generate_from_images(self, images, with_visual=False, max_len=None, batch_size=64):
        out = []
        with T.no_grad():
            v = self.node_embeddings()
            for i in range(0, len(images), batch_size):
                mem = self.image_memory(np.asarray(images[i:i + batch_size]), with_visual, v)
                out.extend(self.decoder.generate(mem, max_len))
        return out

    def generate_from_reports(self, token_lists, max_len=None, batch_size=64):
        out = []
        with T.no_grad():
            v = self.node_embeddings()
            for i in range(0, len(token_lists), batch_size):
                _, g = self.encode_reports(token_lists[i:i + batch_size], v)
                out.extend(self.decoder.generate(g, max_len))
        return out
