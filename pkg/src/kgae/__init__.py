"""Knowledge-graph auto-encoder for unpaired image-to-report generation."""
__version__ = "0.1.0"

from .config import TrainConfig, resolve_config
from .corpus import OBSERVATIONS, Study, Vocabulary, gen_synthetic_corpus, load_corpus, save_corpus
from .errors import (ConfigError, ContractError, DimensionError, KGAEError, LoadError, NumericError,
                     SchemaError, ShortfallError)
from .graph import KnowledgeGraph, build_graph
from .metrics import MetricReport, evaluate
from .model import KGAE, ModelConfig
from .pipelines import Trained, finetune, infer, train_unsupervised

__all__ = [
    "TrainConfig", "resolve_config", "OBSERVATIONS", "Study", "Vocabulary", "gen_synthetic_corpus",
    "load_corpus", "save_corpus", "ConfigError", "ContractError", "DimensionError", "KGAEError",
    "LoadError", "NumericError", "SchemaError", "ShortfallError", "KnowledgeGraph", "build_graph",
    "MetricReport", "evaluate", "KGAE", "ModelConfig", "Trained", "finetune", "infer",
    "train_unsupervised",
]
