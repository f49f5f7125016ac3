"""Training configuration and the flat config file."""
from dataclasses import asdict, dataclass, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .model import ModelConfig


@dataclass
class TrainConfig:
    # model
    d: int = 32
    heads: int = 4
    n_kg: int = 16
    n_bank: int = 64
    f_hidden: int = 0
    report_layers: int = 1
    decoder_layers: int = 3
    ff_mult: int = 4
    t_max: int = 64
    image_size: int = 56
    grid: int = 7
    conv_channels: tuple = (8, 16, 32)
    use_bank: bool = True
    shared_f: bool = True
    # optimisation
    batch_size: int = 16
    stage1_lr: float = 3e-3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    stage1_steps: int = 3000
    stage2_steps: int = 8000
    stage2_embedder: bool = False  # also train the report embedder in stage 2
    align_steps: int = 3000
    align_lr: float = 3e-3
    finetune_epochs: int = 4
    finetune_lr: float = 3e-4
    # data
    seed: int = 0
    ratio: float = 0.0
    embedding_seed: int = 0

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"ratio must lie in [0, 1], got {self.ratio}")
        for name in ("d", "heads", "n_kg", "n_bank", "decoder_layers", "t_max", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("stage1_steps", "stage2_steps", "align_steps", "finetune_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("stage1_lr", "lr", "align_lr", "finetune_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        self.model_config()

    def model_config(self):
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_json(self):
        out = asdict(self)
        out["conv_channels"] = list(self.conv_channels)
        return out

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, obj):
        unknown = sorted(set(obj) - set(cls.keys()))
        if unknown:
            raise ConfigError("unknown config keys: " + ", ".join(unknown))
        return cls(**obj)


def read_config_file(path):
    """Flat key = value TOML document; nested tables are rejected."""
    with open(path, "rb") as fh:
        obj = tomllib.load(fh)
    nested = [k for k, v in obj.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError("config must be flat; found tables: " + ", ".join(nested))
    unknown = sorted(set(obj) - set(TrainConfig.keys()))
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(unknown))
    return obj


def resolve_config(path=None, overrides=None):
    """Defaults < file < flag overrides. Returns (config, per-key source)."""
    merged, source = {}, {k: "default" for k in TrainConfig.keys()}
    if path:
        for k, v in read_config_file(path).items():
            merged[k] = v
            source[k] = "file"
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in source:
            raise ConfigError(f"unknown config key {k!r}")
        merged[k] = v
        source[k] = "flag"
    return TrainConfig.from_dict(merged), source
