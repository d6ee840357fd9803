"""Training/model configuration and the flat ``key = value`` file format."""
from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


# Hyperparameter grid used by random search.
SEARCH_GRID = {
    "dim": (64, 128, 256),
    "out_dim": (32, 64, 128),
    "n_blocks": (1, 2, 3),
    "weight_decay": (1e-2, 1e-3, 1e-4),
}

# Extra grid entry when the attention encoder is selected.
MHA_HEADS = (1, 2, 4, 8)

ENCODERS = ("iscam", "mha")
DECODERS = ("contp", "mlp")


@dataclass
class TrainConfig:
    dim: int = 64
    out_dim: int = 32
    n_blocks: int = 1
    weight_decay: float = 1e-3
    lr: float = 0.01
    batch_size: int = 32
    patience: int = 20
    max_epochs: int = 500
    seed: int = 0
    encoder: str = "iscam"
    decoder: str = "contp"
    mlp_hidden: int = 32
    n_heads: int = 1
    time_embed_dim: int = 16
    channel_specific_encoders: bool = False
    norm_eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("dim", "out_dim", "batch_size", "patience", "mlp_hidden", "n_heads",
                     "time_embed_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("n_blocks", "max_epochs", "weight_decay", "norm_eps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr!r}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.decoder not in DECODERS:
            raise ConfigError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.time_embed_dim % 2:
            raise ConfigError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        if self.encoder == "mha" and self.dim % self.n_heads:
            raise ConfigError(f"dim={self.dim} is not divisible by n_heads={self.n_heads}")

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        return TrainConfig(**{**self.to_dict(), **changes})


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key, raw):
    kind = _TYPES[key]
    text = raw.strip()
    try:
        if kind in (bool, "bool"):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from exc


def parse_config(text, base=None):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = (base or TrainConfig()).to_dict()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        values[key] = _coerce(key, raw)
    return TrainConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(config):
    return "".join(f"{k} = {v}\n" for k, v in config.to_dict().items())
