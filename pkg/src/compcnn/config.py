"""Run configuration and its flat ``key=value`` file format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from .loss import LossConfig
from .multitask import HeadSplit, TaskWeights

DECODERS = ("hits", "ranking", "dex")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # label space: class k covers ages [age_min + (k-1)*bin_width, age_min + k*bin_width)
    K: int = 10
    bin_width: int = 1
    age_min: int = 1
    # synthetic data
    image_size: int = 16
    n_per_class: int = 100
    noise_sigma: float = 0.1
    train_frac: float = 0.7
    val_frac: float = 0.1
    # backbone
    conv_channels: int = 4
    hidden1: int = 64
    hidden2: int = 64
    embedding_dim: int = 70
    # training
    margin: float = 1.0
    lam: float = 0.5
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    shared_backbone: bool = False
    # multi-task
    multitask: bool = False
    age_dim: int = 70
    gender_dim: int = 10
    w_age: float = 1.0
    w_gender: float = 1.0
    # inference / evaluation
    decoder: str = "hits"
    tolerance: int = 5

    def __post_init__(self):
        positive = ["K", "bin_width", "image_size", "n_per_class", "conv_channels", "hidden1",
                    "hidden2", "embedding_dim", "margin", "learning_rate", "epochs", "age_dim",
                    "gender_dim"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.K < 2:
            raise ConfigError("K must be at least 2")
        if self.image_size < 3:
            raise ConfigError("image_size must be at least 3")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        for name in ("lam", "noise_sigma", "w_age", "w_gender", "tolerance"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.w_age == 0 and self.w_gender == 0:
            raise ConfigError("w_age and w_gender cannot both be zero")
        if not (0 < self.train_frac and 0 <= self.val_frac and self.train_frac + self.val_frac <= 1):
            raise ConfigError("split fractions must satisfy 0 < train, 0 <= val, train + val <= 1")
        if self.decoder not in DECODERS:
            raise ConfigError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")

    @property
    def loss(self):
        return LossConfig(self.margin)

    @property
    def split(self):
        return HeadSplit(self.age_dim, self.gender_dim)

    @property
    def weights(self):
        return TaskWeights(self.w_age, self.w_gender)

    @property
    def backbone_embedding_dim(self):
        return self.split.embedding_dim if self.multitask else self.embedding_dim

    @property
    def class_ages(self):
        """Representative age of each class (the middle integer age of its bin)."""
        return [self.age_min + (k - 1) * self.bin_width + (self.bin_width - 1) / 2
                for k in range(1, self.K + 1)]

    def age_to_class(self, age):
        k = int((age - self.age_min) // self.bin_width) + 1
        if not 1 <= k <= self.K:
            raise ValueError(f"age {age} falls outside classes 1..{self.K}")
        return k

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        try:
            return replace(self, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_text(self):
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())


def _fmt(v):
    return str(v).lower() if isinstance(v, bool) else str(v)


def _parse(kind, raw, key):
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return {"int": int, "float": float, "str": str}[kind](raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def parse_config(text, base=None):
    """Parse ``key=value`` lines (``#`` comments, blank lines allowed)."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse(types[key], raw, key)
    return (base or RunConfig()).with_overrides(**values)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base)
