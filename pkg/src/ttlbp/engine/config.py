from dataclasses import asdict, dataclass, field, replace
import hashlib
import json

import numpy as np

from ..errors import ConfigError
from ..neuron import LifParams
from ..topology import normalize_mode


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters. ``k`` is the truncation interval, ``n`` the block length."""

    k: int
    n: int
    T: int
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    dropout_rate: float = 0.0
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 20
    lif: LifParams = field(default_factory=LifParams)
    classifier_mode: str = "trainable"
    seed: int = 0
    epochs: int = 1
    init_scale: float = 1.0
    dtype: str = "float64"

    def __post_init__(self):
        if isinstance(self.lif, dict):
            object.__setattr__(self, "lif", LifParams(**self.lif))
        object.__setattr__(self, "classifier_mode", normalize_mode(self.classifier_mode))
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not 1 <= self.k <= self.T:
            raise ConfigError(f"truncation length k must lie in [1, T={self.T}], got {self.k}")
        if self.n < 1:
            raise ConfigError(f"block length n must be >= 1, got {self.n}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.lr_decay_every < 1 or not self.lr_decay_factor > 0:
            raise ConfigError("lr decay needs a positive factor and period")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def intervals(self):
        """(start, stop) step ranges; the last one is shorter when k does not divide T."""
        return [(s, min(s + self.k, self.T)) for s in range(0, self.T, self.k)]

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
