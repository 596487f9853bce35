"""Run configuration, read from and echoed to JSON."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from .errors import DataError

THREADS_ENV = "HSHMM_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


_POSITIVE = ("feature_dim", "embedding_dim", "n_hyper", "n_units", "n_states", "n_components",
             "sigma_alpha", "sigma_M", "sigma_m", "sigma_e", "concentration", "n_samples",
             "learning_rate", "threads", "frame_shift_ms")
_NON_NEGATIVE = ("supervised_iterations", "unsupervised_iterations", "gradient_steps",
                 "init_scale", "unit_init_scale")


@dataclass
class RunConfig:
    # Model dimensions.
    feature_dim: int = 39
    embedding_dim: int = 100
    n_hyper: int = 6
    n_units: int = 100
    n_states: int = 3
    n_components: int = 4
    # Priors.
    sigma_alpha: float = 1.0
    sigma_M: float = 1.0
    sigma_m: float = 1.0
    sigma_e: float = 1.0
    concentration: float = 1.0
    # Optimisation.
    n_samples: int = 5
    learning_rate: float = 5e-3
    supervised_iterations: int = 30
    unsupervised_iterations: int = 50
    gradient_steps: int = 1000
    init_scale: float = 0.1
    unit_init_scale: float = 1.0
    init_logvar: float = -4.605170185988091  # ln 1e-2
    common_random_numbers: bool = False
    # Seeds and execution.
    seed: int = 0
    decode_seed: int = 1234
    strict: bool = False
    threads: int = dataclasses.field(default_factory=default_threads)
    deterministic: bool = True
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        for name in _POSITIVE:
            if not getattr(self, name) > 0:
                raise DataError(f"config field {name} must be positive, got {getattr(self, name)}")
        for name in _NON_NEGATIVE:
            if not getattr(self, name) >= 0:
                raise DataError(f"config field {name} must be >= 0, got {getattr(self, name)}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as err:
            raise DataError(f"{path}: malformed config ({err})") from None
        if not isinstance(data, dict):
            raise DataError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)
