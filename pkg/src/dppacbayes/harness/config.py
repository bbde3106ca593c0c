"""Experiment configuration: a flat dataclass loaded from JSON, with every
field overridable from the command line."""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ..bounds import BoundParams
from ..model import BoundedXentConfig, MlpArchitecture
from ..sgld import SgldConfig


class ConfigError(ValueError):
    pass


def _log_grid(lo_exp: float, hi_exp: float, per_decade: int) -> list[float]:
    n = int(round((hi_exp - lo_exp) * per_decade)) + 1
    return [float(f"{v:.6g}") for v in np.logspace(lo_exp, hi_exp, n)]


@dataclass
class ExperimentConfig:
    dataset: str = "synth"
    label_modes: list = field(default_factory=lambda: ["true"])
    procedure: str = "one-stage"
    taus: list = field(default_factory=lambda: _log_grid(0, 4, 2))
    tau1: float = 1.0
    tau2s: list = field(default_factory=lambda: _log_grid(1, 3, 4))
    gamma: float = 2.0
    T1: int = 100
    epochs: int = 1000
    a0: float = 1e-3
    b: float = 0.5
    batch_size: int = 10
    hidden: list = field(default_factory=lambda: [100])
    l_max: float = 4.0
    delta: float = 0.05
    optimize_beta: bool = False
    lever_variant: str = "conventional"
    n_logz: int = 100_000
    window: int = 20
    checkpoint_every: int = 250
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    n_train: int = 50
    n_heldout: int = 100
    d: int = 4
    hyperplane: str = "abs-normal"
    mnist_dir: str = ""
    limit: int = 0
    jobs: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dataset not in ("synth", "mnist"):
            raise ConfigError(f"dataset must be 'synth' or 'mnist', got {self.dataset!r}")
        if self.procedure not in ("one-stage", "two-stage"):
            raise ConfigError(f"procedure must be 'one-stage' or 'two-stage', got {self.procedure!r}")
        if not self.label_modes or any(m not in ("true", "random") for m in self.label_modes):
            raise ConfigError(f"label_modes must be a nonempty subset of true/random, got {self.label_modes!r}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        grid = self.taus if self.procedure == "one-stage" else self.tau2s
        if not grid or any(t < 0 for t in grid):
            raise ConfigError("the tau grid must be nonempty and nonnegative")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta!r}")
        if self.procedure == "two-stage" and not (self.epochs > self.T1 >= 1 and self.gamma > 0):
            raise ConfigError("two-stage needs epochs (T2) > T1 >= 1 and gamma > 0")
        if self.dataset == "mnist" and not self.mnist_dir:
            raise ConfigError("mnist_dir is required for the mnist dataset")
        if self.lever_variant not in ("conventional", "as-displayed"):
            raise ConfigError(f"unknown lever_variant {self.lever_variant!r}")
        try:
            self.arch
            self.sgld(0)
            BoundedXentConfig(self.l_max)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def arch(self) -> MlpArchitecture:
        n_in = 784 if self.dataset == "mnist" else self.d
        n_out = 10 if self.dataset == "mnist" else 2
        return MlpArchitecture((n_in, *[int(h) for h in self.hidden], n_out))

    @property
    def loss_cfg(self) -> BoundedXentConfig:
        return BoundedXentConfig(self.l_max)

    def sgld(self, seed: int) -> SgldConfig:
        return SgldConfig(self.a0, self.b, self.batch_size, self.epochs, seed)

    def bound_params(self, m: int, epsilon: float = 0.0) -> BoundParams:
        return BoundParams(m, self.delta, epsilon=epsilon)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


SYNTH_ONE_STAGE = ExperimentConfig()
SYNTH_TWO_STAGE = ExperimentConfig(procedure="two-stage")
MNIST_TWO_STAGE = ExperimentConfig(
    dataset="mnist", procedure="two-stage", tau1=1e3, tau2s=[3e3, 3e4, 1e5, 3e5], gamma=5.0,
    T1=500, epochs=1000, a0=1e-5, batch_size=128, hidden=[600, 600], seeds=[0], mnist_dir="mnist",
    limit=50_000,
)


def cell_seed(seed: int, *key) -> int:
    """Stable 64-bit seed for one sweep cell, independent of the rest of the grid."""
    tag = zlib.crc32(repr(key).encode())
    return int(np.random.SeedSequence([int(seed), tag]).generate_state(1, np.uint64)[0])
