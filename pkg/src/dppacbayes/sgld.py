"""SGLD sampling of Gibbs distributions over network weights, with the
one-stage and two-stage (private prior, then anchored posterior) procedures.

The update is w <- w - (eta/2) g + sqrt(eta) xi, where g estimates the
gradient of the energy U(w) = tau * R(w) [+ (gamma/2) ||w - w0||^2] and R
is the mean bounded cross entropy, so a minibatch mean keeps g unbiased.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import PrivacyBudget, gibbs_sample_privacy
from .data import minibatch_stream
from .model import DEFAULT_LOSS, BoundedXentConfig, MlpArchitecture, empirical_risks, grad_bounded_xent, init_params


class SgldDivergenceError(RuntimeError):
    """Raised when the chain produces a non-finite gradient or iterate."""


@dataclass(frozen=True)
class SgldConfig:
    a0: float = 1e-3
    b: float = 0.5
    batch_size: int = 10
    epochs: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.a0 > 0 or not self.b >= 0:
            raise ValueError("a0 must be positive and b nonnegative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def learning_rate(self, t: int) -> float:
        """Step size a0 * t^-b at (1-based) epoch t."""
        if t < 1:
            raise ValueError("epochs are numbered from 1")
        return self.a0 * float(t) ** (-self.b)


@dataclass(frozen=True)
class EnergySpec:
    tau: float
    anchor: np.ndarray | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if (self.anchor is None) != (self.gamma is None):
            raise ValueError("anchor and gamma go together")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")


@dataclass(frozen=True)
class AnnealSchedule:
    tau1: float
    tau2: float
    T1: int


def anneal_tau(schedule: AnnealSchedule, t: int) -> float:
    """Linear interpolation from tau1 at epoch T1 to tau2 at epoch 2*T1."""
    T1 = schedule.T1
    if not T1 <= t <= 2 * T1:
        raise ValueError(f"epoch {t} outside [{T1}, {2 * T1}]")
    if t == T1:
        return float(schedule.tau1)
    if t == 2 * T1:
        return float(schedule.tau2)
    return ((t - T1) * schedule.tau2 + (2 * T1 - t) * schedule.tau1) / T1


def energy_gradient(arch: MlpArchitecture, params, energy: EnergySpec, X, y,
                    loss_cfg: BoundedXentConfig = DEFAULT_LOSS) -> np.ndarray:
    g = energy.tau * grad_bounded_xent(arch, params, X, y, loss_cfg) if energy.tau else np.zeros_like(params)
    if energy.anchor is not None:
        g = g + energy.gamma * (params - energy.anchor)
    return g


def sgld_step(params, grad, step_size: float, rng: np.random.Generator | None) -> np.ndarray:
    """One Langevin step; ``rng=None`` drops the noise (plain gradient step on U/2)."""
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    if not np.all(np.isfinite(grad)):
        raise SgldDivergenceError("non-finite energy gradient")
    with np.errstate(over="ignore", invalid="ignore"):
        out = params - (0.5 * step_size) * grad
        if rng is not None:
            out = out + np.sqrt(step_size) * rng.standard_normal(np.shape(params))
    if not np.all(np.isfinite(out)):
        raise SgldDivergenceError("non-finite iterate")
    return out


class IterateSink:
    """Keeps the last ``window`` epoch-end iterates as approximate posterior draws."""

    def __init__(self, window: int = 20):
        if window < 1:
            raise ValueError("window must be positive")
        self.window = window
        self._items = deque(maxlen=window)

    def push(self, epoch: int, params) -> None:
        self._items.append((epoch, np.array(params, copy=True)))

    def __len__(self):
        return len(self._items)

    @property
    def epochs(self) -> list[int]:
        return [e for e, _ in self._items]

    def samples(self) -> np.ndarray:
        return np.stack([w for _, w in self._items])

    def dump(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        return [write_checkpoint(directory / f"iter_{e:06d}.bin", w) for e, w in self._items]


_CKPT_MAGIC = b"SGLD"
_CKPT_VERSION = 1


def write_checkpoint(path, vec) -> Path:
    """16-byte header (magic, u32 version, u64 length) then little-endian float64 data."""
    vec = np.ascontiguousarray(vec, dtype="<f8").ravel()
    path = Path(path)
    path.write_bytes(_CKPT_MAGIC + struct.pack("<IQ", _CKPT_VERSION, vec.size) + vec.tobytes())
    return path


def read_checkpoint(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not an iterate checkpoint")
    version, n = struct.unpack("<IQ", buf[4:16])
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if len(buf) != 16 + 8 * n:
        raise ValueError(f"{path}: length mismatch")
    return np.frombuffer(buf, dtype="<f8", offset=16).astype(np.float64)


@dataclass
class EpochPlan:
    """Per-epoch learning rate and energy for one contiguous run of SGLD."""

    lrs: list
    energies: list

    def __len__(self):
        return len(self.lrs)


@dataclass
class TrainResult:
    params: np.ndarray
    sink: IterateSink
    history: list = field(default_factory=list)
    w0: np.ndarray | None = None
    privacy: PrivacyBudget | None = None


def _streams(seed: int):
    init_ss, batch_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init_ss), np.random.default_rng(batch_ss),
            np.random.default_rng(noise_ss))


def run_epochs(arch: MlpArchitecture, data, params, plan: EpochPlan, batch_size: int,
               batch_rng, noise_rng, *, loss_cfg: BoundedXentConfig = DEFAULT_LOSS,
               sink: IterateSink | None = None, history: list | None = None,
               epoch_offset: int = 0, stage: str = "") -> np.ndarray:
    """Run len(plan) full passes of minibatched SGLD starting from ``params``.

    ``noise_rng=None`` turns off the injected noise.
    """
    X, y = data.inputs, data.labels
    w = np.array(params, dtype=np.float64, copy=True)
    for k in range(len(plan)):
        lr, energy = plan.lrs[k], plan.energies[k]
        for idx in minibatch_stream(len(y), batch_size, batch_rng):
            g = energy_gradient(arch, w, energy, X[idx], y[idx], loss_cfg)
            try:
                w = sgld_step(w, g, lr, noise_rng)
            except SgldDivergenceError as exc:
                raise SgldDivergenceError(
                    f"{exc} at epoch {epoch_offset + k + 1} ({stage or 'sgld'}, tau={energy.tau:g}, lr={lr:g})"
                ) from None
        epoch = epoch_offset + k + 1
        if sink is not None:
            sink.push(epoch, w)
        if history is not None:
            err, xent = empirical_risks(arch, w, data, loss_cfg)
            history.append({"epoch": epoch, "stage": stage, "tau": energy.tau, "lr": lr,
                            "train_err01": err, "train_xent": xent})
    return w


def one_stage_train(arch: MlpArchitecture, data, tau: float, cfg: SgldConfig, *,
                    loss_cfg: BoundedXentConfig = DEFAULT_LOSS, window: int = 20,
                    noise: bool = True, params0=None, on_epoch=None) -> TrainResult:
    """SGLD at fixed tau for cfg.epochs epochs with step a0 * t^-b."""
    init_rng, batch_rng, noise_rng = _streams(cfg.seed)
    w = init_params(arch, init_rng) if params0 is None else np.array(params0, dtype=np.float64)
    sink = IterateSink(window)
    history = []
    energy = EnergySpec(tau)
    if on_epoch is None:
        plan = EpochPlan([cfg.learning_rate(t) for t in range(1, cfg.epochs + 1)], [energy] * cfg.epochs)
        w = run_epochs(arch, data, w, plan, cfg.batch_size, batch_rng, noise_rng if noise else None,
                       loss_cfg=loss_cfg, sink=sink, history=history, stage="one-stage")
    else:
        for t in range(1, cfg.epochs + 1):
            plan = EpochPlan([cfg.learning_rate(t)], [energy])
            w = run_epochs(arch, data, w, plan, cfg.batch_size, batch_rng, noise_rng if noise else None,
                           loss_cfg=loss_cfg, sink=sink, history=history, epoch_offset=t - 1,
                           stage="one-stage")
            on_epoch(t, w, sink)
    return TrainResult(w, sink, history)


def two_stage_plan(cfg: SgldConfig, tau1: float, tau2: float, gamma: float, T1: int, T2: int, w0):
    """Learning rates and energies after stage one: transition then stage two.

    The learning-rate clock restarts at the transition; the annealing clock
    is the global epoch T1+1 .. 2*T1.
    """
    sched = AnnealSchedule(tau1, tau2, T1)
    lrs, energies = [], []
    for k in range(1, T2 + 1):
        tau = anneal_tau(sched, T1 + k) if k <= T1 else float(tau2)
        lrs.append(cfg.learning_rate(k))
        energies.append(EnergySpec(tau, w0, gamma))
    return EpochPlan(lrs, energies)


def two_stage_train(arch: MlpArchitecture, data, tau1: float, tau2: float, gamma: float,
                    cfg: SgldConfig, T1: int, *, loss_cfg: BoundedXentConfig = DEFAULT_LOSS,
                    window: int = 20, noise: bool = True, params0=None) -> TrainResult:
    """Stage one at tau1 gives the prior mean w0; then T1 annealing epochs and
    T2 - T1 epochs at tau2, both anchored at w0 with weight-decay gamma.

    ``cfg.epochs`` plays the role of T2. The returned privacy is that of one
    exact Gibbs sample at tau1.
    """
    T2 = cfg.epochs
    if not T2 > T1 >= 1:
        raise ValueError(f"need T2 > T1 >= 1, got T1={T1}, T2={T2}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    init_rng, batch_rng, noise_rng = _streams(cfg.seed)
    noise_rng = noise_rng if noise else None
    w = init_params(arch, init_rng) if params0 is None else np.array(params0, dtype=np.float64)
    history = []

    stage_one = EpochPlan([cfg.learning_rate(t) for t in range(1, T1 + 1)], [EnergySpec(tau1)] * T1)
    w0 = run_epochs(arch, data, w, stage_one, cfg.batch_size, batch_rng, noise_rng,
                    loss_cfg=loss_cfg, history=history, stage="stage-one")
    w0.setflags(write=False)

    sink = IterateSink(window)
    rest = two_stage_plan(cfg, tau1, tau2, gamma, T1, T2, w0)
    w = run_epochs(arch, data, w0, rest, cfg.batch_size, batch_rng, noise_rng, loss_cfg=loss_cfg,
                   sink=sink, history=history, epoch_offset=T1, stage="stage-two")
    privacy = gibbs_sample_privacy(tau1, loss_cfg.surrogate_range, len(data))
    return TrainResult(w, sink, history, w0=w0, privacy=privacy)
