"""Gaussian priors, Gibbs posteriors and Monte Carlo KL estimation.

For a Gibbs posterior Q = P exp(-tau R) / Z,

    KL(Q || P) = -tau Q[R] - ln Z,

and -ln Z is over-estimated (in expectation, by Jensen) by
-ln( (1/n) sum_i exp(-tau R(V_i)) ) with V_i ~ P. The -tau Q[R] term is
<= 0 and is dropped, which keeps the estimate an upper bound.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .bounds import gibbs_expected_norm_bound
from .model import DEFAULT_LOSS, BoundedXentConfig, MlpArchitecture, batch_risks

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """N(mean, I / gamma)."""

    mean: np.ndarray
    gamma: float

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64, copy=True).ravel()
        if not np.all(np.isfinite(mean)):
            raise ValueError("prior mean must be finite")
        if not self.gamma > 0 or not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma!r}")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def sigma_min(self) -> float:
        return 1.0 / self.gamma

    def log_density(self, v) -> np.ndarray:
        v = np.atleast_2d(v)
        sq = np.sum((v - self.mean) ** 2, axis=-1)
        return 0.5 * self.dim * math.log(self.gamma / (2 * math.pi)) - 0.5 * self.gamma * sq


@dataclass(frozen=True)
class GibbsConfig:
    """Q_tau = base * exp(-tau R) / Z. ``base=None`` marks the (improper)
    uniform reference used in stage one."""

    tau: float
    surrogate_range: float = DEFAULT_LOSS.l_max
    base: GaussianPrior | None = None

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if not self.surrogate_range > 0:
            raise ValueError("surrogate_range must be positive")


@dataclass(frozen=True)
class KlEstimate:
    logz_upper: float
    risk_term: float
    n_samples: int

    @property
    def kl_raw(self) -> float:
        return self.risk_term + self.logz_upper

    @property
    def kl_upper(self) -> float:
        return max(0.0, self.kl_raw)


@dataclass(frozen=True)
class PosteriorRisk:
    err01: float
    xent: float
    per_sample_err01: np.ndarray
    per_sample_xent: np.ndarray


def prior_sample(prior: GaussianPrior, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """One draw (p,) or ``size`` draws (size, p) from the prior."""
    shape = (prior.dim,) if size is None else (size, prior.dim)
    return prior.mean + rng.standard_normal(shape) / math.sqrt(prior.gamma)


def _check_same_family(a: GaussianPrior, b: GaussianPrior) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.gamma != b.gamma:
        raise ValueError(f"only equal-precision Gaussians are supported ({a.gamma} vs {b.gamma})")


def gaussian_kl(q: GaussianPrior, p: GaussianPrior) -> float:
    """KL(q || p) for isotropic Gaussians of equal precision."""
    _check_same_family(q, p)
    return 0.5 * q.gamma * float(np.sum((q.mean - p.mean) ** 2))


def logz_upper_mc(gibbs: GibbsConfig, risk_fn, n: int, rng: np.random.Generator,
                  chunk: int = 4096) -> KlEstimate:
    """Jensen upper estimate of -ln Z from ``n`` prior draws.

    ``risk_fn`` maps a (k, p) block of weight vectors to k risks in [0, Delta].
    """
    if gibbs.base is None:
        raise ValueError("the Monte Carlo estimate needs a proper Gaussian base measure")
    if n < 1:
        raise ValueError("n must be positive")
    risks = np.empty(n)
    for start in range(0, n, chunk):
        k = min(chunk, n - start)
        risks[start:start + k] = risk_fn(prior_sample(gibbs.base, rng, k))
    if not np.all(np.isfinite(risks)):
        raise ValueError("risk_fn returned non-finite values")
    if gibbs.tau == 0:
        logz = 0.0
    else:
        logz = float(math.log(n) - logsumexp(-gibbs.tau * risks))
    est = KlEstimate(logz_upper=logz, risk_term=0.0, n_samples=n)
    if est.kl_raw < 0:
        log.info("negative KL estimate %.6g clamped to 0", est.kl_raw)
    return est


def network_risk_fn(arch: MlpArchitecture, data, loss_cfg: BoundedXentConfig = DEFAULT_LOSS):
    """Vectorised bounded-xent empirical risk, for use with logz_upper_mc."""
    X, y = data.inputs, data.labels
    return lambda W: batch_risks(arch, W, X, y, loss_cfg)[1]


def posterior_risk_mc(samples, arch: MlpArchitecture, dataset,
                      loss_cfg: BoundedXentConfig = DEFAULT_LOSS) -> PosteriorRisk:
    """Average empirical risks over approximate posterior draws."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] == 0:
        raise ValueError("need at least one posterior sample")
    errs, xents = batch_risks(arch, samples, dataset.inputs, dataset.labels, loss_cfg)
    return PosteriorRisk(float(np.mean(errs)), float(np.mean(xents)), errs, xents)


def log_ratio(v, prior_num: GaussianPrior, prior_den: GaussianPrior) -> np.ndarray:
    """ln dN(num)/dN(den) at each row of ``v``."""
    _check_same_family(prior_num, prior_den)
    v = np.atleast_2d(v)
    return 0.5 * prior_num.gamma * (np.sum((v - prior_den.mean) ** 2, axis=-1)
                                    - np.sum((v - prior_num.mean) ** 2, axis=-1))


def lemma2_residual(q_samples, prior_p: GaussianPrior, prior_pprime: GaussianPrior) -> float:
    """Monte Carlo Q[ln dP'/dP], the gap between KL(Q||P) and KL(Q||P')."""
    q_samples = np.atleast_2d(q_samples)
    if q_samples.shape[1] != prior_p.dim:
        raise ValueError("sample dimension does not match the priors")
    return float(np.mean(log_ratio(q_samples, prior_pprime, prior_p)))


def expected_log_ratio(q_mean, prior_p: GaussianPrior, prior_pprime: GaussianPrior) -> float:
    """Closed-form Q[ln dP'/dP] for any Q with the given mean (the log ratio is affine)."""
    _check_same_family(prior_p, prior_pprime)
    q_mean = np.asarray(q_mean, dtype=np.float64)
    g = prior_p.gamma
    return 0.5 * g * float(np.sum((q_mean - prior_p.mean) ** 2) - np.sum((q_mean - prior_pprime.mean) ** 2))


def lemma3_check(w, wprime, gamma: float, q_samples) -> tuple[float, float]:
    """(Q[ln dN(w')/dN(w)], its Cauchy-Schwarz upper bound), both from the same samples."""
    w = np.asarray(w, dtype=np.float64)
    wprime = np.asarray(wprime, dtype=np.float64)
    q_samples = np.atleast_2d(q_samples)
    lhs = float(np.mean(log_ratio(q_samples, GaussianPrior(wprime, gamma), GaussianPrior(w, gamma))))
    dist = math.sqrt(gamma) * float(np.linalg.norm(w - wprime))
    spread = math.sqrt(gamma) * float(np.mean(np.linalg.norm(q_samples - wprime, axis=-1)))
    return lhs, 0.5 * dist**2 + dist * spread


def lemma4_check(prior: GaussianPrior, tau: float, Delta: float, q_samples) -> tuple[float, float]:
    """(mean sqrt(gamma) ||v - w|| over posterior draws, the Gibbs concentration bound)."""
    q_samples = np.atleast_2d(q_samples)
    est = math.sqrt(prior.gamma) * float(np.mean(np.linalg.norm(q_samples - prior.mean, axis=-1)))
    return est, gibbs_expected_norm_bound(tau, Delta)
