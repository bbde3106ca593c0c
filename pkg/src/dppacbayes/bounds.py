"""Certificate formulas: binary KL and its inversion, PAC-Bayes bounds,
max-information and privacy accounting.

Everything here is pure and works in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _check_unit(name: str, x: float) -> float:
    x = float(x)
    if not math.isfinite(x) or x < 0.0 or x > 1.0:
        raise ValueError(f"{name} must be a finite number in [0, 1], got {x!r}")
    return x


def _check_m_delta(m: int, delta: float) -> None:
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m!r}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")


def _check_nonneg(name: str, x: float) -> float:
    x = float(x)
    if math.isnan(x) or x < 0.0:
        raise ValueError(f"{name} must be nonnegative, got {x!r}")
    return x


@dataclass(frozen=True)
class BoundParams:
    """Sample size, confidence, max-information split and privacy budget."""

    m: int
    delta: float = 0.05
    beta: float | None = None
    epsilon: float = 0.0

    def __post_init__(self):
        _check_m_delta(self.m, self.delta)
        if self.beta is None:
            object.__setattr__(self, "beta", self.delta / 2.0)
        if not 0.0 < self.beta < self.delta:
            raise ValueError(f"beta must lie in (0, delta), got {self.beta!r}")
        _check_nonneg("epsilon", self.epsilon)


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta_dp: float = 0.0

    def __post_init__(self):
        _check_nonneg("epsilon", self.epsilon)
        _check_nonneg("delta_dp", self.delta_dp)


@dataclass(frozen=True)
class ExponentialMechanismSpec:
    beta_temp: float
    sensitivity: float

    def __post_init__(self):
        _check_nonneg("beta_temp", self.beta_temp)
        _check_nonneg("sensitivity", self.sensitivity)


@dataclass(frozen=True)
class WassersteinPenaltyInput:
    """Inputs to the KL penalty for a non-private Gaussian prior mean.

    ``C`` bounds the squared distance between the released mean and a
    private one, ``sigma_min`` is the smallest prior covariance eigenvalue,
    ``expected_norm`` is E_Q ||v - w||_{Sigma^-1} and ``delta_prime`` is the
    failure probability of the displacement event.
    """

    C: float
    sigma_min: float
    expected_norm: float
    delta_prime: float = 0.01

    def __post_init__(self):
        _check_nonneg("C", self.C)
        if not self.sigma_min > 0.0:
            raise ValueError(f"sigma_min must be positive, got {self.sigma_min!r}")
        _check_nonneg("expected_norm", self.expected_norm)
        if not 0.0 < self.delta_prime < 1.0:
            raise ValueError(f"delta_prime must lie in (0, 1), got {self.delta_prime!r}")


def kl_bin(q: float, p: float) -> float:
    """KL(Bernoulli(q) || Bernoulli(p)) with 0 ln 0 = 0; +inf off the support."""
    q = _check_unit("q", q)
    p = _check_unit("p", p)
    total = 0.0
    if q > 0.0:
        if p == 0.0:
            return math.inf
        total += q * math.log(q / p)
    if q < 1.0:
        if p == 1.0:
            return math.inf
        total += (1.0 - q) * math.log((1.0 - q) / (1.0 - p))
    # rounding can leave a tiny negative value when p is within an ulp of q
    return max(total, 0.0)


def kl_inverse(q: float, c: float, tol: float = 1e-9) -> float:
    """Largest p in [q, 1] with kl_bin(q, p) <= c.

    Bisection on the increasing map p -> kl_bin(q, p). Iteration continues
    past ``tol`` until the bracket is two adjacent floats, and the upper end
    is returned, so the answer never understates the supremum.
    """
    q = _check_unit("q", q)
    c = _check_nonneg("c", c)
    if q == 1.0 or math.isinf(c):
        return 1.0
    if c == 0.0:
        return q
    lo, hi = q, 1.0
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if kl_bin(q, mid) > c:
            hi = mid
        else:
            lo = mid
    assert hi - lo <= tol
    return hi


def maurer_bound(kl_qp: float, m: int, delta: float) -> float:
    """Right side of Maurer's KL-generalization-error bound."""
    _check_m_delta(m, delta)
    kl_qp = _check_nonneg("kl_qp", kl_qp)
    return (kl_qp + math.log(2.0 * math.sqrt(m) / delta)) / m


def lever_bound(tau: float, m: int, delta: float, variant: str = "conventional") -> float:
    """Distribution-free KL-generalization-error bound for a Gibbs posterior.

    ``conventional`` keeps the tau^2/(2m) and log terms outside the square
    root. ``as-displayed`` puts all three under it and is kept only for
    comparison; it tends to 0 as tau -> 0.
    """
    _check_m_delta(m, delta)
    tau = _check_nonneg("tau", tau)
    log_term = math.log(2.0 * math.sqrt(m) / delta)
    if variant == "conventional":
        return (tau * math.sqrt(2.0 / m * log_term) + tau**2 / (2.0 * m) + log_term) / m
    if variant == "as-displayed":
        return tau * math.sqrt(2.0 / m * log_term + tau**2 / (2.0 * m) + log_term) / m
    raise ValueError(f"unknown lever_bound variant {variant!r}")


def max_info_pure(epsilon: float, m: int) -> float:
    """Max-information (nats) of an epsilon-DP mechanism on m samples."""
    epsilon = _check_nonneg("epsilon", epsilon)
    if m < 1:
        raise ValueError(f"m must be positive, got {m!r}")
    return epsilon * m


def max_info_approx(epsilon: float, m: int, beta: float) -> float:
    """beta-approximate max-information (nats) of an epsilon-DP mechanism."""
    epsilon = _check_nonneg("epsilon", epsilon)
    if m < 1:
        raise ValueError(f"m must be positive, got {m!r}")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta!r}")
    return epsilon**2 * m / 2.0 + epsilon * math.sqrt(m * math.log(2.0 / beta) / 2.0)


def dp_pacbayes_rhs(kl_qp: float, params: BoundParams) -> float:
    """KL-generalization-error bound with an epsilon-DP data-dependent prior.

    General-beta form; with beta = delta/2 this is
    (kl + ln(4 sqrt(m)/delta))/m + eps^2/2 + eps sqrt(ln(4/delta)/(2m)).
    """
    kl_qp = _check_nonneg("kl_qp", kl_qp)
    m, delta, beta, eps = params.m, params.delta, params.beta, params.epsilon
    if not 0.0 < beta < delta:
        raise ValueError(f"beta must lie in (0, delta), got {beta!r}")
    base = (kl_qp + math.log(2.0 * math.sqrt(m) / (delta - beta))) / m
    return base + max_info_approx(eps, m, beta) / m


def _golden_section(f, lo: float, hi: float, rtol: float) -> float:
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > rtol * max(abs(x1), abs(x2), 1e-300):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    return x1 if f1 <= f2 else x2


def optimize_beta(kl_qp: float, m: int, delta: float, epsilon: float,
                  rtol: float = 1e-8) -> tuple[float, float]:
    """Minimize dp_pacbayes_rhs over beta in (0, delta).

    The objective is convex in beta, so golden-section search applies. The
    delta/2 value is returned instead if it happens to be no worse.
    """
    _check_m_delta(m, delta)

    def rhs(beta):
        return dp_pacbayes_rhs(kl_qp, BoundParams(m, delta, beta, epsilon))

    lo, hi = 1e-12 * delta, (1.0 - 1e-12) * delta
    beta_star = _golden_section(rhs, lo, hi, rtol)
    value = rhs(beta_star)
    half = rhs(delta / 2.0)
    if half < value:
        return delta / 2.0, half
    return beta_star, value


def gibbs_sample_privacy(tau: float, Delta: float, m: int) -> PrivacyBudget:
    """Privacy of one exact sample from exp(-tau * surrogate risk) times a base measure."""
    tau = _check_nonneg("tau", tau)
    if not Delta > 0.0:
        raise ValueError(f"Delta must be positive, got {Delta!r}")
    if m < 1:
        raise ValueError(f"m must be positive, got {m!r}")
    return PrivacyBudget(2.0 * tau * Delta / m)


def exp_mechanism_privacy(spec: ExponentialMechanismSpec) -> PrivacyBudget:
    return PrivacyBudget(2.0 * spec.beta_temp * spec.sensitivity)


def wasserstein_kl_penalty(inp: WassersteinPenaltyInput) -> float:
    """Additive KL penalty for a Gaussian prior mean within sqrt(C) of a private mean."""
    ratio = inp.C / inp.sigma_min
    return 0.5 * ratio + math.sqrt(ratio) * inp.expected_norm


def gibbs_expected_norm_bound(tau: float, Delta: float) -> float:
    """Upper bound on E_Q ||v - w||_{Sigma^-1} for a Gibbs posterior over N(w, Sigma)."""
    tau = _check_nonneg("tau", tau)
    Delta = _check_nonneg("Delta", Delta)
    return math.sqrt(2.0 * tau * Delta) + math.sqrt(2.0 / math.pi)
