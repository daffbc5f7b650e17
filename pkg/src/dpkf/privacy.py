"""Clipping operators, Gaussian-mechanism calibration, and an RDP accountant.

The accountant works at integer Renyi orders with the binomial-expansion
formula for the subsampled Gaussian mechanism, composes linearly over steps,
and converts to (epsilon, delta) by minimising over a fixed order grid.
Calibration routines invert these maps by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Integer orders 2..64 plus a high-order tail; covers desk-scale budgets.
DEFAULT_ORDERS: tuple[int, ...] = tuple(range(2, 65)) + (128, 256, 512)


class PrivacyError(ValueError):
    """Raised for invalid or infeasible privacy parameters."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise PrivacyError("epsilon must be > 0")
        if not 0 < self.delta < 1:
            raise PrivacyError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class NoiseCalibration:
    """Per-step mechanism parameters: clip C, noise std, sampling rate, steps."""

    clip: float
    sigma_dp: float
    q: float
    steps: int

    def __post_init__(self) -> None:
        if self.clip <= 0:
            raise PrivacyError("clip threshold must be > 0")
        if self.sigma_dp < 0:
            raise PrivacyError("sigma_dp must be >= 0")
        if not 0 < self.q <= 1:
            raise PrivacyError("sampling rate must lie in (0, 1]")
        if self.steps < 1:
            raise PrivacyError("step count must be >= 1")


@dataclass
class RdpCurve:
    """Map from integer order alpha to the per-step RDP epsilon."""

    values: dict[int, float] = field(default_factory=dict)

    def orders(self) -> list[int]:
        return sorted(self.values)

    def __getitem__(self, alpha: int) -> float:
        return self.values[alpha]


# ---------------------------------------------------------------------------
# Clipping
# ---------------------------------------------------------------------------


def clip_standard(g: np.ndarray, C: float) -> np.ndarray:
    """min{1, C/||g||} * g; caps the norm at C, fixed point below it."""
    if C <= 0:
        raise PrivacyError("clip threshold must be > 0")
    g = np.asarray(g, dtype=float)
    nrm = float(np.linalg.norm(g))
    if nrm <= C:
        return g.copy()
    return (C / nrm) * g


def clip_automatic(g: np.ndarray, C: float) -> np.ndarray:
    """g * C/||g||: always rescales the norm to exactly C (0 maps to 0)."""
    if C <= 0:
        raise PrivacyError("clip threshold must be > 0")
    g = np.asarray(g, dtype=float)
    nrm = float(np.linalg.norm(g))
    if nrm == 0.0:
        return g.copy()
    return (C / nrm) * g


def clip_normalized(g: np.ndarray, C: float) -> np.ndarray:
    """(g/C) * min{C/||g||, 1}; output norm is at most 1."""
    if C <= 0:
        raise PrivacyError("clip threshold must be > 0")
    g = np.asarray(g, dtype=float)
    nrm = float(np.linalg.norm(g))
    factor = min(C / nrm, 1.0) if nrm > 0 else 1.0
    return (factor / C) * g


def clip_batch(G: np.ndarray, C: float | None, variant: str) -> np.ndarray:
    """Row-wise clipping of a (B, d) per-sample gradient matrix."""
    if variant == "none":
        return G
    if C is None or C <= 0:
        raise PrivacyError("clip threshold must be > 0 for clipping variants")
    norms = np.linalg.norm(G, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    if variant == "standard":
        factors = np.minimum(1.0, C / safe)
    elif variant == "automatic":
        factors = np.where(norms > 0, C / safe, 0.0)
    elif variant == "normalized":
        factors = np.minimum(C / safe, 1.0) / C
    else:
        raise PrivacyError(f"unknown clip variant: {variant!r}")
    return G * factors[:, None]


# ---------------------------------------------------------------------------
# Gaussian mechanism (analytic calibration)
# ---------------------------------------------------------------------------


def _phi(t: float) -> float:
    """Standard normal CDF."""
    return 0.5 * (1.0 + math.erf(t / math.sqrt(2.0)))


def gaussian_privacy_profile(sensitivity: float, epsilon: float, sigma: float) -> float:
    """Smallest delta for which N(0, sigma^2) noise on a sensitivity-Delta
    release is (epsilon, delta)-DP; decreasing in sigma."""
    r = sensitivity / sigma
    return _phi(r / 2.0 - epsilon / r) - math.exp(epsilon) * _phi(-r / 2.0 - epsilon / r)


def calibrate_gaussian(
    sensitivity: float, epsilon: float, delta: float, tol: float = 1e-9
) -> float:
    """Smallest sigma meeting the Gaussian-mechanism CDF condition, by bisection.

    Strictly tighter than the classical sqrt(2 ln(1.25/delta))/epsilon rule.
    """
    if sensitivity <= 0:
        raise PrivacyError("sensitivity must be > 0")
    PrivacyBudget(epsilon, delta)

    def feasible(sigma: float) -> bool:
        return gaussian_privacy_profile(sensitivity, epsilon, sigma) <= delta

    lo = 1e-12 * sensitivity
    hi = sensitivity  # grow until feasible
    while not feasible(hi):
        hi *= 2.0
        if hi > 1e12 * sensitivity:
            raise PrivacyError("failed to bracket sigma in Gaussian calibration")
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def classical_gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Textbook sqrt(2 ln(1.25/delta)) * Delta / epsilon reference value."""
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / epsilon


# ---------------------------------------------------------------------------
# RDP accountant
# ---------------------------------------------------------------------------


def rdp_gaussian(sigma: float, alpha: float) -> float:
    """RDP of the sensitivity-1 Gaussian mechanism: alpha / (2 sigma^2)."""
    if sigma <= 0:
        raise PrivacyError("sigma must be > 0")
    if alpha <= 1:
        raise PrivacyError("order alpha must exceed 1")
    return alpha / (2.0 * sigma * sigma)


def _logsumexp(terms: list[float]) -> float:
    m = max(terms)
    return m + math.log(math.fsum(math.exp(t - m) for t in terms))


def rdp_subsampled(q: float, sigma: float, alpha: int) -> float:
    """RDP upper bound for the subsampled Gaussian mechanism at integer order.

    Binomial expansion over the subsampling mixture:

        eps(alpha) = log( sum_k C(alpha,k) (1-q)^(alpha-k) q^k
                          exp(k (k-1) / (2 sigma^2)) ) / (alpha - 1)

    At q = 1 the sum collapses to the k = alpha term and the value reduces
    exactly to ``rdp_gaussian``.
    """
    if not 0 < q <= 1:
        raise PrivacyError("sampling rate must lie in (0, 1]")
    if sigma <= 0:
        raise PrivacyError("sigma must be > 0")
    if int(alpha) != alpha or alpha < 2:
        raise PrivacyError("order alpha must be an integer >= 2")
    alpha = int(alpha)
    if q == 1.0:
        return rdp_gaussian(sigma, alpha)
    log_q, log_1mq = math.log(q), math.log1p(-q)
    c = 1.0 / (2.0 * sigma * sigma)
    terms = []
    for k in range(alpha + 1):
        log_binom = (
            math.lgamma(alpha + 1) - math.lgamma(k + 1) - math.lgamma(alpha - k + 1)
        )
        terms.append(log_binom + k * log_q + (alpha - k) * log_1mq + k * (k - 1) * c)
    return _logsumexp(terms) / (alpha - 1)


def subsampled_curve(
    q: float, sigma: float, orders: tuple[int, ...] = DEFAULT_ORDERS
) -> RdpCurve:
    return RdpCurve({a: rdp_subsampled(q, sigma, a) for a in orders})


def compose_and_convert(curve: RdpCurve, steps: int, delta: float) -> float:
    """Compose ``steps`` mechanisms and convert to epsilon at the given delta.

    epsilon = min over orders of [steps * eps_rdp(alpha) + ln(1/delta)/(alpha-1)].
    """
    if steps < 1:
        raise PrivacyError("step count must be >= 1")
    if not 0 < delta < 1:
        raise PrivacyError("delta must lie in (0, 1)")
    penalty = math.log(1.0 / delta)
    return min(
        steps * eps + penalty / (alpha - 1) for alpha, eps in curve.values.items()
    )


def conversion_table(curve: RdpCurve, steps: int, delta: float) -> dict[int, float]:
    """Per-order composed-and-converted epsilon; the minimum is the budget."""
    penalty = math.log(1.0 / delta)
    return {
        alpha: steps * eps + penalty / (alpha - 1)
        for alpha, eps in curve.values.items()
    }


def calibrate_noise_multiplier(
    eps_target: float,
    delta: float,
    q: float,
    steps: int,
    sigma_max: float = 1e3,
    tol: float = 1e-6,
) -> float:
    """Smallest noise multiplier whose composed epsilon meets the target.

    Bisection on sigma against the monotone accountant; the returned value
    round-trips through ``compose_and_convert`` to within 1e-3 of the target.
    Raises when the target is unreachable even at ``sigma_max``.
    """
    PrivacyBudget(eps_target, delta)

    def spent(sigma: float) -> float:
        return compose_and_convert(subsampled_curve(q, sigma), steps, delta)

    if spent(sigma_max) > eps_target:
        raise PrivacyError(
            f"budget infeasible at sigma<={sigma_max:g}: epsilon target {eps_target:g} "
            f"is below the floor {spent(sigma_max):.6g} for q={q:g}, T={steps}, delta={delta:g}"
        )
    lo = 1e-4
    while spent(lo) <= eps_target:
        lo /= 2.0
        if lo < 1e-12:
            return lo
    hi = max(2.0 * lo, 1.0)
    while spent(hi) > eps_target:
        hi *= 2.0
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if spent(mid) <= eps_target:
            hi = mid
        else:
            lo = mid
    return hi


def noise_scaling_rule(
    C: float, steps: int, N: int, epsilon: float, delta: float, v: float
) -> float:
    """sqrt(v C^2 T ln(1/delta)) / (N epsilon): the square-root-in-T noise rule.

    The constant v is caller-supplied; the rule is used for scaling-law tests
    only, never for actual calibration.
    """
    return math.sqrt(v * C * C * steps * math.log(1.0 / delta)) / (N * epsilon)


def delta_convention(N: int) -> float:
    """Dataset-size-based delta: N^{-1.1}; rejects N <= 1 (delta must be < 1)."""
    if N <= 1:
        raise PrivacyError("need N > 1 for a delta below one")
    return float(N) ** (-1.1)
