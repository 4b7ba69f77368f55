"""Rician fading magnitude statistics.

All other modules consume the channel only through this one: sampling,
pdf/cdf/quantile of the magnitude gamma = |h|, and the instantaneous
capacity law. Power is normalized so that E[gamma^2] = omega (default 1)
and the operating point is set by the linear SNR alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats

__all__ = [
    "RicianSpec",
    "sample_gammas",
    "pdf",
    "cdf",
    "quantile",
    "capacity",
    "inverse_capacity",
]

# Above this K the noncentral-chi-square route loses accuracy; the
# magnitude is then a near-Gaussian ripple around mu.
_GAUSSIAN_LIMIT_K = 1e4


@dataclass(frozen=True)
class RicianSpec:
    """Rician magnitude statistics: shape factor, total power, linear SNR.

    k_factor is the line-of-sight to scattered power ratio (linear, not dB);
    k_factor = 0 collapses to Rayleigh fading. omega = E[gamma^2] = mu^2 + sigma^2.
    """

    k_factor: float
    omega: float = 1.0
    snr: float = 1.0

    def __post_init__(self):
        if not (self.k_factor >= 0.0):
            raise ValueError(f"k_factor must be >= 0, got {self.k_factor}")
        if not (self.omega > 0.0):
            raise ValueError(f"omega must be > 0, got {self.omega}")
        if not (self.snr > 0.0):
            raise ValueError(f"snr must be > 0, got {self.snr}")

    @property
    def mu(self) -> float:
        """Line-of-sight amplitude, mu = sqrt(omega*K/(K+1))."""
        return math.sqrt(self.omega * self.k_factor / (self.k_factor + 1.0))

    @property
    def sigma2(self) -> float:
        """Total scattered power, sigma^2 = omega/(K+1)."""
        return self.omega / (self.k_factor + 1.0)

    @classmethod
    def from_db(cls, k_db: float | None, snr_db: float = 0.0, omega: float = 1.0) -> "RicianSpec":
        """Build from dB quantities; k_db=None means Rayleigh (K=0)."""
        k = 0.0 if k_db is None else 10.0 ** (k_db / 10.0)
        return cls(k_factor=k, omega=omega, snr=10.0 ** (snr_db / 10.0))


def sample_gammas(spec: RicianSpec, n: int, seed=None) -> np.ndarray:
    """Draw n i.i.d. magnitudes gamma = |mu + w|, w circular complex normal.

    `seed` may be an int, SeedSequence, or an existing Generator; passing a
    Generator lets callers manage disjoint streams explicitly.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    s = math.sqrt(spec.sigma2 / 2.0)
    re = rng.normal(spec.mu, s, size=n)
    im = rng.normal(0.0, s, size=n)
    return np.hypot(re, im)


def pdf(spec: RicianSpec, gamma):
    """Rician magnitude density (2g/s^2) exp(-(g^2+mu^2)/s^2) I0(2 g mu / s^2).

    Uses the exponentially scaled Bessel function so large line-of-sight
    arguments stay finite: pdf = (2g/s^2) exp(-(g-mu)^2/s^2) i0e(2 g mu/s^2).
    """
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise ValueError("gamma must be >= 0")
    s2 = spec.sigma2
    mu = spec.mu
    out = (2.0 * g / s2) * np.exp(-((g - mu) ** 2) / s2) * special.i0e(2.0 * g * mu / s2)
    return float(out) if np.isscalar(gamma) else out


def cdf(spec: RicianSpec, gamma):
    """P(gamma), via the noncentral chi-square representation of gamma^2.

    gamma^2 * 2(K+1)/omega is noncentral chi-square with 2 dof and
    noncentrality 2K, which is the Marcum-Q form 1 - Q1(sqrt(2K), b).
    For extreme K the magnitude is treated as Gaussian around mu.
    """
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise ValueError("gamma must be >= 0")
    k = spec.k_factor
    if k > _GAUSSIAN_LIMIT_K:
        # sigma^2/2 per quadrature component; radial spread ~ N(mu, sigma^2/2)
        out = stats.norm.cdf(g, loc=spec.mu, scale=math.sqrt(spec.sigma2 / 2.0))
    else:
        b2 = g * g * 2.0 * (k + 1.0) / spec.omega
        # the noncentral chi-square implementation overflows internally for
        # tiny arguments with large noncentrality; use the leading term of
        # the Poisson-mixture series there (relative error O(b2 * K))
        tiny = b2 < 1e-6
        out = np.where(
            tiny,
            math.exp(-k) * -np.expm1(-np.where(tiny, b2, 0.0) / 2.0),
            stats.ncx2.cdf(np.where(tiny, 1.0, b2), 2.0, 2.0 * k),
        )
    return float(out) if np.isscalar(gamma) else out


def quantile(spec: RicianSpec, p: float) -> float:
    """Inverse CDF by bracketed root finding; cdf(quantile(p)) = p to ~1e-12."""
    if not (0.0 <= p < 1.0):
        raise ValueError(f"p must be in [0, 1), got {p}")
    if p == 0.0:
        return 0.0
    hi = spec.mu + 2.0 * math.sqrt(spec.sigma2)
    while cdf(spec, hi) < p:
        hi *= 2.0
    return float(optimize.brentq(lambda g: cdf(spec, g) - p, 0.0, hi, xtol=1e-14, rtol=1e-15))


def capacity(gamma, snr: float):
    """Instantaneous capacity log2(1 + gamma^2 * snr) in bits per channel use."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise ValueError("gamma must be >= 0")
    if not (snr > 0.0):
        raise ValueError(f"snr must be > 0, got {snr}")
    out = np.log2(1.0 + g * g * snr)
    return float(out) if np.isscalar(gamma) else out


def inverse_capacity(rate, snr: float):
    """Magnitude whose capacity equals `rate`: sqrt((2^r - 1)/snr)."""
    r = np.asarray(rate, dtype=float)
    if np.any(r < 0):
        raise ValueError("rate must be >= 0")
    out = np.sqrt(np.expm1(r * math.log(2.0)) / snr)
    return float(out) if np.isscalar(rate) else out
