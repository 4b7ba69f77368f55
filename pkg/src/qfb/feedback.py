"""Quantized feedback schemes: index mapping, rates, goodput and outage.

A scheme is a set of region boundaries 0 = lambda_0 < ... < lambda_Lambda = inf
with one rate per region. Under rate matching (r_l = C(lambda_l)) every
transmission is decodable; for general rates a region can carry an outage
head where C(gamma) < r_l.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import RicianSpec, capacity, cdf, inverse_capacity

__all__ = [
    "FeedbackScheme",
    "GoodputReport",
    "quantize",
    "rate_match",
    "analytic_goodput",
    "empirical_goodput",
]


@dataclass(frozen=True)
class FeedbackScheme:
    """Region boundaries lambda_0..lambda_Lambda and per-region rates r_0..r_{Lambda-1}."""

    lambdas: tuple
    rates: tuple
    snr: float = 1.0

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lambdas)
        r = tuple(float(x) for x in self.rates)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "rates", r)
        if len(lam) < 2 or lam[0] != 0.0 or not math.isinf(lam[-1]):
            raise ValueError("lambdas must start at 0 and end with the +inf sentinel")
        if any(a >= b for a, b in zip(lam, lam[1:])):
            raise ValueError(f"boundaries must be strictly increasing: {lam}")
        if len(r) != len(lam) - 1:
            raise ValueError("need exactly one rate per region")
        if any(x < 0 for x in r):
            raise ValueError("rates must be >= 0")
        if not (self.snr > 0):
            raise ValueError("snr must be > 0")

    @property
    def num_regions(self) -> int:
        return len(self.rates)

    @property
    def interior(self) -> tuple:
        return self.lambdas[1:-1]

    def to_json_obj(self) -> dict:
        return {
            "lambdas": [("inf" if math.isinf(x) else x) for x in self.lambdas],
            "rates": list(self.rates),
            "snr_db": 10.0 * math.log10(self.snr),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "FeedbackScheme":
        lam = [math.inf if x in ("inf", "Infinity") else float(x) for x in obj["lambdas"]]
        return cls(
            lambdas=tuple(lam),
            rates=tuple(obj["rates"]),
            snr=10.0 ** (obj["snr_db"] / 10.0),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def loads(cls, s: str) -> "FeedbackScheme":
        return cls.from_json_obj(json.loads(s))


@dataclass(frozen=True)
class GoodputReport:
    goodput: float
    outage_rate: float
    per_region_mass: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not (0.0 <= self.outage_rate <= 1.0 + 1e-12):
            raise ValueError(f"outage_rate out of range: {self.outage_rate}")
        if self.goodput < -1e-12:
            raise ValueError(f"goodput must be >= 0, got {self.goodput}")


def quantize(scheme: FeedbackScheme, gamma):
    """Region index l with lambda_l <= gamma < lambda_{l+1} (half-open)."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise ValueError("gamma must be >= 0")
    # interior boundaries; side='right' puts a boundary value in the upper region
    idx = np.searchsorted(np.asarray(scheme.lambdas[1:-1]), g, side="right")
    return int(idx) if np.isscalar(gamma) else idx


def rate_match(lambdas, snr: float) -> FeedbackScheme:
    """Scheme with r_l = C(lambda_l): zero outage inside every region."""
    lam = tuple(float(x) for x in lambdas)
    rates = tuple(float(capacity(x, snr)) for x in lam[:-1])
    return FeedbackScheme(lambdas=lam, rates=rates, snr=snr)


def analytic_goodput(scheme: FeedbackScheme, spec: RicianSpec) -> GoodputReport:
    """Expected goodput and outage of a scheme under the given fading law.

    A region credits its rate only on the mass where C(gamma) >= r_l, i.e.
    above the reconstruction point inverse_capacity(r_l); the rest of the
    region is outage. Rate-matched schemes have zero outage by construction.
    """
    lam = np.asarray(scheme.lambdas)
    p = np.empty(lam.shape)
    p[:-1] = cdf(spec, lam[:-1])
    p[-1] = 1.0
    mass = np.diff(p)

    goodput = 0.0
    outage = 0.0
    for l, r in enumerate(scheme.rates):
        lo, hi = lam[l], lam[l + 1]
        p_lo, p_hi = p[l], p[l + 1]
        if r <= 0.0:
            continue
        gr = inverse_capacity(r, scheme.snr)
        if gr <= lo:
            goodput += r * (p_hi - p_lo)
        elif gr >= hi:
            outage += p_hi - p_lo
        else:
            p_gr = cdf(spec, gr)
            goodput += r * (p_hi - p_gr)
            outage += p_gr - p_lo
    return GoodputReport(
        goodput=float(goodput),
        outage_rate=float(min(max(outage, 0.0), 1.0)),
        per_region_mass=tuple(mass.tolist()),
    )


def empirical_goodput(scheme: FeedbackScheme, gammas) -> GoodputReport:
    """Sample-mean goodput over a batch of channel draws.

    Credits r_l per draw only when decodable (r_l <= C(gamma)); the
    complementary fraction of nonzero-rate draws counts as outage.
    """
    g = np.asarray(gammas, dtype=float)
    if g.size == 0:
        raise ValueError("empty sample batch")
    idx = quantize(scheme, g)
    rates = np.asarray(scheme.rates)[idx]
    ok = rates <= capacity(g, scheme.snr) + 1e-12
    goodput = float(np.mean(np.where(ok, rates, 0.0)))
    outage = float(np.mean(~ok))
    counts = np.bincount(idx, minlength=scheme.num_regions).astype(float)
    return GoodputReport(goodput=goodput, outage_rate=outage,
                         per_region_mass=tuple((counts / g.size).tolist()))
