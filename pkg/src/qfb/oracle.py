"""Reference solutions for the goodput maximization problem.

Four routes: the ergodic-capacity upper bound (perfect CSI), the no-CSI
fixed-rate optimum, the printed threshold recursion solved by shooting,
and an independent grid search ("brute force") over quantile-spaced
threshold candidates that validates the other two.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .channel import RicianSpec, capacity, cdf, inverse_capacity, pdf, quantile
from .feedback import FeedbackScheme, analytic_goodput, rate_match

__all__ = [
    "OracleSolution",
    "ergodic_capacity",
    "no_csi_optimum",
    "threshold_recursion",
    "brute_force",
    "RecursionError_",
]

_MAX_REGIONS = 5
_MAX_GRID = 512
_TAIL_EPS = 1e-10


class RecursionError_(RuntimeError):
    """Shooting solver for the threshold recursion failed to converge."""


@dataclass(frozen=True)
class OracleSolution:
    scheme: FeedbackScheme
    goodput: float
    method: str
    reconstruction_points: tuple | None = None

    def to_json_obj(self) -> dict:
        obj = {
            "scheme": self.scheme.to_json_obj(),
            "goodput": self.goodput,
            "method": self.method,
        }
        if self.reconstruction_points is not None:
            obj["reconstruction_points"] = list(self.reconstruction_points)
        return obj


def _upper_limit(spec: RicianSpec) -> float:
    return quantile(spec, 1.0 - _TAIL_EPS)


def ergodic_capacity(spec: RicianSpec) -> float:
    """G at Lambda=inf: E[C(gamma)] by adaptive quadrature plus a tail bound.

    The integrand tail above the (1 - 1e-10) quantile is bounded by
    mass * C at slightly-extended support, which is far below tolerance.
    """
    hi = _upper_limit(spec)
    val, _ = integrate.quad(
        lambda g: pdf(spec, g) * capacity(g, spec.snr), 0.0, hi,
        epsabs=1e-12, epsrel=1e-10, limit=200,
    )
    return float(val)


def no_csi_optimum(spec: RicianSpec) -> OracleSolution:
    """G at Lambda=1: maximize r * (1 - P(sqrt((2^r - 1)/snr))) over r >= 0."""
    r_max = capacity(_upper_limit(spec), spec.snr)

    def neg(r):
        return -r * (1.0 - cdf(spec, inverse_capacity(r, spec.snr)))

    # coarse bracket, then bounded scalar refinement
    rs = np.linspace(1e-9, r_max, 200)
    vals = [neg(r) for r in rs]
    i = int(np.argmin(vals))
    lo = rs[max(i - 1, 0)]
    hi = rs[min(i + 1, len(rs) - 1)]
    res = optimize.minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    r_star = float(res.x)
    g_star = float(-res.fun)
    scheme = FeedbackScheme(lambdas=(0.0, math.inf), rates=(r_star,), snr=spec.snr)
    return OracleSolution(
        scheme=scheme,
        goodput=g_star,
        method="scalar-search",
        reconstruction_points=(inverse_capacity(r_star, spec.snr),),
    )


def threshold_recursion(spec: RicianSpec, num_regions: int,
                        mass_tol: float = 1e-6, max_iter: int = 200) -> OracleSolution:
    """Printed-threshold recursion solved as a shooting problem on lambda_1.

    Applies P(l+1) = P(l) + (1/snr + lam_l) p(lam_l) log2((1+lam_l*snr)/(1+lam_{l-1}*snr))
    exactly as printed (lambda_0 = 0 seeds the first log term), bisecting on
    lambda_1 until the implied terminal mass reaches 1. The printed update is
    dimensionally suspect against C = log2(1 + gamma^2 snr); `selftest`
    compares it against the brute-force reference rather than trusting it.
    """
    if num_regions < 2:
        raise ValueError("threshold_recursion needs num_regions >= 2")
    snr = spec.snr

    def shoot(lam1: float):
        """Returns (terminal_mass - 1, interior thresholds or None)."""
        lams = [0.0, lam1]
        p_cur = cdf(spec, lam1)
        if p_cur >= 1.0:
            return 1.0, None
        for l in range(1, num_regions):
            lam_l, lam_prev = lams[l], lams[l - 1]
            step = (1.0 / snr + lam_l) * pdf(spec, lam_l) * math.log2(
                (1.0 + lam_l * snr) / (1.0 + lam_prev * snr)
            )
            p_next = p_cur + step
            if l == num_regions - 1:
                return p_next - 1.0, lams[1:]
            if p_next >= 1.0 - 1e-13:
                return (num_regions - 1 - l) + p_next - 1.0, None
            lams.append(quantile(spec, p_next))
            p_cur = p_next
        raise AssertionError("unreachable")

    # bracket a sign change of the terminal-mass miss on a quantile scan
    probes = [quantile(spec, q) for q in np.linspace(1e-4, 1.0 - 1e-6, 256)]
    misses = [shoot(x)[0] for x in probes]
    lo = hi = None
    for a, b, ma, mb in zip(probes, probes[1:], misses, misses[1:]):
        if ma <= 0.0 <= mb or mb <= 0.0 <= ma:
            lo, hi, m_lo = a, b, ma
            break
    if lo is None:
        raise RecursionError_(
            f"no feasible lambda_1 bracket for Lambda={num_regions}, K={spec.k_factor}"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        m_mid, _ = shoot(mid)
        if abs(m_mid) < mass_tol:
            lo = hi = mid
            break
        if (m_mid > 0.0) == (m_lo > 0.0):
            lo, m_lo = mid, m_mid
        else:
            hi = mid
    lam1 = 0.5 * (lo + hi)
    miss, interior = shoot(lam1)
    if interior is None or abs(miss) > 1e-3:
        raise RecursionError_(f"shooting did not converge (terminal miss {miss:.3g})")
    scheme = rate_match((0.0, *interior, math.inf), snr)
    return OracleSolution(
        scheme=scheme,
        goodput=analytic_goodput(scheme, spec).goodput,
        method="recursion",
    )


def _grid_points(spec: RicianSpec, n: int) -> np.ndarray:
    """Quantile-spaced candidate thresholds: resolution follows the mass."""
    qs = (np.arange(n) + 1.0) / (n + 1.0)
    return np.array([quantile(spec, q) for q in qs])


def brute_force(spec: RicianSpec, num_regions: int, grid: int = 256,
                search_reconstruction: bool = False) -> OracleSolution:
    """Independent optimizer over quantile-spaced threshold candidates.

    Maximizes the rate-matched analytic goodput by an exact stage-wise
    search over strictly increasing interior thresholds (equivalent to
    exhaustive enumeration of all increasing tuples; the chain objective
    decomposes over consecutive boundary pairs). Ties break toward the
    lexicographically smallest tuple via first-index argmax.

    With search_reconstruction=True the per-region rate point gamma_l^r is
    optimized over grid candidates inside each region instead of pinned to
    the region's lower boundary, verifying that rate matching is optimal.
    """
    if not (1 <= num_regions <= _MAX_REGIONS):
        raise ValueError(f"num_regions must be in 1..{_MAX_REGIONS}")
    if not (2 <= grid <= _MAX_GRID):
        raise ValueError(f"grid must be in 2..{_MAX_GRID}")

    g = _grid_points(spec, grid)
    pg = cdf(spec, g)
    cg = capacity(g, spec.snr)

    # nodes: 0 = lambda_0 (gamma=0, P=0, C=0), 1..n = grid, n+1 = +inf (P=1)
    n = grid
    gam = np.concatenate(([0.0], g))
    p = np.concatenate(([0.0], pg, [1.0]))
    c = np.concatenate(([0.0], cg))

    if search_reconstruction:
        # per-region best rate point: W[a, b] = max_{r in region [a,b)} C(r)(P_b - P(r))
        # candidates: the lower boundary itself plus grid points inside the region
        W = np.full((n + 1, n + 2), -np.inf)
        R = np.zeros((n + 1, n + 2), dtype=int)
        bb = np.arange(n + 2)
        for a in range(n + 1):
            ii = np.arange(a, n + 1)
            vals = c[ii][:, None] * (p[None, :] - p[ii][:, None])
            vals = np.where((ii[:, None] < bb[None, :]) & (bb[None, :] > a), vals, -np.inf)
            j = np.argmax(vals, axis=0)
            W[a] = vals[j, bb]
            R[a] = ii[j]
    else:
        # rate-matched region value C(lambda_a) * (P_b - P_a)
        W = c[:, None] * (p[None, :] - p[: n + 1, None])
        R = None

    m_interior = num_regions - 1
    # f[i] = best value of regions from boundary node i to +inf using the
    # remaining thresholds; built from the last region inward.
    f = W[:, n + 1].copy()
    back = []
    for _ in range(m_interior):
        # choose the next boundary node j, constrained to j > i
        cand = W[: n + 1, 1 : n + 1] + f[1 : n + 1][None, :]
        ii = np.arange(n + 1)[:, None]
        jj = np.arange(1, n + 1)[None, :]
        cand = np.where(jj > ii, cand, -np.inf)
        nxt = np.argmax(cand, axis=1) + 1
        f = cand[np.arange(n + 1), nxt - 1]
        back.append(nxt)

    # boundary 0 is lambda_0; walk the back-pointers to recover the tuple
    node = 0
    interior_nodes = []
    for bp in reversed(back):
        node = int(bp[node])
        interior_nodes.append(node)
    goodput = float(f[0]) if m_interior else float(W[0, n + 1])

    lambdas = (0.0, *[float(gam[i]) for i in interior_nodes], math.inf)
    if search_reconstruction:
        bounds = [0] + interior_nodes + [n + 1]
        recon_nodes = [int(R[a, b]) for a, b in zip(bounds[:-1], bounds[1:])]
        recon = tuple(float(gam[i]) for i in recon_nodes)
        rates = tuple(float(c[i]) for i in recon_nodes)
        scheme = FeedbackScheme(lambdas=lambdas, rates=rates, snr=spec.snr)
        return OracleSolution(scheme=scheme, goodput=goodput, method="brute-force",
                              reconstruction_points=recon)

    if num_regions == 1:
        # fixed-rate search: best single rate point over the grid
        vals = cg * (1.0 - pg)
        j = int(np.argmax(vals))
        r = float(cg[j])
        scheme = FeedbackScheme(lambdas=(0.0, math.inf), rates=(r,), snr=spec.snr)
        return OracleSolution(scheme=scheme, goodput=float(vals[j]), method="brute-force",
                              reconstruction_points=(float(g[j]),))

    scheme = rate_match(lambdas, spec.snr)
    return OracleSolution(scheme=scheme, goodput=goodput, method="brute-force")
