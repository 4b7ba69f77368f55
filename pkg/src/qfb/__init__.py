"""Goodput-maximizing quantized CSI feedback over quasi-static Rician fading.

Subpackages: channel statistics, feedback schemes, optimal-scheme oracles,
shape-factor estimation (moment-based and learned), tabular Q-learning
over thresholds, and the Monte Carlo experiment harness.
"""

__version__ = "0.1.0"

from .channel import RicianSpec, capacity, cdf, pdf, quantile, sample_gammas
from .feedback import (FeedbackScheme, GoodputReport, analytic_goodput,
                       empirical_goodput, quantize, rate_match)
from .oracle import (OracleSolution, brute_force, ergodic_capacity,
                     no_csi_optimum, threshold_recursion)

__all__ = [
    "RicianSpec", "capacity", "cdf", "pdf", "quantile", "sample_gammas",
    "FeedbackScheme", "GoodputReport", "analytic_goodput", "empirical_goodput",
    "quantize", "rate_match",
    "OracleSolution", "brute_force", "ergodic_capacity", "no_csi_optimum",
    "threshold_recursion",
    "__version__",
]
