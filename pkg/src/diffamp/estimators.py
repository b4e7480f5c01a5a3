"""Difference-signal estimators on sampled data.

The unbiased estimator combines the accepted/rejected sample means as
``xhat = b1 * Y1 - b2 * Y2`` with realized weights ``b1 = n1 / (n1 - n2)`` and
``b2 = n2 / (n1 - n2)``; the biased variant replaces ``n2`` by ``beta * n2``.
Variances follow from independent sub-ensemble means,
``b1^2 s1^2 / n1 + b2^2 s2^2 / n2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from diffamp.analytic import (
    MeterConfig,
    PpsConfig,
    bdsa_slope,
    bdsa_variance_snr,
    dsa_signal,
    dsa_variance,
    postselection_probs,
    realized_count_variance,
)
from diffamp.errors import ConfigError, DegenerateError
from diffamp.sampler import Histogram, SampleBatch, derive_seed, sample_batch


@dataclass(frozen=True)
class DsaEstimate:
    xbar: float
    variance: float | None
    snr: float | None
    d_hat: float
    n1: float
    n2: float
    mode: str = "unbiased"
    beta_bias: float = 1.0
    weights: tuple = (math.nan, math.nan)
    flags: tuple = field(default=())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["weights"] = list(self.weights)
        out["flags"] = list(self.flags)
        return out


def _moments(n, s, ss):
    mean = s / n
    var = max((ss - s * mean) / (n - 1), 0.0)
    return mean, var


def _dcsv(n1, mean1, var1, n2, mean2, var2, beta_bias):
    denom = n1 - beta_bias * n2
    w1 = n1 / denom
    w2 = beta_bias * n2 / denom
    xbar = w1 * mean1 - w2 * mean2
    variance = w1 * w1 * var1 / n1 + w2 * w2 * var2 / n2
    return xbar, variance, (w1, w2)


def _check_counts(n1, n2):
    if n1 < 2 or n2 < 2:
        raise DegenerateError(
            f"need at least 2 records per channel, got n1={n1}, n2={n2}", kind="insufficient_data"
        )


def _finish(xbar, variance, d_hat, n1, n2, mode, beta_bias, weights, flags=()):
    snr = abs(xbar) / math.sqrt(variance) if variance > 0 else None
    if snr is None:
        flags = tuple(flags) + ("zero_variance",)
    return DsaEstimate(xbar, variance, snr, d_hat, n1, n2, mode, beta_bias, weights, tuple(flags))


def _unbiased(n1, mean1, var1, n2, mean2, var2, pps, flags=()):
    _check_counts(n1, n2)
    if n1 == n2:
        raise DegenerateError(f"realized counts balance (n1 = n2 = {n1})", kind="balanced_counts")
    xbar, variance, weights = _dcsv(n1, mean1, var1, n2, mean2, var2, 1.0)
    return _finish(xbar, variance, pps.B * xbar, n1, n2, "unbiased", 1.0, weights, flags)


def estimate_dsa(batch: SampleBatch, pps: PpsConfig | None = None) -> DsaEstimate:
    """Unbiased difference-signal estimate with ``d_hat = B * xbar``."""
    pps = batch.pps if pps is None else pps
    _check_counts(batch.n1, batch.n2)
    mean1, var1 = _moments(batch.n1, batch.sum1, batch.sumsq1)
    mean2, var2 = _moments(batch.n2, batch.sum2, batch.sumsq2)
    flags = ("background_included",) if batch.bg_count else ()
    return _unbiased(batch.n1, mean1, var1, batch.n2, mean2, var2, pps, flags)


def estimate_bdsa(batch: SampleBatch, pps: PpsConfig | None, beta_bias: float) -> DsaEstimate:
    """Biased difference-signal estimate.

    ``d_hat`` inverts the exact expected biased signal, which is linear in
    ``d``, rather than the near-resonance approximation. ``beta_bias = 1``
    is the unbiased estimator and returns exactly :func:`estimate_dsa`.
    """
    pps = batch.pps if pps is None else pps
    beta_bias = float(beta_bias)
    if beta_bias == 1.0:
        return estimate_dsa(batch, pps)
    _check_counts(batch.n1, batch.n2)
    if abs(batch.n1 - beta_bias * batch.n2) < 1.0:
        raise DegenerateError(
            f"|n1 - beta*n2| < 1 (n1={batch.n1}, n2={batch.n2}, beta={beta_bias:g})", kind="bias"
        )
    mean1, var1 = _moments(batch.n1, batch.sum1, batch.sumsq1)
    mean2, var2 = _moments(batch.n2, batch.sum2, batch.sumsq2)
    xbar, variance, weights = _dcsv(batch.n1, mean1, var1, batch.n2, mean2, var2, beta_bias)
    slope = bdsa_slope(pps, beta_bias)
    if slope == 0.0:
        raise DegenerateError("expected biased signal does not depend on d", kind="unidentifiable")
    flags = ("background_included",) if batch.bg_count else ()
    return _finish(xbar, variance, xbar / slope, batch.n1, batch.n2, "biased", beta_bias, weights, flags)


def _hist_moments(h: Histogram):
    """Count, mean and variance from bin centers; under/overflow is ignored."""
    c = np.asarray(h.counts, dtype=float)
    x = h.centers
    n = float(c.sum())
    if n <= 1:
        return n, math.nan, math.nan
    mean = float(np.dot(c, x) / n)
    var = float(np.dot(c, (x - mean) ** 2) / (n - 1))
    return n, mean, var


def estimate_from_histograms(h1: Histogram, h2: Histogram, pps: PpsConfig) -> DsaEstimate:
    """Unbiased estimate from per-channel histograms (bin-center moments)."""
    n1, mean1, var1 = _hist_moments(h1)
    n2, mean2, var2 = _hist_moments(h2)
    flags = ()
    if h1.underflow or h1.overflow or h2.underflow or h2.overflow:
        flags = ("overflow_ignored",)
    return _unbiased(n1, mean1, var1, n2, mean2, var2, pps, flags)


def estimate_difference_histogram(batch: SampleBatch, pps: PpsConfig | None = None) -> DsaEstimate:
    """Mean of the normalized difference histogram ``(n1(x) - n2(x)) / (N1 - N2)``.

    Channel-identical additive background cancels here exactly, bin by bin.
    The difference distribution is not positive, so no variance is reported.
    """
    pps = batch.pps if pps is None else pps
    diff = batch.difference_histogram()
    denom = int(diff.sum())
    if denom == 0:
        raise DegenerateError("difference histogram has zero total", kind="balanced_counts")
    xbar = float(np.dot(diff, batch.hist1.centers)) / denom
    flags = ["variance_unavailable"]
    if batch.hist1.underflow or batch.hist1.overflow or batch.hist2.underflow or batch.hist2.overflow:
        flags.append("overflow_ignored")
    n1 = int(batch.hist1.counts.sum())
    n2 = int(batch.hist2.counts.sum())
    return DsaEstimate(xbar, None, None, pps.B * xbar, n1, n2, "difference_histogram", 1.0,
                       (n1 / denom, n2 / denom), tuple(flags))


def estimate_conventional(batch: SampleBatch, pps: PpsConfig | None = None) -> DsaEstimate:
    """Single-channel reference: pool all particle records, ``d_hat = mean / B``.

    With pure pre-selection (B = 1) this is the conventional measurement
    whose SNR is ``sqrt(N) d / sigma``.
    """
    pps = batch.pps if pps is None else pps
    if pps.B == 0.0:
        raise DegenerateError("B = 0: pooled mean carries no information on d", kind="preselection")
    n = batch.n1 + batch.n2 - 2 * batch.bg_count
    s = batch.sum1 + batch.sum2 - 2 * batch.bg_sum
    ss = batch.sumsq1 + batch.sumsq2 - 2 * batch.bg_sumsq
    if n < 2:
        raise DegenerateError("need at least 2 records", kind="insufficient_data")
    mean, var = _moments(n, s, ss)
    variance = var / n
    return _finish(mean, variance, mean / pps.B, n, 0, "conventional", 0.0, (1.0, 0.0))


@dataclass(frozen=True)
class ReplicateSummary:
    M: int
    empirical_mean: float
    empirical_variance: float
    analytic_variance: float
    ratio: float
    analytic_mean: float
    count_aware_variance: float = math.nan
    count_aware_ratio: float = math.nan
    excluded: int = 0
    mean_n1: float = math.nan
    mean_n2: float = math.nan
    expected_n1: float = math.nan
    expected_n2: float = math.nan
    mode: str = "unbiased"
    beta_bias: float = 1.0
    base_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _parse_mode(mode):
    if mode == "unbiased":
        return None
    if isinstance(mode, (int, float)) and not isinstance(mode, bool):
        return float(mode)
    if isinstance(mode, tuple) and len(mode) == 2 and mode[0] == "biased":
        return float(mode[1])
    raise ConfigError(f"mode must be 'unbiased', ('biased', beta) or a beta value, got {mode!r}", key="mode")


def replicate_study(
    pps: PpsConfig,
    meter: MeterConfig,
    N: int,
    M: int,
    base_seed: int,
    mode="unbiased",
    seeds=None,
) -> ReplicateSummary:
    """Run ``M`` independent batches and compare the spread of ``xbar`` with theory.

    Seeds default to ``base_seed + i``. Replicates that hit a degeneracy are
    excluded and counted. ``ratio`` compares with the fixed-count variance
    formula; ``count_aware_ratio`` with the variance that also carries the
    binomial fluctuation of the realized counts.
    """
    if M < 30:
        raise ConfigError(f"M must be >= 30 for a meaningful variance, got {M}", key="M")
    beta_bias = _parse_mode(mode)
    if beta_bias == 1.0:
        beta_bias = None
    if seeds is None:
        seeds = [derive_seed(base_seed, i) for i in range(M)]
    seeds = list(seeds)
    if len(seeds) != M:
        raise ConfigError("need exactly M seeds", key="seeds")
    if len(set(seeds)) != M:
        raise DegenerateError("replicate seeds repeat: replicates would be identical", kind="seed_reuse")

    xbars, n1s, n2s = [], [], []
    excluded = 0
    for seed in seeds:
        batch = sample_batch(pps, meter, N, seed)
        try:
            if beta_bias is None:
                est = estimate_dsa(batch, pps)
            else:
                est = estimate_bdsa(batch, pps, beta_bias)
        except DegenerateError:
            excluded += 1
            continue
        xbars.append(est.xbar)
        n1s.append(batch.n1)
        n2s.append(batch.n2)
    if len(xbars) < 2:
        raise DegenerateError(f"only {len(xbars)} usable replicates", kind="insufficient_data")

    xs = np.asarray(xbars)
    emp_var = float(np.var(xs, ddof=1))
    if emp_var == 0.0:
        raise DegenerateError("replicates are identical", kind="seed_reuse")
    if beta_bias is None:
        ana_var = dsa_variance(pps, meter, N)
        ana_mean = dsa_signal(pps, meter)
    else:
        ana_var = bdsa_variance_snr(pps, meter, beta_bias, N).variance
        ana_mean = bdsa_slope(pps, beta_bias) * meter.d
    count_var = realized_count_variance(pps, meter, N, 1.0 if beta_bias is None else beta_bias)
    p_f, p_fbar = postselection_probs(pps)
    return ReplicateSummary(
        M=M,
        empirical_mean=float(xs.mean()),
        empirical_variance=emp_var,
        analytic_variance=ana_var,
        ratio=emp_var / ana_var,
        analytic_mean=ana_mean,
        count_aware_variance=count_var,
        count_aware_ratio=emp_var / count_var,
        excluded=excluded,
        mean_n1=float(np.mean(n1s)),
        mean_n2=float(np.mean(n2s)),
        expected_n1=N * p_f,
        expected_n2=N * p_fbar,
        mode="unbiased" if beta_bias is None else "biased",
        beta_bias=1.0 if beta_bias is None else beta_bias,
        base_seed=int(base_seed),
    )


__all__ = [
    "DsaEstimate",
    "ReplicateSummary",
    "estimate_bdsa",
    "estimate_conventional",
    "estimate_difference_histogram",
    "estimate_dsa",
    "estimate_from_histograms",
    "replicate_study",
]
