"""Difference-signal amplification (DSA) and biased DSA toolkit.

Closed-form analytics, a seedable Monte Carlo model of a classical
Stern-Gerlach measurement with mixed pre/post-selection, estimators that
recover the meter shift ``d`` from amplified difference signals, and
sweep/figure generation to CSV.
"""

__version__ = "0.1.0"

from diffamp.errors import (
    ConfigError,
    ConfigMismatchError,
    DegenerateError,
    DiffampError,
)
from diffamp.analytic import (
    MeterConfig,
    MixtureDensity,
    PpsConfig,
    bdsa_signal,
    bdsa_variance_snr,
    dsa_signal,
    dsa_snr,
    dsa_variance,
    postselection_probs,
    psa_psr_means,
    ratio_factors,
    subensemble_variances,
    weak_value,
)
from diffamp.sampler import (
    Histogram,
    Imperfection,
    SampleBatch,
    merge_batches,
    postprocess_split,
    sample_batch,
)
from diffamp.estimators import (
    DsaEstimate,
    ReplicateSummary,
    estimate_bdsa,
    estimate_dsa,
    replicate_study,
)

__all__ = [
    "__version__",
    "ConfigError",
    "ConfigMismatchError",
    "DegenerateError",
    "DiffampError",
    "MeterConfig",
    "MixtureDensity",
    "PpsConfig",
    "bdsa_signal",
    "bdsa_variance_snr",
    "dsa_signal",
    "dsa_snr",
    "dsa_variance",
    "postselection_probs",
    "psa_psr_means",
    "ratio_factors",
    "subensemble_variances",
    "weak_value",
    "Histogram",
    "Imperfection",
    "SampleBatch",
    "merge_batches",
    "postprocess_split",
    "sample_batch",
    "DsaEstimate",
    "ReplicateSummary",
    "estimate_bdsa",
    "estimate_dsa",
    "replicate_study",
]
