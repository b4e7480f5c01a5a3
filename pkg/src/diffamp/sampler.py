"""Seedable Monte Carlo generation of measurement records.

Each particle: spin up with probability ``alpha2`` (else down), meter
reading ``x ~ N(+-d, sigma) + offset``, accepted by post-selection with
probability ``a2`` (up) or ``b2`` (down). Records are reduced on the fly to
per-channel sufficient statistics (counts, sums, sums of squares) and,
optionally, fixed-bin histograms.

Random streams use numpy's PCG64 seeded through ``SeedSequence``. The
particle stream is keyed by the seed alone; background counts draw from a
separate child stream (``spawn_key=(1,)``) so that injecting background never
perturbs the particle records. Partitioned runs use
``seed = base_seed + partition_index`` (mod 2**64).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from diffamp.analytic import MeterConfig, PpsConfig
from diffamp.errors import ConfigError, ConfigMismatchError

SEED_MODULUS = 2**64
CHUNK = 1 << 18
_BACKGROUND_STREAM = 1


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ConfigError(f"seed must be an integer, got {seed!r}", key="seed")
    seed = int(seed)
    if not 0 <= seed < SEED_MODULUS:
        raise ConfigError(f"seed must be in [0, 2**64), got {seed}", key="seed")
    return seed


def derive_seed(base_seed: int, index: int) -> int:
    """Seed of partition/replicate ``index`` derived from ``base_seed``."""
    return (check_seed(base_seed) + index) % SEED_MODULUS


@dataclass(frozen=True)
class Histogram:
    """Fixed-bin counts with explicit under/overflow bins."""

    edges: np.ndarray
    counts: np.ndarray
    underflow: float = 0
    overflow: float = 0

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        counts = np.asarray(self.counts)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ConfigError("histogram edges must be strictly increasing")
        if counts.shape != (edges.size - 1,):
            raise ConfigError("histogram needs len(edges) - 1 counts")
        if np.any(counts < 0) or self.underflow < 0 or self.overflow < 0:
            raise ConfigError("histogram counts must be non-negative")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def empty(cls, edges) -> "Histogram":
        edges = np.asarray(edges, dtype=float)
        return cls(edges, np.zeros(edges.size - 1, dtype=np.int64))

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def total(self):
        return self.counts.sum() + self.underflow + self.overflow

    def fill(self, x) -> "Histogram":
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.edges, x, side="right") - 1
        under = int(np.count_nonzero(idx < 0))
        # the right edge belongs to the last bin
        idx[x == self.edges[-1]] = self.edges.size - 2
        over = int(np.count_nonzero(idx >= self.edges.size - 1))
        inside = idx[(idx >= 0) & (idx < self.edges.size - 1)]
        counts = self.counts + np.bincount(inside, minlength=self.counts.size)
        return Histogram(self.edges, counts, self.underflow + under, self.overflow + over)

    def __add__(self, other: "Histogram") -> "Histogram":
        if not np.array_equal(self.edges, other.edges):
            raise ConfigMismatchError("histograms have different bin edges")
        return Histogram(
            self.edges,
            self.counts + other.counts,
            self.underflow + other.underflow,
            self.overflow + other.overflow,
        )

    def __sub__(self, other: "Histogram"):
        """Signed bin-wise difference, returned as a plain array (may be negative)."""
        if not np.array_equal(self.edges, other.edges):
            raise ConfigMismatchError("histograms have different bin edges")
        return self.counts - other.counts

    def __eq__(self, other):
        if not isinstance(other, Histogram):
            return NotImplemented
        return (
            np.array_equal(self.edges, other.edges)
            and np.array_equal(self.counts, other.counts)
            and self.underflow == other.underflow
            and self.overflow == other.overflow
        )


def default_edges(meter: MeterConfig) -> np.ndarray:
    """Bins of width sigma/20 covering +-(|d| + 6 sigma)."""
    half = abs(meter.d) + 6.0 * meter.sigma
    nbins = int(math.ceil(2.0 * half / (meter.sigma / 20.0)))
    return np.linspace(-half, half, nbins + 1)


@dataclass(frozen=True)
class Imperfection:
    """Injected systematic effects.

    ``offset`` displaces every particle reading. ``background`` counts per
    channel are drawn uniformly over ``background_window`` (defaulting to the
    histogram range) and added identically to both channels.
    """

    offset: float = 0.0
    background: int = 0
    background_window: tuple | None = None

    def __post_init__(self):
        if not math.isfinite(self.offset):
            raise ConfigError("offset must be finite", key="offset")
        if isinstance(self.background, bool) or int(self.background) != self.background or self.background < 0:
            raise ConfigError(f"background must be a count >= 0, got {self.background!r}", key="background")
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "background", int(self.background))
        if self.background_window is not None:
            lo, hi = (float(v) for v in self.background_window)
            if not lo < hi:
                raise ConfigError("background_window must satisfy lo < hi", key="background_window")
            object.__setattr__(self, "background_window", (lo, hi))


@dataclass(frozen=True)
class SampleBatch:
    """Sufficient statistics of one or more Monte Carlo runs.

    Channel statistics include injected background; its per-channel
    contribution is also kept in the ``bg_*`` fields, so
    ``n1 + n2 == n_total + 2 * bg_count``.
    """

    pps: PpsConfig
    meter: MeterConfig
    imperfection: Imperfection
    seeds: tuple
    n_total: int
    n1: int
    n2: int
    sum1: float
    sumsq1: float
    sum2: float
    sumsq2: float
    bg_count: int = 0
    bg_sum: float = 0.0
    bg_sumsq: float = 0.0
    hist1: Histogram | None = None
    hist2: Histogram | None = None

    @property
    def seed(self) -> int | None:
        return self.seeds[0] if len(self.seeds) == 1 else None

    @property
    def has_histograms(self) -> bool:
        return self.hist1 is not None

    def channel_means(self):
        return self.sum1 / self.n1, self.sum2 / self.n2

    def difference_histogram(self) -> np.ndarray:
        if not self.has_histograms:
            raise ConfigError("batch was sampled without histograms", key="histograms")
        return self.hist1 - self.hist2

    def __eq__(self, other):
        if not isinstance(other, SampleBatch):
            return NotImplemented
        names = [f for f in self.__dataclass_fields__]
        return all(getattr(self, n) == getattr(other, n) for n in names)


def empty_batch(pps, meter, imperfection=Imperfection(), histograms=False, edges=None) -> SampleBatch:
    """Identity element of :func:`merge_batches`."""
    h1 = h2 = None
    if histograms:
        edges = default_edges(meter) if edges is None else edges
        h1 = h2 = Histogram.empty(edges)
    return SampleBatch(pps, meter, imperfection, (), 0, 0, 0, 0.0, 0.0, 0.0, 0.0, hist1=h1, hist2=h2)


def particle_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(check_seed(seed))))


def background_stream(seed: int) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(_BACKGROUND_STREAM,))
    return np.random.Generator(np.random.PCG64(ss))


def sample_records(pps: PpsConfig, meter: MeterConfig, n: int, rng: np.random.Generator, offset: float = 0.0):
    """Draw ``n`` raw particle records: ``(x, spin_up, accepted)`` arrays."""
    up = rng.random(n) < pps.alpha2
    x = rng.normal(0.0, meter.sigma, n) + np.where(up, meter.d, -meter.d) + offset
    accepted = rng.random(n) < np.where(up, pps.a2, pps.b2)
    return x, up, accepted


def accumulate(batch: SampleBatch, x, accepted) -> SampleBatch:
    """Fold particle readings ``x`` with acceptance flags into ``batch``."""
    x = np.asarray(x, dtype=float)
    accepted = np.asarray(accepted, dtype=bool)
    x1, x2 = x[accepted], x[~accepted]
    out = replace(
        batch,
        n_total=batch.n_total + x.size,
        n1=batch.n1 + x1.size,
        n2=batch.n2 + x2.size,
        sum1=batch.sum1 + float(x1.sum()),
        sumsq1=batch.sumsq1 + float(np.dot(x1, x1)),
        sum2=batch.sum2 + float(x2.sum()),
        sumsq2=batch.sumsq2 + float(np.dot(x2, x2)),
    )
    if batch.has_histograms:
        out = replace(out, hist1=batch.hist1.fill(x1), hist2=batch.hist2.fill(x2))
    return out


def _inject_background(batch: SampleBatch, seed: int) -> SampleBatch:
    imp = batch.imperfection
    if imp.background == 0:
        return batch
    if imp.background_window is not None:
        lo, hi = imp.background_window
    elif batch.has_histograms:
        lo, hi = batch.hist1.edges[0], batch.hist1.edges[-1]
    else:
        edges = default_edges(batch.meter)
        lo, hi = edges[0], edges[-1]
    xb = background_stream(seed).uniform(lo, hi, imp.background)
    s, ss = float(xb.sum()), float(np.dot(xb, xb))
    out = replace(
        batch,
        n1=batch.n1 + xb.size,
        n2=batch.n2 + xb.size,
        sum1=batch.sum1 + s,
        sumsq1=batch.sumsq1 + ss,
        sum2=batch.sum2 + s,
        sumsq2=batch.sumsq2 + ss,
        bg_count=batch.bg_count + xb.size,
        bg_sum=batch.bg_sum + s,
        bg_sumsq=batch.bg_sumsq + ss,
    )
    if batch.has_histograms:
        out = replace(out, hist1=out.hist1.fill(xb), hist2=out.hist2.fill(xb))
    return out


def sample_batch(
    pps: PpsConfig,
    meter: MeterConfig,
    N: int,
    seed: int,
    imperfection: Imperfection = Imperfection(),
    histograms: bool = False,
    edges=None,
) -> SampleBatch:
    """Simulate ``N`` particles; bit-identical for identical arguments."""
    if isinstance(N, bool) or not isinstance(N, (int, np.integer)) or N < 1:
        raise ConfigError(f"N must be an integer >= 1, got {N!r}", key="N")
    seed = check_seed(seed)
    rng = particle_stream(seed)
    batch = replace(empty_batch(pps, meter, imperfection, histograms, edges), seeds=(seed,))
    done = 0
    while done < N:
        n = min(CHUNK, N - done)
        x, _, accepted = sample_records(pps, meter, n, rng, imperfection.offset)
        batch = accumulate(batch, x, accepted)
        done += n
    return _inject_background(batch, seed)


def sample_partitioned(
    pps: PpsConfig,
    meter: MeterConfig,
    N: int,
    base_seed: int,
    partitions: int,
    imperfection: Imperfection = Imperfection(),
    histograms: bool = False,
) -> SampleBatch:
    """Split ``N`` over partitions seeded ``base_seed + i`` and merge the results."""
    if partitions < 1 or partitions > N:
        raise ConfigError(f"partitions must be in [1, N], got {partitions}", key="partitions")
    sizes = [N // partitions + (1 if i < N % partitions else 0) for i in range(partitions)]
    batch = empty_batch(pps, meter, imperfection, histograms)
    for i, n in enumerate(sizes):
        part = sample_batch(pps, meter, n, derive_seed(base_seed, i), imperfection, histograms)
        batch = merge_batches(batch, part)
    return batch


def merge_batches(a: SampleBatch, b: SampleBatch) -> SampleBatch:
    """Component-wise sum of two batches of the same configuration."""
    if a.pps != b.pps or a.meter != b.meter:
        raise ConfigMismatchError("batches were sampled with different configurations")
    if a.imperfection != b.imperfection:
        raise ConfigMismatchError("batches carry different imperfection settings")
    if a.has_histograms != b.has_histograms:
        raise ConfigMismatchError("only one batch has histograms")
    if set(a.seeds) & set(b.seeds):
        raise ConfigMismatchError(f"batches share seeds {sorted(set(a.seeds) & set(b.seeds))}")
    h1 = h2 = None
    if a.has_histograms:
        h1, h2 = a.hist1 + b.hist1, a.hist2 + b.hist2
    return SampleBatch(
        a.pps,
        a.meter,
        a.imperfection,
        tuple(sorted(a.seeds + b.seeds)),
        a.n_total + b.n_total,
        a.n1 + b.n1,
        a.n2 + b.n2,
        a.sum1 + b.sum1,
        a.sumsq1 + b.sumsq1,
        a.sum2 + b.sum2,
        a.sumsq2 + b.sumsq2,
        a.bg_count + b.bg_count,
        a.bg_sum + b.bg_sum,
        a.bg_sumsq + b.bg_sumsq,
        h1,
        h2,
    )


@dataclass(frozen=True)
class SplitResult:
    n1: Histogram
    n2: Histogram
    flagged_bins: tuple = field(default=())


def postprocess_split(total: Histogram, pps: PpsConfig, meter: MeterConfig) -> SplitResult:
    """Split a recorded distribution ``n(x)`` into accepted/rejected parts.

    Each bin is divided in the ratio of the unnormalized accepted and
    rejected densities at the bin center (under/overflow at the outer
    edges). Bins where both densities underflow are split evenly and listed
    in ``flagged_bins`` (-1 for underflow, ``len(counts)`` for overflow).
    """
    if np.any(np.asarray(total.counts) < 0):
        raise ConfigError("histogram counts must be non-negative")
    points = np.concatenate(([total.edges[0]], total.centers, [total.edges[-1]]))
    counts = np.concatenate(([total.underflow], np.asarray(total.counts, dtype=float), [total.overflow]))
    up = np.exp(-0.5 * ((points - meter.d) / meter.sigma) ** 2)
    down = np.exp(-0.5 * ((points + meter.d) / meter.sigma) ** 2)
    acc = pps.alpha2 * pps.a2 * up + pps.beta2 * pps.b2 * down
    rej = pps.alpha2 * pps.b2 * up + pps.beta2 * pps.a2 * down
    denom = acc + rej
    bad = denom == 0.0
    frac = np.where(bad, 0.5, acc / np.where(bad, 1.0, denom))
    n1 = counts * frac
    n2 = counts - n1
    flagged = tuple(int(i) - 1 for i in np.flatnonzero(bad))
    h1 = Histogram(total.edges, n1[1:-1], float(n1[0]), float(n1[-1]))
    h2 = Histogram(total.edges, n2[1:-1], float(n2[0]), float(n2[-1]))
    return SplitResult(h1, h2, flagged)
