"""Closed-form layer of the DSA/BDSA schemes.

Conventions: the spin is pre-selected in the classical mixture
``alpha2 |up><up| + beta2 |down><down|`` and post-selected with the mixture
``a2 |up><up| + b2 |down><down|``, ``a2 = cos^2(theta/2)``. The meter is a
Gaussian of width ``sigma`` shifted to ``+d`` (up) or ``-d`` (down).
Everything below is expressed through ``B = alpha2 - beta2`` and
``y = cos(theta)``.

All functions are pure. Structural singularities raise
:class:`~diffamp.errors.DegenerateError`; they never return inf or nan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from diffamp.errors import ConfigError, DegenerateError

# |cos(theta)| below this is theta == pi/2 to double precision.
_Y_SNAP = 8 * np.finfo(float).eps
_NORM_TOL = 1e-9
# quantum weak value: |<f|i>| at or below this is destructive interference
_OVERLAP_TOL = 1e-12


def _check_prob(value, key):
    if not (isinstance(value, (int, float, np.floating, np.integer)) and math.isfinite(value)):
        raise ConfigError(f"{key} must be a finite number, got {value!r}", key=key)
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{key} must lie in [0, 1], got {value!r}", key=key)


@dataclass(frozen=True)
class PpsConfig:
    """Pre- and post-selection state.

    Build with :meth:`from_B` or :meth:`from_alpha2`; the direct
    constructor expects a mutually consistent set of fields.
    """

    alpha2: float
    beta2: float
    B: float
    theta: float
    a2: float
    b2: float
    y: float

    @classmethod
    def from_alpha2(cls, alpha2: float, theta: float) -> "PpsConfig":
        _check_prob(alpha2, "alpha2")
        alpha2 = float(alpha2)
        beta2 = 1.0 - alpha2
        return cls._build(alpha2, beta2, alpha2 - beta2, theta)

    @classmethod
    def from_B(cls, B: float, theta: float) -> "PpsConfig":
        if not (isinstance(B, (int, float, np.floating, np.integer)) and math.isfinite(B)):
            raise ConfigError(f"B must be a finite number, got {B!r}", key="B")
        if not -1.0 <= B <= 1.0:
            raise ConfigError(f"B must lie in [-1, 1], got {B!r}", key="B")
        B = float(B)
        alpha2 = (1.0 + B) / 2.0
        return cls._build(alpha2, 1.0 - alpha2, B, theta)

    @classmethod
    def _build(cls, alpha2, beta2, B, theta):
        if not (isinstance(theta, (int, float, np.floating, np.integer)) and math.isfinite(theta)):
            raise ConfigError(f"theta must be a finite number, got {theta!r}", key="theta")
        theta = float(theta)
        if not 0.0 <= theta <= math.pi:
            raise ConfigError(f"theta must lie in [0, pi], got {theta!r}", key="theta")
        y = math.cos(theta)
        if abs(y) <= _Y_SNAP:
            y = 0.0
        a2 = (1.0 + y) / 2.0
        b2 = (1.0 - y) / 2.0
        return cls(alpha2=alpha2, beta2=beta2, B=B, theta=theta, a2=a2, b2=b2, y=y)

    @property
    def sin2(self) -> float:
        """sin^2(theta), computed from y so that it vanishes exactly at 0 and pi."""
        return 1.0 - self.y * self.y


@dataclass(frozen=True)
class MeterConfig:
    """Gaussian meter: shift ``d`` (the estimated parameter) and width ``sigma``."""

    d: float
    sigma: float = 1.0
    g: float = field(init=False)

    def __post_init__(self):
        if not math.isfinite(self.d):
            raise ConfigError(f"d must be finite, got {self.d!r}", key="d")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"sigma must be > 0, got {self.sigma!r}", key="sigma")
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "g", (self.d / (2.0 * self.sigma)) ** 2)

    @classmethod
    def from_g(cls, g: float, sigma: float = 1.0) -> "MeterConfig":
        """Meter with strength ``g = (d / 2 sigma)^2`` and positive ``d``."""
        if not (math.isfinite(g) and g >= 0):
            raise ConfigError(f"g must be >= 0, got {g!r}", key="g")
        return cls(d=2.0 * sigma * math.sqrt(g), sigma=sigma)

    def conventional_snr(self, N: int) -> float:
        """SNR of a conventional measurement without post-selection, sqrt(N)|d|/sigma."""
        return math.sqrt(N) * abs(self.d) / self.sigma


@dataclass(frozen=True)
class MixtureDensity:
    """Weighted sum of Gaussians ``sum_k w_k N(x; c_k, s_k)``."""

    components: tuple
    normalized: bool = False

    def __post_init__(self):
        comps = tuple((float(w), float(c), float(s)) for w, c, s in self.components)
        for w, _, s in comps:
            if w < 0:
                raise ConfigError(f"mixture weight must be >= 0, got {w}")
            if s <= 0:
                raise ConfigError(f"mixture width must be > 0, got {s}")
        if self.normalized and abs(sum(w for w, _, _ in comps) - 1.0) > 1e-12:
            raise ConfigError("normalized mixture weights must sum to 1")
        object.__setattr__(self, "components", comps)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for w, c, s in self.components:
            out = out + w * np.exp(-0.5 * ((x - c) / s) ** 2) / (s * math.sqrt(2 * math.pi))
        return out

    def mass(self) -> float:
        return math.fsum(w for w, _, _ in self.components)

    def mean(self) -> float:
        m = self.mass()
        if m == 0:
            raise DegenerateError("mixture has zero mass", kind="postselection")
        return math.fsum(w * c for w, c, _ in self.components) / m

    def variance(self) -> float:
        m = self.mass()
        mu = self.mean()
        return math.fsum(w * (s * s + (c - mu) ** 2) for w, c, s in self.components) / m

    def normalize(self) -> "MixtureDensity":
        m = self.mass()
        if m == 0:
            raise DegenerateError("mixture has zero mass", kind="postselection")
        return MixtureDensity(tuple((w / m, c, s) for w, c, s in self.components), normalized=True)

    def support(self, width: float = 10.0) -> tuple[float, float]:
        """Interval extending ``width`` widths beyond the extreme centers."""
        lo = min(c - width * s for _, c, s in self.components)
        hi = max(c + width * s for _, c, s in self.components)
        return lo, hi


def psa_density(pps: PpsConfig, meter: MeterConfig) -> MixtureDensity:
    """Unnormalized distribution of post-selection accepted records."""
    return MixtureDensity(
        ((pps.alpha2 * pps.a2, meter.d, meter.sigma), (pps.beta2 * pps.b2, -meter.d, meter.sigma))
    )


def psr_density(pps: PpsConfig, meter: MeterConfig) -> MixtureDensity:
    """Unnormalized distribution of post-selection rejected records."""
    return MixtureDensity(
        ((pps.alpha2 * pps.b2, meter.d, meter.sigma), (pps.beta2 * pps.a2, -meter.d, meter.sigma))
    )


class Pair(NamedTuple):
    first: float
    second: float


def postselection_probs(pps: PpsConfig) -> Pair:
    """Acceptance and rejection probabilities ``(1 +- B y) / 2``."""
    u = pps.B * pps.y
    return Pair((1.0 + u) / 2.0, (1.0 - u) / 2.0)


def _require_both_channels(pps: PpsConfig):
    p_f, p_fbar = postselection_probs(pps)
    if p_f == 0.0 or p_fbar == 0.0:
        which = "accepted" if p_f == 0.0 else "rejected"
        raise DegenerateError(
            f"{which} sub-ensemble has zero probability (B*y = {pps.B * pps.y:+g})",
            kind="postselection",
        )
    return p_f, p_fbar


def acceptance_ratio(pps: PpsConfig) -> float:
    """``eta = p_f / p_fbar``, the bias at which the biased signal is singular."""
    p_f, p_fbar = _require_both_channels(pps)
    return p_f / p_fbar


def _F(B, y, d):
    return (B + y) * d / (1.0 + B * y)


def psa_psr_means(pps: PpsConfig, meter: MeterConfig) -> Pair:
    """Conditional means ``<x>_f = F(y)`` and ``<x>_fbar = F(-y)``."""
    _require_both_channels(pps)
    return Pair(_F(pps.B, pps.y, meter.d), _F(pps.B, -pps.y, meter.d))


def difference_shape(pps: PpsConfig) -> float:
    """``(F(y) - F(-y)) / d = 2y(1 - B^2) / (1 - B^2 y^2)``."""
    _require_both_channels(pps)
    B, y = pps.B, pps.y
    return 2.0 * y * (1.0 - B * B) / (1.0 - B * B * y * y)


def _check_balance(pps: PpsConfig):
    if pps.B * pps.y == 0.0:
        raise DegenerateError(
            f"B*y = 0 (B={pps.B:g}, y={pps.y:g}): accepted and rejected counts balance "
            "in expectation, ratio factors diverge",
            kind="balance",
        )


def ratio_factors(pps: PpsConfig) -> Pair:
    """Expected DCSV weights ``beta1 = (1+By)/(2By)`` and ``beta2 = beta1 - 1``."""
    _check_balance(pps)
    u = pps.B * pps.y
    beta1 = (1.0 + u) / (2.0 * u)
    if not math.isfinite(beta1):
        raise DegenerateError(f"B*y = {u:g} is too close to zero, ratio factors overflow", kind="balance")
    return Pair(beta1, (1.0 - u) / (2.0 * u))


def dsa_signal(pps: PpsConfig, meter: MeterConfig) -> float:
    """Expected DSA difference signal, ``d / B`` for every admissible theta."""
    if pps.B == 0.0:
        raise DegenerateError("B = 0: pre-selection is balanced, d/B undefined", kind="preselection")
    _check_balance(pps)
    return meter.d / pps.B


def dsa_signal_from_moments(pps: PpsConfig, meter: MeterConfig) -> float:
    """The same signal composed as ``beta1 <x>_f - beta2 <x>_fbar``.

    Kept as an independent route to :func:`dsa_signal`; it loses accuracy
    as ``B*y`` approaches zero.
    """
    beta1, beta2 = ratio_factors(pps)
    x_f, x_fbar = psa_psr_means(pps, meter)
    return beta1 * x_f - beta2 * x_fbar


def variance_excess(pps: PpsConfig) -> Pair:
    """Shape terms ``(1-B^2) sin^2(theta) / (1 +- B cos(theta))^2``.

    The sub-ensemble variances are ``sigma^2 + d^2 * excess``.
    """
    _require_both_channels(pps)
    return Pair(channel_variance_excess(pps, 0), channel_variance_excess(pps, 1))


def channel_variance_excess(pps: PpsConfig, channel: int) -> float:
    """Shape term of one sub-ensemble (0 accepted, 1 rejected); only that channel must be populated."""
    if postselection_probs(pps)[channel] == 0.0:
        name = ("accepted", "rejected")[channel]
        raise DegenerateError(f"{name} sub-ensemble is empty, its variance is undefined", kind="postselection")
    sign = 1.0 if channel == 0 else -1.0
    return (1.0 - pps.B * pps.B) * pps.sin2 / (1.0 + sign * pps.B * pps.y) ** 2


def subensemble_variances(pps: PpsConfig, meter: MeterConfig) -> Pair:
    e1, e2 = variance_excess(pps)
    s2 = meter.sigma**2
    d2 = meter.d**2
    return Pair(s2 + d2 * e1, s2 + d2 * e2)


def _check_N(N):
    if isinstance(N, bool) or not isinstance(N, (int, np.integer)) or N < 1:
        raise ConfigError(f"N must be an integer >= 1, got {N!r}", key="N")


def dsa_variance(pps: PpsConfig, meter: MeterConfig, N: int) -> float:
    """``beta1^2 s1^2 / N1 + beta2^2 s2^2 / N2`` with ``N1, N2`` at their expectations."""
    _check_N(N)
    beta1, beta2 = ratio_factors(pps)
    p_f, p_fbar = _require_both_channels(pps)
    var1, var2 = subensemble_variances(pps, meter)
    return beta1**2 * var1 / (N * p_f) + beta2**2 * var2 / (N * p_fbar)


class Snr(NamedTuple):
    snr: float
    reduced_snr: float


def dsa_snr(pps: PpsConfig, meter: MeterConfig, N: int) -> Snr:
    """Closed-form DSA signal-to-noise ratio and its ratio to ``sqrt(N)|d|/sigma``.

    Zero at theta = pi/2. Defined at B = 0 as the limit of the ratio.
    """
    _check_N(N)
    if meter.d == 0.0:
        raise DegenerateError("d = 0: the reduced SNR is undefined", kind="zero_shift")
    _require_both_channels(pps)
    B, y, g = pps.B, pps.y, meter.g
    q = 1.0 - B * B * y * y
    snr = 2.0 * math.sqrt(N) * abs(y) * math.sqrt(g * q / (4.0 * g * (1.0 - B * B) * pps.sin2 + q))
    reduced = abs(y) * math.sqrt(q / (4.0 * g * (1.0 - B * B) * pps.sin2 + q))
    return Snr(snr, reduced)


def dsa_snr_from_moments(pps: PpsConfig, meter: MeterConfig, N: int) -> Snr:
    """SNR as ``|signal| / sqrt(variance)``, the route the closed form summarizes."""
    snr = abs(dsa_signal(pps, meter)) / math.sqrt(dsa_variance(pps, meter, N))
    return Snr(snr, snr / meter.conventional_snr(N))


def weak_value(pre: Sequence[float], post: Sequence[float], mode: str = "classical") -> float:
    """``M1 / M2`` for a pre/post-selected spin.

    In ``quantum`` mode ``pre = (alpha, beta)`` and ``post = (a, b)`` are real
    amplitudes and ``M2 = (alpha a + beta b)^2``. In ``classical`` mode they
    are weights ``(alpha2, beta2)``, ``(a2, b2)`` and
    ``M2 = alpha2 a2 + beta2 b2``, so the result is a convex combination of
    +1 and -1.
    """
    (p, q), (r, s) = pre, post
    if mode == "quantum":
        for key, (u, v) in (("pre", (p, q)), ("post", (r, s))):
            if abs(u * u + v * v - 1.0) > _NORM_TOL:
                raise ConfigError(f"{key} amplitudes must be normalized", key=key)
        overlap = p * r + q * s
        if abs(overlap) <= _OVERLAP_TOL:
            raise DegenerateError(
                "<f|i> = 0: destructive interference, weak value is singular", kind="weak_value"
            )
        return (p * p * r * r - q * q * s * s) / (overlap * overlap)
    if mode == "classical":
        for key, value in (("alpha2", p), ("beta2", q), ("a2", r), ("b2", s)):
            _check_prob(value, key)
        for key, (u, v) in (("pre", (p, q)), ("post", (r, s))):
            if abs(u + v - 1.0) > _NORM_TOL:
                raise ConfigError(f"{key} weights must sum to 1", key=key)
        m2 = p * r + q * s
        if m2 == 0.0:
            raise DegenerateError("post-selection never accepts (M2 = 0)", kind="postselection")
        return (p * r - q * s) / m2
    raise ConfigError(f"unknown weak-value mode {mode!r}", key="mode")


def _check_bias(beta_bias):
    if not (isinstance(beta_bias, (int, float, np.floating, np.integer)) and math.isfinite(beta_bias)):
        raise ConfigError(f"beta_bias must be finite, got {beta_bias!r}", key="beta_bias")
    return float(beta_bias)


def biased_probability(pps: PpsConfig, beta_bias: float) -> float:
    """``p_beta = p_f - beta * p_fbar``; the biased signal diverges where it vanishes."""
    p_f, p_fbar = postselection_probs(pps)
    return p_f - beta_bias * p_fbar


def _require_bias(pps, beta_bias):
    """Validate the bias weight; one empty channel is allowed as long as ``p_beta != 0``."""
    beta_bias = _check_bias(beta_bias)
    p_f, p_fbar = postselection_probs(pps)
    p_beta = biased_probability(pps, beta_bias)
    if p_beta == 0.0:
        eta = "inf" if p_fbar == 0.0 else f"{p_f / p_fbar:g}"
        raise DegenerateError(
            f"beta_bias = eta = {eta}: biased difference denominator vanishes",
            kind="bias",
        )
    return beta_bias, p_f, p_fbar, p_beta


def _weighted_variances(pps: PpsConfig, meter: MeterConfig) -> Pair:
    """Sub-ensemble variances, with an empty channel's (weightless) variance set to 0."""
    p = postselection_probs(pps)
    return Pair(*(meter.sigma**2 + meter.d**2 * channel_variance_excess(pps, c) if p[c] > 0.0 else 0.0
                  for c in (0, 1)))


class BdsaSignal(NamedTuple):
    """``approx`` is None when a sub-ensemble is empty (the near-resonance form divides by it)."""

    exact: float
    approx: float | None


def bdsa_signal(pps: PpsConfig, meter: MeterConfig, beta_bias: float) -> BdsaSignal:
    """Biased difference signal ``(eta <x>_f - beta <x>_fbar) / (eta - beta)``.

    ``exact`` is evaluated in the equivalent probability-weighted form
    ``d [(B+y) - beta (B-y)] / [(1+By) - beta (1-By)]`` which avoids the
    cancellation in ``eta - beta``. ``approx`` is the near-resonance form
    ``eta / (eta - beta) * (F(y) - F(-y))``.
    """
    beta_bias, p_f, p_fbar, p_beta = _require_bias(pps, beta_bias)
    B, y, d = pps.B, pps.y, meter.d
    exact = d * ((B + y) - beta_bias * (B - y)) / ((1.0 + B * y) - beta_bias * (1.0 - B * y))
    approx = None
    if p_f > 0.0 and p_fbar > 0.0:
        approx = p_f / p_beta * difference_shape(pps) * d
    return BdsaSignal(exact, approx)


def bdsa_slope(pps: PpsConfig, beta_bias: float) -> float:
    """``d(xbar_beta)/dd``; the exact biased signal is this times ``d``."""
    return bdsa_signal(pps, MeterConfig(d=1.0), beta_bias).exact


class BdsaPrecision(NamedTuple):
    """Variance and SNR of the biased estimator.

    ``variance``/``snr`` use the exact expected-count form;
    ``variance_approx``/``snr_approx`` use the beta ~ eta simplification
    and are None when a sub-ensemble is empty.
    """

    variance: float
    variance_approx: float | None
    snr: float
    snr_approx: float | None
    reduced_snr: float
    reduced_snr_approx: float | None


def bdsa_variance_snr(pps: PpsConfig, meter: MeterConfig, beta_bias: float, N: int) -> BdsaPrecision:
    _check_N(N)
    if meter.d == 0.0:
        raise DegenerateError("d = 0: the reduced SNR is undefined", kind="zero_shift")
    beta_bias, p_f, p_fbar, p_beta = _require_bias(pps, beta_bias)
    var1, var2 = _weighted_variances(pps, meter)
    variance = (p_f * var1 + beta_bias**2 * p_fbar * var2) / (N * p_beta**2)
    signal = bdsa_signal(pps, meter, beta_bias)
    snr = abs(signal.exact) / math.sqrt(variance)
    ref = meter.conventional_snr(N)
    if p_f == 0.0 or p_fbar == 0.0:
        return BdsaPrecision(variance, None, snr, None, snr / ref, None)
    eta = p_f / p_fbar
    variance_approx = p_f * (var1 + eta * var2) / (N * p_beta**2)
    snr_approx = math.sqrt(N * p_f) * abs(difference_shape(pps) * meter.d) / math.sqrt(var1 + eta * var2)
    return BdsaPrecision(variance, variance_approx, snr, snr_approx, snr / ref, snr_approx / ref)


def realized_count_variance(pps: PpsConfig, meter: MeterConfig, N: int, beta_bias: float = 1.0) -> float:
    """Variance of the realized-count estimator across independent runs, to leading order in 1/N.

    :func:`dsa_variance` holds ``N1`` and ``N2`` fixed. When the counts
    themselves fluctuate (binomially), the estimator is a ratio of sums over
    particle weights ``w = 1`` (accepted) or ``-beta`` (rejected), and the
    delta method gives ``E[w^2 (x - R)^2] / (N p_beta^2)`` with ``R`` the
    expected signal. The extra terms ``(<x> - R)^2`` vanish only as d -> 0.
    """
    _check_N(N)
    beta_bias, p_f, p_fbar, p_beta = _require_bias(pps, beta_bias)
    var1, var2 = subensemble_variances(pps, meter)
    x_f, x_fbar = psa_psr_means(pps, meter)
    R = bdsa_signal(pps, meter, beta_bias).exact
    spread = p_f * (var1 + (x_f - R) ** 2) + beta_bias**2 * p_fbar * (var2 + (x_fbar - R) ** 2)
    return spread / (N * p_beta**2)
