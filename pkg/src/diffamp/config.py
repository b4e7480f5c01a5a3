"""Run configuration: a flat TOML document of ``key = value`` pairs.

Keys and defaults::

    alpha2 | B        pre-selection (one of them, or both if consistent)
    theta             post-selection angle in [0, pi]
    d | g             meter shift, or strength g = (d / 2 sigma)^2
    sigma = 1.0
    N = 100000        particles per batch
    seed = 42
    M = 100           replicates
    histograms = false
    offset = 0.0      common misalignment added to every reading
    background = 0    additive counts per channel
    background_window = [lo, hi]
    beta_bias         bias weight for the biased estimator (optional)
    out               output directory (optional)
    formats = ["csv"]
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from diffamp.analytic import MeterConfig, PpsConfig
from diffamp.errors import ConfigError
from diffamp.sampler import SEED_MODULUS, Imperfection

CONSISTENCY_TOL = 1e-12
FORMATS = ("csv",)


@dataclass(frozen=True)
class RunConfig:
    theta: float
    alpha2: float | None = None
    B: float | None = None
    d: float | None = None
    g: float | None = None
    sigma: float = 1.0
    N: int = 100_000
    seed: int = 42
    M: int = 100
    histograms: bool = False
    offset: float = 0.0
    background: int = 0
    background_window: tuple | None = None
    beta_bias: float | None = None
    out: str | None = None
    formats: tuple = field(default=("csv",))

    def pps(self) -> PpsConfig:
        if self.B is not None:
            return PpsConfig.from_B(self.B, self.theta)
        return PpsConfig.from_alpha2(self.alpha2, self.theta)

    def meter(self) -> MeterConfig:
        if self.d is not None:
            return MeterConfig(d=self.d, sigma=self.sigma)
        return MeterConfig.from_g(self.g, self.sigma)

    def imperfection(self) -> Imperfection:
        return Imperfection(self.offset, self.background, self.background_window)

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if v is None:
                continue
            out[k] = list(v) if isinstance(v, tuple) else v
        return out


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_FLOAT_KEYS = ("theta", "alpha2", "B", "d", "g", "sigma", "offset", "beta_bias")
_INT_KEYS = ("N", "M", "background")


def _number(key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}", key=key)
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{key} must be finite", key=key)
    return value


def _integer(key, value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}", key=key)
    return value


def from_mapping(data: dict) -> RunConfig:
    """Validate a parsed mapping and apply defaults."""
    unknown = sorted(set(data) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown configuration key {unknown[0]!r}", key=unknown[0])
    kw = {}
    for key, value in data.items():
        if key in _FLOAT_KEYS:
            kw[key] = _number(key, value)
        elif key in _INT_KEYS:
            kw[key] = _integer(key, value)
        elif key == "seed":
            # TOML integers are signed 64-bit; larger seeds may be given as strings
            if isinstance(value, str) and value.isdigit():
                value = int(value)
            kw[key] = _integer(key, value)
        elif key == "histograms":
            if not isinstance(value, bool):
                raise ConfigError("histograms must be true or false", key=key)
            kw[key] = value
        elif key == "background_window":
            if not isinstance(value, list) or len(value) != 2:
                raise ConfigError("background_window must be [lo, hi]", key=key)
            kw[key] = tuple(_number(key, v) for v in value)
        elif key == "out":
            if not isinstance(value, str):
                raise ConfigError("out must be a string path", key=key)
            kw[key] = value
        elif key == "formats":
            if not isinstance(value, list) or any(v not in FORMATS for v in value):
                raise ConfigError(f"formats must be a list drawn from {list(FORMATS)}", key=key)
            kw[key] = tuple(value)

    if "theta" not in kw:
        raise ConfigError("missing required key 'theta'", key="theta")
    if "alpha2" not in kw and "B" not in kw:
        raise ConfigError("missing pre-selection: give 'B' or 'alpha2'", key="B")
    if "d" not in kw and "g" not in kw:
        raise ConfigError("missing meter shift: give 'd' or 'g'", key="d")

    cfg = RunConfig(**kw)
    _check_domain(cfg)
    return cfg


def _check_domain(cfg: RunConfig):
    if cfg.sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {cfg.sigma}", key="sigma")
    if not 0.0 <= cfg.theta <= math.pi:
        raise ConfigError(f"theta must lie in [0, pi], got {cfg.theta}", key="theta")
    if cfg.alpha2 is not None and not 0.0 <= cfg.alpha2 <= 1.0:
        raise ConfigError(f"alpha2 must lie in [0, 1], got {cfg.alpha2}", key="alpha2")
    if cfg.B is not None and not -1.0 <= cfg.B <= 1.0:
        raise ConfigError(f"B must lie in [-1, 1], got {cfg.B}", key="B")
    if cfg.alpha2 is not None and cfg.B is not None:
        if abs((2.0 * cfg.alpha2 - 1.0) - cfg.B) > CONSISTENCY_TOL:
            raise ConfigError(
                f"alpha2 = {cfg.alpha2} and B = {cfg.B} conflict (B must equal 2*alpha2 - 1)", key="B"
            )
    if cfg.g is not None and cfg.g < 0:
        raise ConfigError(f"g must be >= 0, got {cfg.g}", key="g")
    if cfg.d is not None and cfg.g is not None:
        if abs((cfg.d / (2.0 * cfg.sigma)) ** 2 - cfg.g) > CONSISTENCY_TOL * max(1.0, cfg.g):
            raise ConfigError(f"d = {cfg.d} and g = {cfg.g} conflict for sigma = {cfg.sigma}", key="g")
    if cfg.N < 1:
        raise ConfigError(f"N must be >= 1, got {cfg.N}", key="N")
    if cfg.M < 1:
        raise ConfigError(f"M must be >= 1, got {cfg.M}", key="M")
    if not 0 <= cfg.seed < SEED_MODULUS:
        raise ConfigError(f"seed must be in [0, 2**64), got {cfg.seed}", key="seed")
    if cfg.background < 0:
        raise ConfigError("background must be >= 0", key="background")
    if cfg.background_window is not None and not cfg.background_window[0] < cfg.background_window[1]:
        raise ConfigError("background_window must satisfy lo < hi", key="background_window")


def parse_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse configuration: {exc}", kind="parse") from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"configuration must be flat, found table {nested[0]!r}", key=nested[0])
    return from_mapping(data)


def render_config(cfg: RunConfig) -> str:
    data = cfg.to_dict()
    if data["seed"] >= 2**63:
        data["seed"] = str(data["seed"])
    return tomli_w.dumps(data)


def replace_config(cfg: RunConfig, **changes) -> RunConfig:
    data = cfg.to_dict()
    data.update({k: v for k, v in changes.items() if v is not None})
    return from_mapping(data)
