"""Grid evaluation of analytic and Monte Carlo quantities, and figure tables.

A sweep is the Cartesian product of its axes (first axis varies slowest).
Every cell is either a number or the sentinel ``DEGENERATE:<kind>``; NaN and
inf never reach the CSV.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from diffamp import __version__, analytic as an
from diffamp.analytic import MeterConfig, PpsConfig
from diffamp.errors import ConfigError, DegenerateError
from diffamp.estimators import estimate_bdsa, estimate_dsa
from diffamp.sampler import merge_batches, sample_batch

AXIS_PARAMS = ("B", "theta", "g", "beta_bias", "N")
FIXED_ONLY = ("sigma",)
SENTINEL = "DEGENERATE:{}"
CLIP_FLAG = "clipped"

# figure grids
THETA_LINE = np.linspace(0.0, math.pi, 201)
B_SURFACE = np.linspace(0.0, 1.0, 101)
THETA_SURFACE = np.linspace(0.0, math.pi, 101)
G_SURFACE = np.logspace(-3.0, 0.0, 101)
FIG1_B = (0.2, 0.5, 0.8)
FIGURE_CLIP = 1e3


@dataclass
class Point:
    B: float
    theta: float
    g: float | None = None
    beta_bias: float | None = None
    N: int | None = None
    sigma: float = 1.0
    mc_overlay: tuple | None = None

    @property
    def pps(self) -> PpsConfig:
        return PpsConfig.from_B(self.B, self.theta)

    @property
    def meter(self) -> MeterConfig:
        return MeterConfig.from_g(self.g, self.sigma)

    @property
    def unit_meter(self) -> MeterConfig:
        return MeterConfig(d=1.0)


def _mc_batch(p: Point):
    cached = p.__dict__.get("_batch")
    if cached is not None:
        return cached
    n, seeds = p.mc_overlay
    pps, meter = p.pps, p.meter
    batch = None
    for s in seeds:
        b = sample_batch(pps, meter, n, s)
        batch = b if batch is None else merge_batches(batch, b)
    p.__dict__["_batch"] = batch
    return batch


def _var_over_d2(p: Point, index):
    if p.g == 0.0:
        raise DegenerateError("g = 0 means d = 0", kind="zero_shift")
    return 1.0 / (4.0 * p.g) + an.channel_variance_excess(p.pps, index)


_BT = frozenset({"B", "theta"})
_BTG = _BT | {"g"}
_BTGN = _BTG | {"N"}
_BTb = _BT | {"beta_bias"}
_BTGb = _BTG | {"beta_bias"}
_BTGbN = _BTGb | {"N"}
_MC = _BTG | {"mc"}

QUANTITIES = {
    "p_f": (_BT, lambda p: an.postselection_probs(p.pps)[0]),
    "p_fbar": (_BT, lambda p: an.postselection_probs(p.pps)[1]),
    "eta": (_BT, lambda p: an.acceptance_ratio(p.pps)),
    "beta1": (_BT, lambda p: an.ratio_factors(p.pps)[0]),
    "beta2": (_BT, lambda p: an.ratio_factors(p.pps)[1]),
    "x_f": (_BTG, lambda p: an.psa_psr_means(p.pps, p.meter)[0]),
    "x_fbar": (_BTG, lambda p: an.psa_psr_means(p.pps, p.meter)[1]),
    "x_f_over_d": (_BT, lambda p: an.psa_psr_means(p.pps, p.unit_meter)[0]),
    "x_fbar_over_d": (_BT, lambda p: an.psa_psr_means(p.pps, p.unit_meter)[1]),
    "xbar": (_BTG, lambda p: an.dsa_signal(p.pps, p.meter)),
    "xbar_over_d": (_BT, lambda p: an.dsa_signal(p.pps, p.unit_meter)),
    "var1": (_BTG, lambda p: an.subensemble_variances(p.pps, p.meter)[0]),
    "var2": (_BTG, lambda p: an.subensemble_variances(p.pps, p.meter)[1]),
    "var1_over_d2": (_BTG, lambda p: _var_over_d2(p, 0)),
    "var2_over_d2": (_BTG, lambda p: _var_over_d2(p, 1)),
    "dsa_variance": (_BTGN, lambda p: an.dsa_variance(p.pps, p.meter, p.N)),
    "snr": (_BTGN, lambda p: an.dsa_snr(p.pps, p.meter, p.N).snr),
    "reduced_snr": (_BTG, lambda p: an.dsa_snr(p.pps, p.meter, 1).reduced_snr),
    "reduced_snr_from_moments": (_BTG, lambda p: an.dsa_snr_from_moments(p.pps, p.meter, 1).reduced_snr),
    "bdsa_xbar": (_BTGb, lambda p: an.bdsa_signal(p.pps, p.meter, p.beta_bias).exact),
    "bdsa_xbar_approx": (_BTGb, lambda p: an.bdsa_signal(p.pps, p.meter, p.beta_bias).approx),
    "bdsa_xbar_over_d": (_BTb, lambda p: an.bdsa_signal(p.pps, p.unit_meter, p.beta_bias).exact),
    "abs_bdsa_xbar_over_d": (_BTb, lambda p: abs(an.bdsa_signal(p.pps, p.unit_meter, p.beta_bias).exact)),
    "bdsa_variance": (_BTGbN, lambda p: an.bdsa_variance_snr(p.pps, p.meter, p.beta_bias, p.N).variance),
    "bdsa_variance_approx": (
        _BTGbN,
        lambda p: an.bdsa_variance_snr(p.pps, p.meter, p.beta_bias, p.N).variance_approx,
    ),
    "bdsa_snr": (_BTGbN, lambda p: an.bdsa_variance_snr(p.pps, p.meter, p.beta_bias, p.N).snr),
    "bdsa_snr_approx": (_BTGbN, lambda p: an.bdsa_variance_snr(p.pps, p.meter, p.beta_bias, p.N).snr_approx),
    "bdsa_reduced_snr": (_BTGb, lambda p: an.bdsa_variance_snr(p.pps, p.meter, p.beta_bias, 1).reduced_snr),
    "bdsa_reduced_snr_approx": (
        _BTGb,
        lambda p: an.bdsa_variance_snr(p.pps, p.meter, p.beta_bias, 1).reduced_snr_approx,
    ),
    "mc_n1": (_MC, lambda p: _mc_batch(p).n1),
    "mc_n2": (_MC, lambda p: _mc_batch(p).n2),
    "mc_xbar": (_MC, lambda p: estimate_dsa(_mc_batch(p)).xbar),
    "mc_variance": (_MC, lambda p: estimate_dsa(_mc_batch(p)).variance),
    "mc_d_hat": (_MC, lambda p: estimate_dsa(_mc_batch(p)).d_hat),
    "mc_bdsa_xbar": (_MC | {"beta_bias"}, lambda p: estimate_bdsa(_mc_batch(p), None, p.beta_bias).xbar),
}


@dataclass
class SweepSpec:
    axes: list
    fixed: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    mc_overlay: tuple | None = None
    clip: float | None = None

    def validate(self):
        names = [name for name, _ in self.axes]
        for name, values in self.axes:
            if name not in AXIS_PARAMS:
                raise ConfigError(f"unknown axis parameter {name!r}", key=name)
            if len(values) == 0:
                raise ConfigError(f"axis {name!r} is empty", key=name)
        if len(set(names)) != len(names):
            raise ConfigError("axis names repeat", key="axes")
        for key in self.fixed:
            if key not in AXIS_PARAMS + FIXED_ONLY:
                raise ConfigError(f"unknown fixed parameter {key!r}", key=key)
            if key in names:
                raise ConfigError(f"{key!r} is both an axis and a fixed parameter", key=key)
        if not self.outputs:
            raise ConfigError("no output quantities requested", key="outputs")
        have = set(names) | set(self.fixed)
        if self.mc_overlay is not None:
            have.add("mc")
        for q in self.outputs:
            if q not in QUANTITIES:
                raise ConfigError(f"unknown quantity {q!r}", key=q)
            missing = QUANTITIES[q][0] - have
            if missing:
                raise ConfigError(f"quantity {q!r} needs {sorted(missing)}", key=q)

    def to_dict(self) -> dict:
        return {
            "axes": [[name, [_plain(v) for v in values]] for name, values in self.axes],
            "fixed": {k: _plain(v) for k, v in self.fixed.items()},
            "outputs": list(self.outputs),
            "mc_overlay": None if self.mc_overlay is None else [self.mc_overlay[0], list(self.mc_overlay[1])],
            "clip": self.clip,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        axes = []
        for entry in data["axes"]:
            if isinstance(entry, dict):
                name = entry["name"]
                if "values" in entry:
                    values = list(entry["values"])
                elif "linspace" in entry:
                    lo, hi, num = entry["linspace"]
                    values = np.linspace(lo, hi, int(num)).tolist()
                elif "logspace" in entry:
                    lo, hi, num = entry["logspace"]
                    values = np.logspace(lo, hi, int(num)).tolist()
                else:
                    raise ConfigError(f"axis {name!r} needs values, linspace or logspace", key=name)
            else:
                name, values = entry
            axes.append((name, list(values)))
        mc = data.get("mc_overlay")
        if mc is not None:
            if isinstance(mc, dict):
                mc = (int(mc["N"]), tuple(int(s) for s in mc["seeds"]))
            else:
                mc = (int(mc[0]), tuple(int(s) for s in mc[1]))
        return cls(axes, dict(data.get("fixed", {})), list(data["outputs"]), mc, data.get("clip"))


def _plain(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


@dataclass
class SweepTable:
    columns: list
    rows: list
    metadata: dict = field(default_factory=dict)

    def column(self, name):
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def numeric(self, name) -> np.ndarray:
        """Column as floats with sentinels mapped to NaN (for analysis, never for export)."""
        return np.array([v if not isinstance(v, str) else math.nan for v in self.column(name)], dtype=float)

    def to_csv(self) -> str:
        lines = [f"# {k}: {v}" for k, v in self.metadata.items()]
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_csv(text: str) -> SweepTable:
    """Parse a sweep CSV back into a table (numbers as float, sentinels as str)."""
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(": ")
            meta[key] = value
        elif line:
            body.append(line.split(","))
    header, rows = body[0], []
    for raw in body[1:]:
        rows.append([v if v.startswith("DEGENERATE:") else float(v) for v in raw])
    return SweepTable(header, rows, meta)


def _evaluate(name, point):
    try:
        value = QUANTITIES[name][1](point)
    except DegenerateError as exc:
        return SENTINEL.format(exc.kind)
    if value is None:
        # approximate forms are undefined with an empty sub-ensemble
        return SENTINEL.format("postselection")
    if not math.isfinite(value):
        return SENTINEL.format("nonfinite")
    return value


def run_sweep(spec: SweepSpec) -> SweepTable:
    spec.validate()
    names = [name for name, _ in spec.axes]
    columns = names + list(spec.outputs)
    if spec.clip is not None:
        columns.append(CLIP_FLAG)
    rows = []
    for combo in itertools.product(*(values for _, values in spec.axes)):
        params = dict(spec.fixed)
        params.update(zip(names, combo))
        point = Point(mc_overlay=spec.mc_overlay, **{k: _plain(v) for k, v in params.items()})
        values = [_evaluate(q, point) for q in spec.outputs]
        if spec.clip is not None:
            clipped = False
            for i, v in enumerate(values):
                if not isinstance(v, str) and abs(v) > spec.clip:
                    values[i] = math.copysign(spec.clip, v)
                    clipped = True
            values.append(int(clipped))
        rows.append([_plain(v) for v in combo] + values)
    return SweepTable(columns, rows, {"artifact_version": __version__, "spec": json.dumps(spec.to_dict())})


def figure_specs(fig: int) -> dict:
    """Panel name -> SweepSpec for each reproduced figure."""
    surface = [("B", B_SURFACE.tolist()), ("theta", THETA_SURFACE.tolist())]
    if fig == 1:
        line = [("B", list(FIG1_B)), ("theta", THETA_LINE.tolist())]
        return {
            "fig1a": SweepSpec(line, {}, ["beta1", "beta2"]),
            "fig1b": SweepSpec(line, {}, ["x_f_over_d", "x_fbar_over_d"]),
        }
    if fig == 2:
        # sigma^2 / d^2 = 2.5 is g = 0.1
        return {
            "fig2a": SweepSpec(surface, {"g": 0.1}, ["var1_over_d2"]),
            "fig2b": SweepSpec(surface, {"g": 0.1}, ["var2_over_d2"]),
        }
    if fig == 3:
        return {
            "fig3a": SweepSpec(surface, {"g": 0.1}, ["reduced_snr"]),
            "fig3b": SweepSpec([("g", G_SURFACE.tolist()), ("theta", THETA_SURFACE.tolist())], {"B": 0.2},
                               ["reduced_snr"]),
        }
    if fig == 4:
        return {"fig4": SweepSpec(surface, {"beta_bias": 2.0}, ["abs_bdsa_xbar_over_d"], clip=FIGURE_CLIP)}
    if fig == 5:
        outputs = ["bdsa_reduced_snr", "bdsa_reduced_snr_approx"]
        return {
            "fig5a": SweepSpec(surface, {"beta_bias": 0.4, "g": 0.1}, outputs, clip=FIGURE_CLIP),
            "fig5b": SweepSpec(surface, {"beta_bias": 2.0, "g": 0.1}, outputs, clip=FIGURE_CLIP),
        }
    raise ConfigError(f"figure id must be 1..5, got {fig!r}", key="figure")


def figure_tables(fig: int) -> dict:
    tables = {}
    for panel, spec in figure_specs(fig).items():
        table = run_sweep(spec)
        table.metadata = {"figure": panel, **table.metadata}
        if fig == 1:
            table.metadata["B_values"] = json.dumps(list(FIG1_B))
        tables[panel] = table
    return tables


def figure(fig: int, out_dir) -> list:
    """Write the CSV tables of figure ``fig`` into ``out_dir``; return the paths."""
    out_dir = Path(out_dir)
    return [table.write(out_dir / f"{panel}.csv") for panel, table in figure_tables(fig).items()]
