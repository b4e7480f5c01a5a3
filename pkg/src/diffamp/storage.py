"""On-disk formats: sample batches, histogram CSVs and run manifests.

A batch file is TOML holding the exact configuration, the sufficient
statistics and optional histogram blocks. Floats are written with shortest
round-trip precision so a reloaded batch compares equal to the original.
Seeds are stored as decimal strings because TOML integers stop at 2**63 - 1.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from diffamp import __version__
from diffamp.analytic import MeterConfig, PpsConfig
from diffamp.errors import DiffampError
from diffamp.sampler import Histogram, Imperfection, SampleBatch

BATCH_FORMAT = "diffamp-batch/1"
MANIFEST_NAME = "manifest.json"


class StorageError(DiffampError, OSError):
    """Unreadable or malformed input file."""

    kind = "io"


def _hist_block(h: Histogram) -> dict:
    return {
        "edges": [float(e) for e in h.edges],
        "counts": [int(c) for c in h.counts],
        "underflow": int(h.underflow),
        "overflow": int(h.overflow),
    }


def batch_to_text(batch: SampleBatch) -> str:
    p, m, imp = batch.pps, batch.meter, batch.imperfection
    doc = {
        "format": BATCH_FORMAT,
        "artifact_version": __version__,
        "pps": {k: getattr(p, k) for k in ("alpha2", "beta2", "B", "theta", "a2", "b2", "y")},
        "meter": {"d": m.d, "sigma": m.sigma},
        "imperfection": {"offset": imp.offset, "background": imp.background},
        "stats": {
            "seeds": [str(s) for s in batch.seeds],
            "n_total": batch.n_total,
            "n1": batch.n1,
            "n2": batch.n2,
            "sum1": batch.sum1,
            "sumsq1": batch.sumsq1,
            "sum2": batch.sum2,
            "sumsq2": batch.sumsq2,
            "bg_count": batch.bg_count,
            "bg_sum": batch.bg_sum,
            "bg_sumsq": batch.bg_sumsq,
        },
    }
    if imp.background_window is not None:
        doc["imperfection"]["background_window"] = list(imp.background_window)
    if batch.has_histograms:
        doc["hist1"] = _hist_block(batch.hist1)
        doc["hist2"] = _hist_block(batch.hist2)
    return tomli_w.dumps(doc)


def batch_from_text(text: str) -> SampleBatch:
    try:
        doc = tomllib.loads(text)
        if doc.get("format") != BATCH_FORMAT:
            raise StorageError(f"not a {BATCH_FORMAT} file")
        s = doc["stats"]
        imp = doc["imperfection"]
        window = imp.get("background_window")
        hists = [None, None]
        for i, key in enumerate(("hist1", "hist2")):
            if key in doc:
                b = doc[key]
                hists[i] = Histogram(
                    np.array(b["edges"], dtype=float),
                    np.array(b["counts"], dtype=np.int64),
                    b["underflow"],
                    b["overflow"],
                )
        return SampleBatch(
            pps=PpsConfig(**doc["pps"]),
            meter=MeterConfig(**doc["meter"]),
            imperfection=Imperfection(imp["offset"], imp["background"], None if window is None else tuple(window)),
            seeds=tuple(int(v) for v in s["seeds"]),
            n_total=s["n_total"],
            n1=s["n1"],
            n2=s["n2"],
            sum1=s["sum1"],
            sumsq1=s["sumsq1"],
            sum2=s["sum2"],
            sumsq2=s["sumsq2"],
            bg_count=s["bg_count"],
            bg_sum=s["bg_sum"],
            bg_sumsq=s["bg_sumsq"],
            hist1=hists[0],
            hist2=hists[1],
        )
    except (KeyError, TypeError, ValueError, tomllib.TOMLDecodeError) as exc:
        raise StorageError(f"malformed batch file: {exc}") from exc


def save_batch(batch: SampleBatch, path) -> Path:
    path = Path(path)
    path.write_text(batch_to_text(batch), encoding="utf-8")
    return path


def load_batch(path) -> SampleBatch:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read batch file {path}: {exc}") from exc
    return batch_from_text(text)


def histogram_to_csv(h: Histogram, comment: str | None = None) -> str:
    """``left,right,count`` rows; under/overflow go into ``#`` comment lines."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    buf.write(f"# underflow: {_num(h.underflow)}\n# overflow: {_num(h.overflow)}\n")
    buf.write("left,right,count\n")
    for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts):
        buf.write(f"{float(lo)!r},{float(hi)!r},{_num(c)}\n")
    return buf.getvalue()


def _num(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def histogram_from_csv(text: str) -> Histogram:
    """Read a histogram written by :func:`histogram_to_csv` or any compatible tool.

    Bins must be contiguous. Missing under/overflow comments count as zero.
    """
    meta, rows = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(":")
            meta[key.strip()] = value.strip()
        elif line.strip():
            rows.append(line)
    try:
        reader = csv.DictReader(rows)
        if reader.fieldnames is None or not {"left", "right", "count"} <= set(reader.fieldnames):
            raise StorageError("histogram CSV needs columns left,right,count")
        left, right, counts = [], [], []
        for r in reader:
            left.append(float(r["left"]))
            right.append(float(r["right"]))
            counts.append(float(r["count"]))
        if not counts:
            raise StorageError("histogram CSV has no bins")
        if any(a != b for a, b in zip(right[:-1], left[1:])):
            raise StorageError("histogram bins must be contiguous")
        edges = np.array(left + [right[-1]])
        return Histogram(
            edges,
            np.array(counts),
            float(meta.get("underflow", 0)),
            float(meta.get("overflow", 0)),
        )
    except (ValueError, KeyError) as exc:
        raise StorageError(f"malformed histogram CSV: {exc}") from exc


def load_histogram(path) -> Histogram:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read histogram file {path}: {exc}") from exc
    return histogram_from_csv(text)


def channel_histograms_csv(h1: Histogram, h2: Histogram) -> str:
    buf = io.StringIO()
    buf.write(f"# underflow: {_num(h1.underflow)},{_num(h2.underflow)}\n")
    buf.write(f"# overflow: {_num(h1.overflow)},{_num(h2.overflow)}\n")
    buf.write("left,right,n1,n2,n1_minus_n2\n")
    for lo, hi, a, b in zip(h1.edges[:-1], h1.edges[1:], h1.counts, h2.counts):
        buf.write(f"{float(lo)!r},{float(hi)!r},{_num(a)},{_num(b)},{_num(a - b)}\n")
    return buf.getvalue()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command: dict, config: dict | None, seeds, outputs, started: str) -> Path:
    """Record everything needed to regenerate ``outputs`` into ``out_dir/manifest.json``."""
    out_dir = Path(out_dir)
    manifest = {
        "artifact_version": __version__,
        "command": command,
        "config": config,
        "seeds": [str(s) for s in seeds],
        "started": started,
        "finished": now(),
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise StorageError(f"cannot read manifest {path}: {exc}") from exc
