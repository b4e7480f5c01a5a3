"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 degeneracy of the scheme,
4 I/O error, 1 reproduction mismatch (``rerun``). Every command writes a
``manifest.json`` next to its outputs. The default output directory is
``$DIFFAMP_OUT`` or ``./diffamp-out``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from diffamp import __version__, analytic as an
from diffamp.config import RunConfig, parse_config, render_config, replace_config
from diffamp.errors import ConfigError, DegenerateError, DiffampError
from diffamp.estimators import (
    estimate_bdsa,
    estimate_conventional,
    estimate_difference_histogram,
    estimate_dsa,
    estimate_from_histograms,
    replicate_study,
)
from diffamp.sampler import postprocess_split, sample_batch
from diffamp.storage import (
    MANIFEST_NAME,
    StorageError,
    channel_histograms_csv,
    load_batch,
    load_histogram,
    now,
    read_manifest,
    save_batch,
    sha256_file,
    write_manifest,
)
from diffamp.sweep import SweepSpec, figure, run_sweep

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
EXIT_IO = 4
OUT_ENV = "DIFFAMP_OUT"


def _out_dir(args, cfg: RunConfig | None = None) -> Path:
    if args.out:
        path = Path(args.out)
    elif cfg is not None and cfg.out:
        path = Path(cfg.out)
    else:
        path = Path(os.environ.get(OUT_ENV, "diffamp-out"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args, required=True) -> RunConfig | None:
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command", key="config")
        return None
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read config {args.config}: {exc}") from exc
    cfg = parse_config(text)
    if getattr(args, "seed", None) is not None:
        cfg = replace_config(cfg, seed=args.seed)
    return cfg


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _safe(fn):
    try:
        value = fn()
    except DegenerateError as exc:
        return f"DEGENERATE:{exc.kind}"
    return "DEGENERATE:postselection" if value is None else value


def analytic_report(cfg: RunConfig) -> dict:
    pps, meter, N = cfg.pps(), cfg.meter(), cfg.N
    out = {
        "B": pps.B,
        "theta": pps.theta,
        "y": pps.y,
        "d": meter.d,
        "sigma": meter.sigma,
        "g": meter.g,
        "N": N,
        "p_f": an.postselection_probs(pps)[0],
        "p_fbar": an.postselection_probs(pps)[1],
        "x_f": _safe(lambda: an.psa_psr_means(pps, meter)[0]),
        "x_fbar": _safe(lambda: an.psa_psr_means(pps, meter)[1]),
        "beta1": _safe(lambda: an.ratio_factors(pps)[0]),
        "beta2": _safe(lambda: an.ratio_factors(pps)[1]),
        "xbar": _safe(lambda: an.dsa_signal(pps, meter)),
        "var1": _safe(lambda: an.subensemble_variances(pps, meter)[0]),
        "var2": _safe(lambda: an.subensemble_variances(pps, meter)[1]),
        "dsa_variance": _safe(lambda: an.dsa_variance(pps, meter, N)),
        "snr": _safe(lambda: an.dsa_snr(pps, meter, N).snr),
        "reduced_snr": _safe(lambda: an.dsa_snr(pps, meter, N).reduced_snr),
        "weak_value_classical": _safe(lambda: an.weak_value((pps.alpha2, pps.beta2), (pps.a2, pps.b2))),
    }
    if cfg.beta_bias is not None:
        b = cfg.beta_bias
        out["beta_bias"] = b
        out["bdsa_xbar"] = _safe(lambda: an.bdsa_signal(pps, meter, b).exact)
        out["bdsa_xbar_approx"] = _safe(lambda: an.bdsa_signal(pps, meter, b).approx)
        for name in ("variance", "variance_approx", "snr", "snr_approx", "reduced_snr", "reduced_snr_approx"):
            out[f"bdsa_{name}"] = _safe(lambda name=name: getattr(an.bdsa_variance_snr(pps, meter, b, N), name))
    return out


def cmd_analytic(args):
    started = now()
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    report = analytic_report(cfg)
    path = _write_json(out / "analytic.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    write_manifest(out, _command(args), cfg.to_dict(), [], [path], started)
    return EXIT_OK


def _estimates(batch, cfg: RunConfig) -> dict:
    result = {"dsa": estimate_dsa(batch).to_dict()}
    if cfg.beta_bias is not None:
        result["bdsa"] = _safe(lambda: estimate_bdsa(batch, None, cfg.beta_bias).to_dict())
    if batch.has_histograms:
        result["difference_histogram"] = _safe(lambda: estimate_difference_histogram(batch).to_dict())
    result["conventional"] = _safe(lambda: estimate_conventional(batch).to_dict())
    result["expected_xbar"] = an.dsa_signal(batch.pps, batch.meter)
    return result


def cmd_simulate(args):
    started = now()
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    pps, meter = cfg.pps(), cfg.meter()
    # fail before sampling if the scheme is structurally singular
    an.dsa_signal(pps, meter)
    batch = sample_batch(pps, meter, cfg.N, cfg.seed, cfg.imperfection(), cfg.histograms)
    outputs = [save_batch(batch, out / "batch.toml")]
    result = _estimates(batch, cfg)
    outputs.append(_write_json(out / "estimate.json", result))
    if batch.has_histograms:
        hp = out / "histograms.csv"
        hp.write_text(channel_histograms_csv(batch.hist1, batch.hist2), encoding="utf-8")
        outputs.append(hp)
    print(json.dumps(result["dsa"], indent=2, sort_keys=True))
    write_manifest(out, _command(args), cfg.to_dict(), [cfg.seed], outputs, started)
    return EXIT_OK


def cmd_estimate(args):
    started = now()
    if (args.batch is None) == (args.histogram is None):
        raise ConfigError("give exactly one of --batch or --histogram", key="batch")
    inputs = {}
    if args.batch is not None:
        cfg = _load_config(args, required=False)
        batch = load_batch(args.batch)
        inputs["batch"] = sha256_file(args.batch)
        result = {"dsa": estimate_dsa(batch).to_dict()}
        if cfg is not None and cfg.beta_bias is not None:
            result["bdsa"] = _safe(lambda: estimate_bdsa(batch, None, cfg.beta_bias).to_dict())
        if batch.has_histograms:
            result["difference_histogram"] = _safe(lambda: estimate_difference_histogram(batch).to_dict())
        seeds = list(batch.seeds)
    else:
        cfg = _load_config(args)
        pps, meter = cfg.pps(), cfg.meter()
        an.dsa_signal(pps, meter)
        total = load_histogram(args.histogram)
        inputs["histogram"] = sha256_file(args.histogram)
        split = postprocess_split(total, pps, meter)
        est = estimate_from_histograms(split.n1, split.n2, pps)
        result = {"dsa": est.to_dict(), "split_flagged_bins": list(split.flagged_bins)}
        seeds = []
    out = _out_dir(args, cfg)
    path = _write_json(out / "estimate.json", result)
    print(json.dumps(result["dsa"], indent=2, sort_keys=True))
    command = _command(args)
    command["input_digests"] = inputs
    write_manifest(out, command, None if cfg is None else cfg.to_dict(), seeds, [path], started)
    return EXIT_OK


def cmd_replicate(args):
    started = now()
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    pps, meter = cfg.pps(), cfg.meter()
    if args.mode == "biased":
        if cfg.beta_bias is None:
            raise ConfigError("biased mode needs beta_bias in the config", key="beta_bias")
        mode = ("biased", cfg.beta_bias)
    else:
        an.dsa_signal(pps, meter)
        mode = "unbiased"
    summary = replicate_study(pps, meter, cfg.N, cfg.M, cfg.seed, mode)
    path = _write_json(out / "replicate.json", summary.to_dict())
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    write_manifest(out, _command(args), cfg.to_dict(), [cfg.seed], [path], started)
    return EXIT_OK


def _load_spec(path) -> SweepSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read sweep spec {path}: {exc}") from exc
    if str(path).endswith(".json"):
        try:
            data = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"cannot parse sweep spec: {exc}", kind="parse") from exc
    else:
        from diffamp.config import tomllib

        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse sweep spec: {exc}", kind="parse") from exc
    try:
        return SweepSpec.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed sweep spec: {exc}", kind="parse") from exc


def cmd_sweep(args):
    started = now()
    spec = _load_spec(args.spec)
    out = _out_dir(args)
    table = run_sweep(spec)
    path = table.write(out / (args.name + ".csv"))
    seeds = list(spec.mc_overlay[1]) if spec.mc_overlay else []
    command = _command(args)
    command["spec"] = spec.to_dict()
    write_manifest(out, command, None, seeds, [path], started)
    print(path)
    return EXIT_OK


def cmd_figure(args):
    started = now()
    out = _out_dir(args)
    paths = figure(args.id, out)
    write_manifest(out, _command(args), None, [], paths, started)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_rerun(args):
    """Regenerate a manifest's outputs into a new directory and compare digests."""
    manifest = read_manifest(args.manifest)
    if manifest.get("artifact_version") != __version__:
        print(f"warning: manifest from version {manifest.get('artifact_version')}, running {__version__}",
              file=sys.stderr)
    out = _out_dir(args)
    argv = list(manifest["command"]["argv"])
    cfg = manifest.get("config")
    if cfg is not None:
        cfg_path = out / "rerun-config.toml"
        from diffamp.config import from_mapping

        cfg_path.write_text(render_config(from_mapping(cfg)), encoding="utf-8")
        argv = _replace_opt(argv, "--config", str(cfg_path))
    if manifest["command"]["name"] == "sweep":
        spec_path = out / "rerun-spec.json"
        spec_path.write_text(json.dumps(manifest["command"]["spec"]), encoding="utf-8")
        argv = _replace_opt(argv, "--spec", str(spec_path))
    argv = _replace_opt(argv, "--out", str(out))
    argv = _replace_opt(argv, "--seed", None)
    code = main(argv)
    if code != EXIT_OK:
        return code
    mismatched = []
    for name, digest in manifest["outputs"].items():
        if sha256_file(out / name) != digest:
            mismatched.append(name)
    if mismatched:
        print("outputs differ: " + ", ".join(mismatched), file=sys.stderr)
        return EXIT_MISMATCH
    print(f"reproduced {len(manifest['outputs'])} output(s)")
    return EXIT_OK


def _replace_opt(argv, flag, value):
    out, skip = [], False
    for i, a in enumerate(argv):
        if skip:
            skip = False
            continue
        if a == flag:
            skip = True
            continue
        if a.startswith(flag + "="):
            continue
        out.append(a)
    if value is not None:
        # options precede the subcommand's positionals in every parser here
        out[1:1] = [flag, value]
    return out


def _command(args) -> dict:
    return {"name": args.command, "argv": list(args.argv)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffamp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"diffamp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=False):
        if config:
            p.add_argument("--config", metavar="PATH", help="TOML run configuration")
        if seed:
            p.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
        p.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV} or ./diffamp-out)")
        p.add_argument("--format", choices=["csv"], default="csv")
        return p

    common(sub.add_parser("analytic", help="closed-form quantities for one configuration"))
    common(sub.add_parser("simulate", help="sample a batch and estimate from it"), seed=True)
    p = common(sub.add_parser("estimate", help="estimate from a saved batch or a recorded histogram"))
    p.add_argument("--batch", metavar="PATH")
    p.add_argument("--histogram", metavar="PATH", help="left,right,count CSV of the recorded n(x)")
    p = common(sub.add_parser("replicate", help="replicated runs: empirical vs analytic variance"), seed=True)
    p.add_argument("--mode", choices=["unbiased", "biased"], default="unbiased")
    p = common(sub.add_parser("sweep", help="evaluate quantities on a parameter grid"), config=False)
    p.add_argument("--spec", required=True, metavar="PATH", help="sweep spec (.toml or .json)")
    p.add_argument("--name", default="sweep", help="output file stem")
    p = common(sub.add_parser("figure", help="write the CSV tables of a figure"), config=False)
    p.add_argument("id", type=int, choices=range(1, 6))
    p = sub.add_parser("rerun", help="re-run a manifest and verify output digests")
    p.add_argument("manifest")
    p.add_argument("--out", metavar="DIR")
    return parser


COMMANDS = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "replicate": cmd_replicate,
    "sweep": cmd_sweep,
    "figure": cmd_figure,
    "rerun": cmd_rerun,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error [{exc.kind}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateError as exc:
        print(f"degenerate [{exc.kind}]: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (StorageError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DiffampError as exc:
        print(f"error [{exc.kind}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
