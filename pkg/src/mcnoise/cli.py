"""Command-line entry point: ``mcnoise {fit,noise,validate,synth,model}``.

Exit codes: 0 success, 2 usage/config error, 3 data/format error,
4 numerical failure. Every JSON report carries ``schema_version`` and the
preprocessing and solver options that produced it.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (AlignmentError, DegenerateInputError, DomainError, NumericalFailure,
                     TraceFormatError, UsageError)
from .fitting import FitOptions, fit_ensemble, model_values
from .models import CoefficientSet, ModelKind, PhysicalParams, normalize_peak, peak_time, sample_model
from .nonlinearity import (NoiseStats, analyze_noise, histogram, predicted_tx12_mean, raw_sum,
                           validate_prediction)
from .synthgen import generate_scenario, scenario_from_config, write_scenario
from .traces import TimeGrid, TrialSet, align, average_traces, load_manifest, preprocess

SCHEMA_VERSION = "1"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("mcnoise")


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _columns_csv(columns: dict) -> str:
    names = list(columns)
    rows = zip(*(np.asarray(columns[n], float).tolist() for n in names))
    lines = [",".join(names)] + [",".join(repr(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _write_columns(path, columns: dict):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(_columns_csv(columns), encoding="utf-8")


def _load_group(path, horizon, baseline_window) -> TrialSet:
    trials = align(load_manifest(path))
    return TrialSet([preprocess(tr, horizon, baseline_window) for tr in trials], trials.group)


def _preprocessing(args):
    return {"baseline": "first-sample" if args.baseline_window == 1 else "window-mean",
            "baseline_window": args.baseline_window, "horizon_s": args.horizon,
            "alignment": "linear interpolation onto coarsest common grid"}


def _fit_options(args) -> FitOptions:
    return FitOptions(max_iterations=args.max_iterations)


# --------------------------------------------------------------------------
# Subcommands

def cmd_fit(args) -> int:
    trials = _load_group(args.manifest, args.horizon, args.baseline_window)
    opts = _fit_options(args)
    stats = fit_ensemble(args.model, trials, args.distance, opts, args.threads, args.restarts)
    curves_dir = Path(args.curves_dir) if args.curves_dir else Path(args.out).with_suffix("")
    by_label = {tr.label: tr for tr in trials}
    for fit in stats.fits:
        tr = by_label[fit.label]
        fitted = model_values(args.model, fit.coeffs.as_vector(), args.distance, tr.times)
        _write_columns(curves_dir / f"{fit.label}.csv",
                       {"time_s": tr.times, "measured_v": tr.values, "fitted_v": fitted})
    warnings = [f"trial {f.label} did not converge" for f in stats.fits if not f.converged]
    warnings += [f"trial {f['label']} failed: {f['error']}" for f in stats.failures]
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "model": ModelKind(args.model).value,
        "distance": args.distance,
        "provenance": {"manifest": str(args.manifest), "preprocessing": _preprocessing(args),
                       "solver": {"method": "levenberg-marquardt", **opts.to_dict(),
                                  "restarts": args.restarts},
                       "variance": "unbiased (n-1)"},
        "trials": [f.to_dict() for f in stats.fits],
        "ensemble": stats.to_dict(),
        "warnings": warnings,
    }
    _write_json(args.out, report)
    for w in warnings:
        log.warning(w)
    print(f"fitted {len(stats.fits)} trials; report written to {args.out}")
    return EXIT_OK


def cmd_noise(args) -> int:
    groups = [_load_group(p, args.horizon, args.baseline_window)
              for p in (args.tx1, args.tx2, args.tx12)]
    if (args.shared_b is None) != (args.shared_c is None):
        raise UsageError("--shared-b and --shared-c must be given together")
    opts = _fit_options(args)
    res = analyze_noise(*groups, model=args.model, d=args.distance, shared_b=args.shared_b,
                        shared_c=args.shared_c, opts=opts, threads=args.threads)
    bins = int(args.bins) if args.bins.isdigit() else args.bins
    hist = histogram(res.cube.flat(), bins=bins, stats=(res.stats.mu, res.stats.sigma2))
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "noise",
        **res.stats.to_dict(),
        "n_samples": res.n_samples,
        "mean_standard_error": res.mean_standard_error,
        "skewness": res.skewness,
        "excess_kurtosis": res.excess_kurtosis,
        **hist,
        "amplitudes": {"Tx1": res.cube.a1.tolist(), "Tx2": res.cube.a2.tolist(),
                       "Tx12": res.cube.a12.tolist()},
        "shared_shape": {
            "method": "user" if args.shared_b is not None else "mean of group-mean fits",
            "group_means": res.group_means,
            "relative_spread": res.coefficient_spread,
            "free_fit_amplitude_difference": res.group_mean_difference,
        },
        "provenance": {"manifests": {"Tx1": str(args.tx1), "Tx2": str(args.tx2),
                                     "Tx12": str(args.tx12)},
                       "preprocessing": _preprocessing(args),
                       "solver": {"method": "levenberg-marquardt", **opts.to_dict()},
                       "amplitude_refit": "closed-form projection with frozen shared b, c",
                       "variance": "unbiased (n-1)"},
    }
    _write_json(args.out, report)
    print(f"mu={res.stats.mu:.6g} sigma2={res.stats.sigma2:.6g} "
          f"n_samples={res.n_samples}; report written to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        doc = json.loads(Path(args.noise).read_text(encoding="utf-8"))
        stats = NoiseStats.from_dict(doc)
    except (KeyError, ValueError) as exc:
        raise TraceFormatError(f"{args.noise}: not a noise report ({exc})") from None
    tx1, tx2, tx12 = (_load_group(p, args.horizon, args.baseline_window)
                      for p in (args.tx1, args.tx2, args.tx12))
    predicted = predicted_tx12_mean(tx1, tx2, stats, args.seed, clamp=args.clamp)
    measured = average_traces(tx12)
    raw = raw_sum(tx1, tx2)
    rep = validate_prediction(predicted, measured, raw)
    curves = Path(args.curves) if args.curves else Path(args.out).with_name(
        Path(args.out).stem + "_curves.csv")
    t = measured.times
    _write_columns(curves, {
        "time_s": t,
        "predicted_tx12": predicted.values,
        "measured_tx12": measured.values,
        "raw_sum": raw.values,
        "expected_noise": stats.mu * stats.waveform(t),
    })
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "validate",
        "noise": stats.to_dict(),
        "n_synthesized": len(tx1) * len(tx2),
        "metrics": rep.to_dict(),
        "curves_csv": str(curves),
        "provenance": {"noise_report": str(args.noise), "seed": args.seed,
                       "clamp": args.clamp, "preprocessing": _preprocessing(args),
                       "noise_draws": "one per (i, j) pair"},
    }
    _write_json(args.out, report)
    verdict = "improves on" if rep.improves_on_raw_sum else "does not improve on"
    print(f"predicted RMSE {rep.rmse:.4g} V {verdict} raw sum ({rep.raw_sum_rmse:.4g} V)")
    return EXIT_OK


def cmd_synth(args) -> int:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc.msg})") from None
    tx1, tx2 = scenario_from_config(doc, seed=args.seed, trials=args.trials)
    paths = write_scenario(generate_scenario(tx1, tx2), args.out)
    print(paths["ground_truth"])
    return EXIT_OK


def cmd_model(args) -> int:
    kind = ModelKind(args.kind)
    if kind.is_physical:
        missing = [n for n in ("D", "d", "v") if getattr(args, n) is None]
        if missing:
            raise UsageError(f"model {kind.value} needs --{' --'.join(missing)}")
        params = PhysicalParams(args.M, args.D, args.d, args.v)
    else:
        missing = [n for n in ("a", "b", "c", "d") if getattr(args, n) is None]
        if missing:
            raise UsageError(f"model {kind.value} needs --{' --'.join(missing)}")
        params = CoefficientSet(args.a, args.b, args.c, args.d)
    t0 = args.t0 if args.t0 is not None else args.dt
    grid = TimeGrid.spanning(t0, args.horizon, args.dt)
    trace = sample_model(kind, params, grid)
    if args.normalize:
        trace = normalize_peak(trace)
    columns = {"time_s": trace.times, "value": trace.values}
    if args.out:
        _write_columns(args.out, columns)
        print(f"peak at t={peak_time(kind, params):.6g} s; curve written to {args.out}")
    else:
        sys.stdout.write(_columns_csv(columns))
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser

def _add_preprocessing(p):
    p.add_argument("--horizon", type=float, default=5.0,
                   help="keep samples with t <= HORIZON seconds (default 5)")
    p.add_argument("--baseline-window", type=int, default=1,
                   help="samples averaged for baseline subtraction (default 1)")


def _add_solver(p):
    p.add_argument("--model", choices=["m1", "m2"], required=True)
    p.add_argument("--distance", type=float, default=225.0, help="fixed distance d in cm")
    p.add_argument("--max-iterations", type=int, default=200)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for per-trial fits (1 = sequential)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcnoise", description=__doc__.splitlines()[0],
                                     allow_abbrev=False)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit m1/m2 coefficients to every trial in a manifest")
    _add_solver(p)
    _add_preprocessing(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--curves-dir", help="per-trial fitted-curve CSVs (default: next to report)")
    p.add_argument("--restarts", type=int, default=0,
                   help="extra deterministic starting points per trial")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("noise", help="estimate the Gaussian amplitude noise of the nonlinearity")
    _add_solver(p)
    _add_preprocessing(p)
    for g in ("tx1", "tx2", "tx12"):
        p.add_argument(f"--{g}", required=True, help=f"{g} manifest")
    p.add_argument("--shared-b", type=float)
    p.add_argument("--shared-c", type=float)
    p.add_argument("--bins", default="auto", help="histogram bins: integer or numpy rule")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("validate", help="compare noise-corrected prediction with measured Tx12")
    _add_preprocessing(p)
    p.add_argument("--noise", required=True, help="noise report JSON")
    for g in ("tx1", "tx2", "tx12"):
        p.add_argument(f"--{g}", required=True, help=f"{g} manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clamp", action="store_true", help="clip synthesized traces at 0")
    p.add_argument("--out", required=True)
    p.add_argument("--curves", help="curve CSV path (default: <out>_curves.csv)")
    p.add_argument("--threads", type=int, default=None, help="accepted for symmetry; unused")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="write a synthetic Tx1/Tx2/Tx12 dataset")
    p.add_argument("--config", help="scenario JSON (defaults to the reference scenario)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--threads", type=int, default=None, help="accepted for symmetry; unused")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("model", help="sample a channel model on a time grid")
    p.add_argument("--kind", choices=[k.value for k in ModelKind], required=True)
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--D", type=float)
    p.add_argument("--d", type=float)
    p.add_argument("--v", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--t0", type=float, help="first sample time (default: DT)")
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--normalize", action="store_true", help="divide by the peak value")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_model)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mcnoise {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"mcnoise {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TraceFormatError, AlignmentError, DegenerateInputError, DomainError, OSError) as exc:
        print(f"mcnoise {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
