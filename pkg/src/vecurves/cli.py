"""Command-line front end.

Subcommands: ``simulate`` (draw a trial dataset), ``fit`` (estimate the
pipeline on a dataset), ``curves`` (curves, CIs, bands, and the gap test
from a fit), and ``montecarlo`` (bias/coverage study of a configuration).
Every command writes a JSON manifest recording the argv, configuration
snapshot, input digests, seed, and output paths.  Exit codes: 0 success,
2 validation/configuration error, 3 convergence failure, 4 design error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import file_sha256, read_fit, write_fit, write_manifest
from .curves import CurveEstimate, CurveGrid, default_grid, write_curve_table
from .data import read_dataset, write_dataset
from .errors import ConfigError, SchemaError, VecurvesError
from .inference import band_inversion_test, pointwise_ci, run_ensemble, simultaneous_band
from .model import DetectionLimit
from .pipeline import EstimationOptions, fit_pipeline, pipeline_curves
from .simulate import (SimConfig, default_profile, load_config, monte_carlo,
                       save_config, simulate_trial)

__all__ = ["main"]


def _fmt6(v):
    return f"{float(v):.6g}"


def _parse_grid(text, data, options):
    if text is None:
        return default_grid(data, options.grid_points)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError("--grid must be N or LO:HI:N")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1 or not hi > lo:
            raise ConfigError("--grid range must be increasing with N >= 1")
        return CurveGrid(np.linspace(lo, hi, n))
    return default_grid(data, int(text))


def _load_run_config(args, need_config=False):
    """Resolve (SimConfig or None, EstimationOptions, replications) from
    --config plus flag overrides."""
    config = None
    options = EstimationOptions()
    replications = 500
    if getattr(args, "config", None):
        config, options, replications = load_config(args.config)
    elif need_config:
        config = default_profile(seed=0)
    if getattr(args, "seed", None) is not None:
        if config is not None:
            config.seed = int(args.seed)
    if getattr(args, "design", None):
        if config is not None:
            config.design = args.design
    if getattr(args, "quad_nodes", None):
        options.quad_nodes = int(args.quad_nodes)
    if getattr(args, "alpha", None) is not None:
        options.alpha = float(args.alpha)
    if getattr(args, "perturbations", None) is not None:
        options.n_perturb = int(args.perturbations)
    options.__post_init__()
    if config is not None:
        config.__post_init__()
    return config, options, replications


def _outdir(args):
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    config, options, _ = _load_run_config(args, need_config=True)
    if args.config is None and args.seed is None:
        raise ConfigError("simulate needs --config or an explicit --seed")
    out = _outdir(args)
    data = simulate_trial(config)
    path = out / "dataset.csv"
    write_dataset(path, data)
    cfg_path = out / "config_used.json"
    save_config(cfg_path, config, options)
    counts = data.pattern_counts()
    print(f"wrote {path} ({data.n} rows; vaccine {int((data.z == 1).sum())}, "
          f"placebo {int((data.z == 0).sum())})")
    print("events: vaccine " + _fmt6(data.y[data.z == 1].mean())
          + ", placebo " + _fmt6(data.y[data.z == 0].mean()))
    print("patterns (delta_b, delta):", {k: v for k, v in counts.items()})
    write_manifest(out / "manifest.json", command=sys.argv,
                   config=config.to_dict(), seed=config.seed,
                   inputs=[args.config] if args.config else [],
                   outputs=[str(path), str(cfg_path)])
    return 0


def cmd_fit(args):
    _, options, _ = _load_run_config(args)
    out = _outdir(args)
    data, report = read_dataset(args.dataset, DetectionLimit(args.limit))
    pf = fit_pipeline(data, options)
    path = out / "fit.txt"
    write_fit(path, pf, dataset_path=str(args.dataset),
              dataset_sha256=file_sha256(args.dataset), n_rows=data.n)
    beta = pf.fit.params.as_array()
    print("risk-model coefficients:", " ".join(_fmt6(v) for v in beta))
    print(f"loglik {_fmt6(pf.fit.loglik)}, grad norm {_fmt6(pf.fit.grad_norm)}, "
          f"{pf.fit.n_iter} iterations")
    print(f"analysis rows {report.n_analysis} "
          f"(excluded early infections {report.n_excluded_early})")
    write_manifest(out / "manifest.json", command=sys.argv,
                   config=options.to_dict(), seed=None,
                   inputs=[args.dataset], outputs=[str(path)])
    return 0


def _write_ensemble_summary(path, estimates):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["s", "kind", "est", "se", "q_point", "q_simul"])
        for cu in estimates:
            for i, s in enumerate(cu.grid.values):
                wr.writerow([repr(float(s)), cu.kind, repr(float(cu.est[i])),
                             repr(float(cu.se[i])), repr(float(cu.q_point)),
                             repr(float(cu.q_simul))])


def cmd_curves(args):
    _, options, _ = _load_run_config(args)
    if args.seed is None:
        raise ConfigError("curves needs --seed for the perturbation draws")
    out = _outdir(args)
    data, _ = read_dataset(args.dataset, DetectionLimit(args.limit))

    if args.fit:
        artifact = read_fit(args.fit)
        stored = artifact.meta.get("dataset_sha256")
        actual = file_sha256(args.dataset)
        if stored and stored != actual:
            raise SchemaError(
                f"dataset digest {actual[:12]} does not match the fit artifact "
                f"({stored[:12]}); refusing to mix fits across datasets"
            )
        options = artifact.options
        if args.alpha is not None:
            options.alpha = float(args.alpha)
        if args.perturbations is not None:
            options.n_perturb = int(args.perturbations)
        baseline = artifact.to_pipeline(data)
    else:
        baseline = fit_pipeline(data, options)

    grid = _parse_grid(args.grid, data, options)
    cur = pipeline_curves(baseline, grid)
    ens = run_ensemble(data, grid, baseline, options=options,
                       n_draws=options.n_perturb, master_seed=int(args.seed),
                       threads=int(args.threads))
    estimates = []
    for kind in ens.kinds:
        sd = ens.sd(kind)
        lo, hi, zq = pointwise_ci(cur[kind]["est"], sd, options.alpha)
        band = simultaneous_band(cur[kind]["est"], ens.values[kind], sd, options.alpha)
        estimates.append(CurveEstimate(
            kind=kind, grid=grid, est=cur[kind]["est"],
            risk1=cur[kind]["risk1"], risk0=cur[kind]["risk0"],
            se=sd, ci_lo=lo, ci_hi=hi, band_lo=band.lo, band_hi=band.hi,
            q_point=zq, q_simul=band.q,
        ))
    test = band_inversion_test(cur["difference"]["est"],
                               ens.values["difference"], ens.sd("difference"))

    curve_path = out / "curves.csv"
    write_curve_table(curve_path, estimates)
    summary_path = out / "ensemble_summary.csv"
    _write_ensemble_summary(summary_path, estimates)
    test_path = out / "test.csv"
    with open(test_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["p_value", "side", "sup_stat"])
        wr.writerow([repr(test.p_value), test.side, repr(test.sup_stat)])

    print(f"curves over {grid.n} grid points in [{_fmt6(grid.values[0])}, "
          f"{_fmt6(grid.values[-1])}], {ens.n_ok}/{ens.n_requested} draws")
    print(f"gap test: p = {_fmt6(test.p_value)} ({test.side}), "
          f"sup statistic {_fmt6(test.sup_stat)}")
    write_manifest(out / "manifest.json", command=sys.argv,
                   config=options.to_dict(), seed=int(args.seed),
                   inputs=[p for p in (args.dataset, args.fit) if p],
                   outputs=[str(curve_path), str(summary_path), str(test_path)])
    return 0


def cmd_montecarlo(args):
    config, options, replications = _load_run_config(args)
    if config is None:
        raise ConfigError("montecarlo needs --config")
    if args.replications is not None:
        replications = int(args.replications)
    out = _outdir(args)
    grid = None
    if args.grid and ":" in args.grid:
        parts = args.grid.split(":")
        grid = CurveGrid(np.linspace(float(parts[0]), float(parts[1]), int(parts[2])))
    elif args.grid:
        options.grid_points = int(args.grid)

    def progress(done, total):
        if done % max(1, total // 10) == 0:
            print(f"  replication {done}/{total}", flush=True)

    report = monte_carlo(
        config, options, replications=replications,
        n_perturb=options.n_perturb, alpha=options.alpha, grid=grid,
        threads=int(args.threads), progress=progress,
    )

    table_path = out / "montecarlo.csv"
    with open(table_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["s", "kind", "truth", "mean_est", "bias", "sd_est",
                     "pointwise_coverage"])
        for kind in report.kinds:
            for i, s in enumerate(report.grid.values):
                wr.writerow([repr(float(s)), kind,
                             repr(float(report.truth[kind][i])),
                             repr(float(report.mean_est[kind][i])),
                             repr(float(report.bias[kind][i])),
                             repr(float(report.sd_est[kind][i])),
                             repr(float(report.pointwise_coverage[kind][i]))])
    summary_path = out / "summary.json"
    summary = {
        "replications_completed": report.n_completed,
        "replications_requested": report.n_requested,
        "failures": report.failures,
        "alpha": report.alpha,
        "simultaneous_coverage": {k: report.simultaneous_coverage[k]
                                  for k in report.kinds},
        "rejection_rate": report.rejection_rate,
        "max_abs_bias": {k: float(np.max(np.abs(report.bias[k])))
                         for k in report.kinds},
        "runtime_seconds": report.runtime_seconds,
    }
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")

    for kind in report.kinds:
        print(f"{kind}: max |bias| {_fmt6(np.max(np.abs(report.bias[kind])))}, "
              f"simultaneous coverage {_fmt6(report.simultaneous_coverage[kind])}")
    print(f"gap-test rejection rate {_fmt6(report.rejection_rate)} "
          f"at alpha {_fmt6(report.alpha)}")
    print(f"{report.n_completed}/{report.n_requested} replications in "
          f"{_fmt6(report.runtime_seconds)} s")
    write_manifest(out / "manifest.json", command=sys.argv,
                   config={**config.to_dict(),
                           "estimation": {**options.to_dict(),
                                          "replications": replications}},
                   seed=config.seed,
                   inputs=[args.config] if args.config else [],
                   outputs=[str(table_path), str(summary_path)])
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="vecurves",
        description="Vaccine-efficacy curves by post-randomization and baseline "
                    "biomarkers under non-monotone missingness",
    )
    p.add_argument("--version", action="version", version=f"vecurves {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=False):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="master seed override")
        sp.add_argument("--alpha", type=float, help="test/interval level")
        sp.add_argument("--perturbations", type=int, help="perturbation draws")
        sp.add_argument("--quad-nodes", type=int, dest="quad_nodes",
                        help="quadrature nodes")
        sp.add_argument("--grid", help="curve grid: N or LO:HI:N")
        sp.add_argument("--design", choices=("bip", "bip-cpv"),
                        help="sampling design override")
        sp.add_argument("--threads", type=int, default=1, help="worker processes")
        sp.add_argument("--out", help="output directory (default .)")
        if dataset:
            sp.add_argument("dataset", help="input dataset CSV")
            sp.add_argument("--limit", type=float, default=1.0,
                            help="detection limit c (default 1)")

    sp = sub.add_parser("simulate", help="draw a trial dataset")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="fit the estimation pipeline")
    common(sp, dataset=True)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("curves", help="curves, intervals, bands, gap test")
    common(sp, dataset=True)
    sp.add_argument("--fit", help="fit artifact from the fit command")
    sp.set_defaults(func=cmd_curves)

    sp = sub.add_parser("montecarlo", help="bias/coverage simulation study")
    common(sp)
    sp.add_argument("replications", nargs="?", type=int,
                    help="replication count (default from config)")
    sp.set_defaults(func=cmd_montecarlo)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VecurvesError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
