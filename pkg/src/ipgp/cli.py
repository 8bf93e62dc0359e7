"""Command-line front end: ``ipgp {simulate,train,evaluate,sweep,transfer}``.

Exit status is 0 on success, 2 for configuration errors and 1 for runtime
failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .dynamics import TrajectoryDataset
from .gpcore import DENSE_CAP, PosteriorCurve
from .kernels import PAIRS
from .metrics import empirical_rho
from .plotting import plot_kernel, plot_trajectories

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _log(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


def _curve_path(out: Path, pq) -> Path:
    return out / ("curve_phi%d%d.csv" % tuple(pq))


def _finish(args, cfg, out: Path, files, command: str) -> None:
    man = out / "manifest.json"
    with open(man, "w") as fh:
        json.dump(ex.manifest(cfg, list(files) + [man], command), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log(args, f"wrote {len(files) + 1} files to {out}")


def _dataset(args, cfg, out: Path, files: list) -> TrajectoryDataset:
    if args.dataset:
        ds = TrajectoryDataset.from_csv(args.dataset)
        if (ds.config.n1, ds.config.n2, ds.config.dim) != (cfg.n1, cfg.n2, cfg.dim):
            raise ex.ConfigError("dataset agent counts do not match the config")
        return ds
    ds = ex.simulate(cfg)
    files.append(ds.to_csv(out / "dataset.csv"))
    files.append(out / "dataset.csv.meta.json")
    return ds


def _load_curves(directory) -> dict:
    d = Path(directory)
    try:
        return {pq: PosteriorCurve.from_csv(_curve_path(d, pq), pq) for pq in PAIRS}
    except OSError as exc:
        raise ex.ConfigError(f"missing learned curves in {d}: {exc}") from exc


def _train_curves(args, cfg, out: Path, files: list):
    ds = _dataset(args, cfg, out, files)
    if ex.solver_for(cfg, ds.n_obs) == "dense" and ds.n_obs > DENSE_CAP:
        raise ex.ConfigError(
            f"dNML = {ds.n_obs} exceeds the dense limit {DENSE_CAP}; subsample (reduce M or L) "
            "or set model.solver to 'iterative'"
        )
    ens = ex.evaluation_ensemble(cfg)
    _log(args, f"training on dNML = {ds.n_obs} observations")
    hp, model = ex.train(cfg, ds)
    curves = ex.learn_curves(model, ens.R, cfg.grid_points, variance=model.chol is not None)
    hp_path = out / "hyperparams.json"
    hp.dump(hp_path)
    files.append(hp_path)
    truth = cfg.truth()
    for pq, curve in curves.items():
        curve.to_csv(_curve_path(out, pq))
        svg = out / ("kernel_phi%d%d.svg" % pq)
        plot_kernel(curve, truth[pq], empirical_rho(ds.positions, ds.config, pq), svg)
        files += [_curve_path(out, pq), svg]
    return ds, curves


def _trajectory_svgs(cfg, trajs, out: Path, files: list, prefix: str = "") -> None:
    for split, (tr, pr) in trajs.items():
        p = out / f"{prefix}trajectory_{split}.svg"
        plot_trajectories(tr, pr, cfg.species, p, mark_index=ex.TRAJ_POINTS // 2, title=split)
        files.append(p)


def cmd_simulate(args, cfg, out):
    files = []
    _dataset(argparse.Namespace(dataset=None), cfg, out, files)
    _finish(args, cfg, out, files, "simulate")


def cmd_train(args, cfg, out):
    files = []
    _train_curves(args, cfg, out, files)
    _finish(args, cfg, out, files, "train")


def cmd_evaluate(args, cfg, out):
    files = []
    if args.curves:
        curves = _load_curves(args.curves)
        ds = _dataset(args, cfg, out, files)
        report, trajs = ex.evaluate_curves(cfg, curves, ds)
    else:
        report, trajs = None, {}
        for t in range(cfg.trials):
            _log(args, f"trial {t + 1}/{cfg.trials}")
            r = ex.run_trial(cfg, t)
            if report is None:
                report, trajs = r.report, r.trajectories
            else:
                report.extend(r.report)
    files += report.write(out).values()
    _trajectory_svgs(cfg, trajs, out, files)
    _finish(args, cfg, out, files, "evaluate")


def cmd_sweep(args, cfg, out):
    if not cfg.sweep_axis:
        raise ex.ConfigError("sweep requires a 'sweep' section with axis and values")
    sizes = [cfg.at(cfg.sweep_axis, v).n_obs for v in cfg.sweep_values]
    for v, n in zip(cfg.sweep_values, sizes):
        _log(args, f"{cfg.sweep_axis} = {v}: dNML = {n} per trial, {cfg.trials} trials")
    if cfg.solver == "dense" and max(sizes) > DENSE_CAP:
        if not args.force:
            raise ex.ConfigError(
                f"sweep reaches dNML = {max(sizes)} > {DENSE_CAP}; use --force or model.solver 'auto'"
            )
        cfg = replace(cfg, solver="auto")
    summary, slopes, reports = ex.sweep(cfg, progress=lambda v: _log(args, f"done {cfg.sweep_axis} = {v}"))
    files = []
    for v, report in reports.items():
        files += report.write(out, prefix=f"{cfg.sweep_axis}_{v}_").values()
    p = out / "sweep_summary.csv"
    _write_csv(p, ["axis_value", "metric", "key", "mean", "std"], summary)
    q = out / "sweep_slopes.csv"
    _write_csv(q, ["metric", "key", "slope", "intercept"], slopes)
    files += [p, q]
    _finish(args, cfg, out, files, "sweep")


def cmd_transfer(args, cfg, out):
    n1 = args.n1 or cfg.transfer_n1
    n2 = args.n2 or cfg.transfer_n2
    if not (n1 and n2):
        raise ex.ConfigError("transfer needs target sizes (transfer.n1/n2 or --n1/--n2)")
    files = []
    curves = _load_curves(args.curves) if args.curves else _train_curves(args, cfg, out, files)[1]
    config, tr, pr, errs = ex.transfer(cfg, curves, n1, n2)
    p = out / f"transfer_{n1}_{n2}.svg"
    plot_trajectories(tr, pr, config, p, mark_index=ex.TRAJ_POINTS // 2, title=f"N1={n1}, N2={n2}")
    q = out / "transfer_errors.csv"
    _write_csv(q, ["n1", "n2", "interval", "traj_err"],
               [{"n1": n1, "n2": n2, "interval": k, "traj_err": v} for k, v in errs.items()])
    files += [p, q]
    _log(args, "transfer error " + ", ".join(f"{k}: {v:.3g}" for k, v in errs.items()))
    _finish(args, cfg, out, files, "transfer")


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(row[c])) if isinstance(row[c], (float, np.floating)) else row[c] for c in columns])


COMMANDS = {
    "simulate": (cmd_simulate, "generate a noisy training dataset"),
    "train": (cmd_train, "fit the GP and write posterior curves"),
    "evaluate": (cmd_evaluate, "kernel and trajectory errors over all trials"),
    "sweep": (cmd_sweep, "repeat the pipeline over a sigma or M axis"),
    "transfer": (cmd_transfer, "predict a larger system with learned kernels"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipgp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--quiet", action="store_true")
        if name in ("train", "evaluate", "transfer"):
            p.add_argument("--dataset", help="dataset CSV written by 'simulate'")
        if name in ("evaluate", "transfer"):
            p.add_argument("--curves", help="directory with curve_phiXY.csv files from 'train'")
        if name == "sweep":
            p.add_argument("--force", action="store_true", help="allow points beyond the dense limit")
        if name == "transfer":
            p.add_argument("--n1", type=int)
            p.add_argument("--n2", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ex.load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](args, cfg, out)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
