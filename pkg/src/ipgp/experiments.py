"""Experiment configuration and the train/evaluate pipeline used by the CLI."""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from importlib import metadata, resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import gpcore
from .dynamics import (
    SpeciesConfig,
    Trajectory,
    TrajectoryDataset,
    generate_dataset,
    integrate,
    integrate_batch,
    sample_initial,
)
from .gpcore import GPHyperparams, PosteriorCurve
from .kernels import PAIRS, KernelSet, MaternParams, preset
from .metrics import (
    EmpiricalMeasure,
    ErrorReport,
    empirical_rho,
    fit_power_law,
    l2rho_rel_error,
    linf_rel_error,
    tilde_rho,
    traj_rel_error,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "EvaluationEnsemble",
    "evaluation_ensemble",
    "TrialResult",
    "simulate",
    "train",
    "solver_for",
    "learn_curves",
    "evaluate_curves",
    "run_trial",
    "run_trials",
    "sweep",
    "transfer",
    "config_hash",
    "manifest",
]

#: Spawn key separating the evaluation ensemble stream from the trial streams.
EVAL_STREAM = 2**31 - 1
#: Observation points on [0, 2T] for trajectory errors (100 per half, sharing t = T).
TRAJ_POINTS = 199


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    n1: int
    n2: int
    M: int
    L: int
    T: float
    sigma: float
    dim: int = 2
    hyperparameters: str = "default"
    iterations: int = 50
    fix_sigma: bool = False
    ridge_lambda: Optional[float] = None
    solver: str = "dense"
    trials: int = 1
    master_seed: int = 0
    eval_trajectories: int = 2000
    grid_points: int = 1000
    dt: Optional[float] = None
    sweep_axis: Optional[str] = None
    sweep_values: tuple = ()
    transfer_n1: Optional[int] = None
    transfer_n2: Optional[int] = None

    @property
    def species(self) -> SpeciesConfig:
        return SpeciesConfig(self.n1, self.n2, self.dim)

    @property
    def n_obs(self) -> int:
        return self.dim * (self.n1 + self.n2) * self.M * self.L

    def truth(self) -> KernelSet:
        return preset(self.preset)

    def at(self, axis: str, value) -> "ExperimentConfig":
        """Copy with one sweep coordinate set."""
        if axis == "sigma":
            return replace(self, sigma=float(value), sweep_axis=None, sweep_values=())
        return replace(self, M=int(value), sweep_axis=None, sweep_values=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sweep_values"] = list(self.sweep_values)
        return d


def _schema() -> dict:
    return json.loads(resources.files("ipgp").joinpath("config_schema.json").read_text())


def load_config(path, seed: Optional[int] = None) -> ExperimentConfig:
    """Read and validate a YAML (or JSON) experiment file.

    ``seed`` overrides ``protocol.master_seed``.
    """
    import jsonschema
    import yaml

    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config field {where}: {exc.message}") from None
    system, data = raw["system"], raw["data"]
    model = raw.get("model", {})
    protocol = raw.get("protocol", {})
    sw = raw.get("sweep") or {}
    tr = raw.get("transfer") or {}
    cfg = ExperimentConfig(
        preset=system["preset"],
        n1=system["n1"],
        n2=system["n2"],
        dim=system.get("dim", 2),
        M=data["M"],
        L=data["L"],
        T=float(data["T"]),
        sigma=float(data["sigma"]),
        hyperparameters=model.get("hyperparameters", "default"),
        iterations=model.get("iterations", 50),
        fix_sigma=model.get("fix_sigma", False),
        ridge_lambda=model.get("ridge_lambda"),
        solver=model.get("solver", "dense"),
        trials=protocol.get("trials", 1),
        master_seed=protocol.get("master_seed", 0) if seed is None else seed,
        eval_trajectories=protocol.get("eval_trajectories", 2000),
        grid_points=protocol.get("grid_points", 1000),
        dt=protocol.get("dt"),
        sweep_axis=sw.get("axis"),
        sweep_values=tuple(sw.get("values", ())),
        transfer_n1=tr.get("n1"),
        transfer_n2=tr.get("n2"),
    )
    if cfg.master_seed < 0 or cfg.master_seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.sweep_axis == "M" and any(v < 1 or v != int(v) for v in cfg.sweep_values):
        raise ConfigError("invalid config field sweep.values: M values must be positive integers")
    if cfg.sweep_axis == "M":
        cfg = replace(cfg, sweep_values=tuple(int(v) for v in cfg.sweep_values))
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _version(dist: str) -> str:
    try:
        return metadata.version(dist)
    except metadata.PackageNotFoundError:
        return "unknown"


def manifest(cfg: ExperimentConfig, files, command: str) -> dict:
    import numba
    import scipy

    return {
        "command": command,
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "master_seed": cfg.master_seed,
        "versions": {
            "artifact": _version("artifact"),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
        "files": sorted(str(Path(f).name) for f in files),
    }


# ---------------------------------------------------------------------------
# Seeds


def _trial_seed(cfg: ExperimentConfig, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.master_seed, trial])


def _trial_streams(cfg: ExperimentConfig, trial: int):
    data, test = _trial_seed(cfg, trial).spawn(2)
    return data, test


# ---------------------------------------------------------------------------
# Evaluation ensemble


@dataclass
class EvaluationEnsemble:
    """Distance measures from a large set of fresh trajectories."""

    radius: dict
    rho: dict
    rho_tilde: dict

    @property
    def R(self) -> float:
        return max(self.radius.values())


@lru_cache(maxsize=8)
def _ensemble(preset_name, n1, n2, dim, L, T, seed, n_traj, dt, chunk=250) -> EvaluationEnsemble:
    config = SpeciesConfig(n1, n2, dim)
    kernels = preset(preset_name)
    rng = np.random.default_rng(np.random.SeedSequence([seed, EVAL_STREAM]))
    x0 = sample_initial(config, rng, size=n_traj)
    states = []
    for j in range(0, n_traj, chunk):
        _, s, _ = integrate_batch(x0[j : j + chunk], kernels, config, (0.0, T), L, dt)
        states.append(s)
    X = np.concatenate(states)
    rho = {pq: empirical_rho(X, config, pq) for pq in PAIRS}
    return EvaluationEnsemble(
        {pq: m.support_max for pq, m in rho.items()}, rho, {pq: tilde_rho(m) for pq, m in rho.items()}
    )


def evaluation_ensemble(cfg: ExperimentConfig) -> EvaluationEnsemble:
    """Evaluation measures for ``cfg``; cached per system, horizon and seed."""
    return _ensemble(cfg.preset, cfg.n1, cfg.n2, cfg.dim, cfg.L, cfg.T, cfg.master_seed, cfg.eval_trajectories, cfg.dt)


# ---------------------------------------------------------------------------
# Pipeline


def simulate(cfg: ExperimentConfig, trial: int = 0) -> TrajectoryDataset:
    data_seed, _ = _trial_streams(cfg, trial)
    ds = generate_dataset(cfg.species, cfg.truth(), cfg.M, cfg.L, cfg.T, cfg.sigma, rng=data_seed, dt=cfg.dt)
    ds.seed = cfg.master_seed
    ds.meta.update({"preset": cfg.preset, "trial": trial})
    return ds


def solver_for(cfg: ExperimentConfig, n: int) -> str:
    if cfg.solver == "auto":
        return "dense" if n <= gpcore.DENSE_CAP else "iterative"
    return cfg.solver


def train(cfg: ExperimentConfig, dataset: TrajectoryDataset):
    """Hyperparameters and the fitted model for one dataset."""
    if cfg.ridge_lambda is not None:
        d = GPHyperparams.default(dataset)
        hp = GPHyperparams.scaled_prior(
            [MaternParams(1.0, t.omega) for t in d.theta], cfg.ridge_lambda, d.sigma,
            dataset.M, dataset.config.n, dataset.L,
        )
    else:
        hp = GPHyperparams.default(dataset)
        if cfg.hyperparameters == "optimize":
            hp = gpcore.optimize_hyperparams(dataset, hp, cfg.iterations, fix_sigma=cfg.fix_sigma)
    if solver_for(cfg, dataset.n_obs) == "iterative":
        model = gpcore.fit_iterative(dataset, hp)
    else:
        model = gpcore.fit(dataset, hp)
    return hp, model


def learn_curves(model, R: float, n_grid: int = 1000, variance: bool = True) -> dict:
    grid = np.linspace(0.0, R, n_grid)
    return {pq: gpcore.posterior_curve(model, pq, grid, variance) for pq in PAIRS}


def _learned(curves: dict) -> KernelSet:
    return KernelSet.from_mapping({pq: c.as_kernel() for pq, c in curves.items()})


@dataclass
class TrialResult:
    trial: int
    dataset: TrajectoryDataset
    hyperparams: Optional[GPHyperparams]
    curves: dict
    report: ErrorReport
    trajectories: dict = field(default_factory=dict)


def prediction_pair(cfg: ExperimentConfig, x0, learned: KernelSet, config: Optional[SpeciesConfig] = None):
    """True and predicted trajectories from ``x0`` on ``[0, 2T]``."""
    config = config or cfg.species
    span = (0.0, 2.0 * cfg.T)
    truth = integrate(x0, cfg.truth(), config, span, TRAJ_POINTS, cfg.dt)
    pred = integrate(x0, learned, config, span, TRAJ_POINTS, cfg.dt)
    return truth, pred


def evaluate_curves(
    cfg: ExperimentConfig,
    curves: dict,
    dataset: TrajectoryDataset,
    trial: int = 0,
    ensemble: Optional[EvaluationEnsemble] = None,
    trajectories: bool = True,
):
    """Kernel errors against the preset and train/test trajectory errors."""
    ensemble = ensemble or evaluation_ensemble(cfg)
    truth = cfg.truth()
    report = ErrorReport()
    for pq in PAIRS:
        est = curves[pq].as_kernel()
        report.add_kernel(
            trial, pq, linf_rel_error(est, truth[pq], ensemble.R), l2rho_rel_error(est, truth[pq], ensemble.rho_tilde[pq])
        )
    trajs = {}
    if trajectories:
        _, test_seed = _trial_streams(cfg, trial)
        starts = {"train": dataset.positions[0, 0], "test": sample_initial(cfg.species, np.random.default_rng(test_seed))}
        learned = _learned(curves)
        for split, x0 in starts.items():
            tr, pr = prediction_pair(cfg, x0, learned)
            trajs[split] = (tr, pr)
            report.add_trajectory(trial, split, "[0,T]", traj_rel_error(pr, tr, (0.0, cfg.T)))
            report.add_trajectory(trial, split, "[T,2T]", traj_rel_error(pr, tr, (cfg.T, 2.0 * cfg.T)))
    return report, trajs


def run_trial(cfg: ExperimentConfig, trial: int, variance: bool = False, trajectories: bool = True) -> TrialResult:
    ensemble = evaluation_ensemble(cfg)
    ds = simulate(cfg, trial)
    hp, model = train(cfg, ds)
    curves = learn_curves(model, ensemble.R, cfg.grid_points, variance)
    report, trajs = evaluate_curves(cfg, curves, ds, trial, ensemble, trajectories)
    return TrialResult(trial, ds, hp, curves, report, trajs)


def run_trials(cfg: ExperimentConfig, variance: bool = False, trajectories: bool = True) -> list[TrialResult]:
    return [run_trial(cfg, t, variance, trajectories) for t in range(cfg.trials)]


def sweep(cfg: ExperimentConfig, trajectories: bool = True, progress=None):
    """Run all trials at every sweep value.

    Returns ``(summary_rows, slope_rows, reports)`` where summary rows hold
    ``axis_value, metric, key, mean, std`` and slopes are power-law fits of
    the mean errors against the positive sweep values.
    """
    if not cfg.sweep_axis or not cfg.sweep_values:
        raise ConfigError("sweep requires sweep.axis and sweep.values")
    summary, reports = [], {}
    for value in cfg.sweep_values:
        sub = cfg.at(cfg.sweep_axis, value)
        report = ErrorReport()
        for r in run_trials(sub, trajectories=trajectories):
            report.extend(r.report)
        reports[value] = report
        for row in report.aggregate():
            summary.append({"axis_value": value, "metric": row["metric"], "key": row["key"], "mean": row["mean"], "std": row["std"]})
        if progress:
            progress(value)
    slopes = []
    xs = [v for v in cfg.sweep_values if v > 0]
    if len(xs) >= 2:
        keys = dict.fromkeys((r["metric"], r["key"]) for r in summary)
        for metric, key in keys:
            ys = [next(r["mean"] for r in summary if r["axis_value"] == x and r["metric"] == metric and r["key"] == key) for x in xs]
            if all(y > 0 for y in ys):
                slope, intercept = fit_power_law(xs, ys)
                slopes.append({"metric": metric, "key": key, "slope": slope, "intercept": intercept})
    return summary, slopes, reports


def transfer(cfg: ExperimentConfig, curves: dict, n1: int, n2: int, trial: int = 0):
    """Predict a (larger) system with learned kernels from a fresh initial condition."""
    config = SpeciesConfig(n1, n2, cfg.dim)
    seed = np.random.SeedSequence([cfg.master_seed, trial, n1, n2])
    x0 = sample_initial(config, np.random.default_rng(seed))
    tr, pr = prediction_pair(cfg, x0, _learned(curves), config)
    errs = {
        "[0,T]": traj_rel_error(pr, tr, (0.0, cfg.T)),
        "[T,2T]": traj_rel_error(pr, tr, (cfg.T, 2.0 * cfg.T)),
    }
    return config, tr, pr, errs
