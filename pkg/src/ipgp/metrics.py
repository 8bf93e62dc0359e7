"""Pairwise-distance measures, kernel and trajectory error metrics, rate fits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dynamics import SpeciesConfig, Trajectory, pair_geometry
from .kernels import PAIRS, RadialKernel

__all__ = [
    "EmpiricalMeasure",
    "KernelError",
    "empirical_rho",
    "tilde_rho",
    "linf_rel_error",
    "l2rho_rel_error",
    "traj_rel_error",
    "fit_power_law",
    "ErrorReport",
    "ZERO_TRUTH_TOL",
    "KERNEL_COLUMNS",
    "TRAJ_COLUMNS",
    "AGGREGATE_COLUMNS",
]

#: ``sup |truth|`` below this switches kernel errors to absolute mode.
ZERO_TRUTH_TOL = 1e-14

KERNEL_COLUMNS = ["trial", "pq", "linf", "l2rho", "abs_flag"]
TRAJ_COLUMNS = ["trial", "split", "interval", "traj_err"]
AGGREGATE_COLUMNS = ["metric", "key", "mean", "std", "n"]


@dataclass
class EmpiricalMeasure:
    """Weighted atoms on the distance axis, sorted by distance."""

    r: np.ndarray
    w: np.ndarray
    pq: tuple[int, int]
    normalized: bool = True

    def __post_init__(self):
        order = np.argsort(self.r, kind="stable")
        self.r = np.asarray(self.r, dtype=float)[order]
        self.w = np.asarray(self.w, dtype=float)[order]

    @property
    def mass(self) -> float:
        return float(self.w.sum())

    @property
    def support_max(self) -> float:
        return float(self.r[-1]) if self.r.size else 0.0

    def histogram(self, bins: int = 50, range_: Optional[tuple[float, float]] = None):
        """Bin edges and per-bin total weight."""
        return np.histogram(self.r, bins=bins, range=range_, weights=self.w)[::-1]


def _positions(trajectories) -> np.ndarray:
    if isinstance(trajectories, np.ndarray):
        return trajectories
    return np.stack([t.states for t in trajectories])


def empirical_rho(trajectories, config: SpeciesConfig, pq) -> EmpiricalMeasure:
    """Empirical law of pair distances of class ``pq``.

    ``trajectories`` is a list of :class:`Trajectory` or an array
    ``(M', L, N, d)``.  Every ordered pair of distinct agents of each snapshot
    is one atom, all with weight ``1 / (M' L Z_pq)``.
    """
    X = _positions(trajectories)
    Mp, L = X.shape[:2]
    _, dist, mask = pair_geometry(X.reshape(-1, config.n, config.dim), config, *pq)
    r = dist[:, mask].ravel()
    z = int(mask.sum())
    return EmpiricalMeasure(r, np.full(r.size, 1.0 / (Mp * L * z)), tuple(pq), True)


def tilde_rho(rho: EmpiricalMeasure) -> EmpiricalMeasure:
    """The ``r^2``-weighted companion measure (not a probability measure)."""
    return EmpiricalMeasure(rho.r, rho.w * rho.r**2, rho.pq, False)


class KernelError(NamedTuple):
    value: float
    absolute: bool


def linf_rel_error(est: RadialKernel, truth: RadialKernel, R: float, n_grid: int = 1000) -> KernelError:
    """``max |est - truth| / max |truth|`` over a uniform grid on ``[0, R]``."""
    if not R > 0:
        raise ValueError("R must be positive")
    grid = np.linspace(0.0, R, n_grid)
    t = truth(grid)
    err = float(np.max(np.abs(est(grid) - t)))
    scale = float(np.max(np.abs(t)))
    if scale < ZERO_TRUTH_TOL:
        return KernelError(err, True)
    return KernelError(err / scale, False)


def l2rho_rel_error(
    est: RadialKernel, truth: RadialKernel, rho: EmpiricalMeasure, mode: str = "atoms", n_grid: int = 1000
) -> KernelError:
    """Relative ``L^2(rho)`` error.

    ``mode="atoms"`` sums over the atoms of ``rho``; ``mode="binned"`` first
    bins the weights onto ``n_grid`` cells over the support and evaluates at
    cell centres.
    """
    if rho.r.size == 0:
        raise ValueError("empty measure")
    if mode == "atoms":
        r, w = rho.r, rho.w
    elif mode == "binned":
        w, edges = np.histogram(rho.r, bins=n_grid, range=(0.0, rho.support_max), weights=rho.w)
        r = 0.5 * (edges[1:] + edges[:-1])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    t = truth(r)
    num = float(np.sqrt(np.sum(w * (est(r) - t) ** 2)))
    den = float(np.sqrt(np.sum(w * t**2)))
    if den < ZERO_TRUTH_TOL:
        return KernelError(num, True)
    return KernelError(num / den, False)


def traj_rel_error(pred: Trajectory, truth: Trajectory, interval: Optional[tuple[float, float]] = None) -> float:
    """``max_t |X_pred(t) - X(t)| / |X(t)|`` over the common sample times.

    With ``interval`` only times inside it (endpoints included) are used.
    """
    if pred.states.shape != truth.states.shape or not np.allclose(pred.times, truth.times, rtol=0, atol=1e-12):
        raise ValueError("trajectories must share their sample times")
    sel = slice(None)
    if interval is not None:
        eps = 1e-9 * max(1.0, abs(interval[1]))
        sel = (truth.times >= interval[0] - eps) & (truth.times <= interval[1] + eps)
    X, Y = truth.states[sel], pred.states[sel]
    norms = np.linalg.norm(X.reshape(len(X), -1), axis=1)
    if np.any(norms == 0):
        raise ValueError("reference trajectory passes through the origin state")
    return float(np.max(np.linalg.norm((Y - X).reshape(len(X), -1), axis=1) / norms))


def fit_power_law(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log y`` against ``log x``."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.size < 2 or xs.shape != ys.shape:
        raise ValueError("need at least two matching points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("power-law fit needs positive data")
    slope, intercept = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope), float(intercept)


@dataclass
class ErrorReport:
    """Per-trial kernel and trajectory errors with mean/std aggregation."""

    kernel_rows: list = field(default_factory=list)
    traj_rows: list = field(default_factory=list)

    def add_kernel(self, trial: int, pq, linf: KernelError, l2rho: KernelError) -> None:
        self.kernel_rows.append(
            {"trial": trial, "pq": "%d%d" % tuple(pq), "linf": linf.value, "l2rho": l2rho.value,
             "abs_flag": int(linf.absolute or l2rho.absolute)}
        )

    def add_trajectory(self, trial: int, split: str, interval: str, err: float) -> None:
        self.traj_rows.append({"trial": trial, "split": split, "interval": interval, "traj_err": err})

    def extend(self, other: "ErrorReport") -> None:
        self.kernel_rows += other.kernel_rows
        self.traj_rows += other.traj_rows

    def values(self, metric: str, key: str) -> np.ndarray:
        """Per-trial values, e.g. ``values("l2rho", "11")`` or ``values("traj", "test:[0,T]")``."""
        if metric == "traj":
            split, interval = key.split(":")
            return np.array([r["traj_err"] for r in self.traj_rows if r["split"] == split and r["interval"] == interval])
        return np.array([r[metric] for r in self.kernel_rows if r["pq"] == key])

    def aggregate(self) -> list[dict]:
        rows = []
        for metric in ("linf", "l2rho"):
            for p, q in PAIRS:
                v = self.values(metric, f"{p}{q}")
                if v.size:
                    rows.append({"metric": metric, "key": f"{p}{q}", "mean": v.mean(), "std": v.std(), "n": v.size})
        keys = dict.fromkeys(f"{r['split']}:{r['interval']}" for r in self.traj_rows)
        for key in keys:
            v = self.values("traj", key)
            rows.append({"metric": "traj", "key": key, "mean": v.mean(), "std": v.std(), "n": v.size})
        return rows

    def write(self, directory, prefix: str = "") -> dict:
        d = Path(directory)
        paths = {
            "kernel_errors": d / f"{prefix}kernel_errors.csv",
            "trajectory_errors": d / f"{prefix}trajectory_errors.csv",
            "aggregate": d / f"{prefix}aggregate.csv",
        }
        _write_rows(paths["kernel_errors"], KERNEL_COLUMNS, self.kernel_rows)
        _write_rows(paths["trajectory_errors"], TRAJ_COLUMNS, self.traj_rows)
        _write_rows(paths["aggregate"], AGGREGATE_COLUMNS, self.aggregate())
        return paths


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, columns, rows) -> None:
    for row in rows:
        if list(row) != columns:
            raise ValueError(f"row keys {list(row)} do not match schema {columns}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
