"""Two-species first-order particle system: force field, RK4 integration and
noisy trajectory datasets.

A state is an ``(N, d)`` array of agent positions; agents ``0..n1-1`` are
type 1 and ``n1..N-1`` are type 2.  Most functions also accept a leading batch
axis, ``(..., N, d)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .kernels import PAIRS, KernelSet

__all__ = [
    "SpeciesConfig",
    "Trajectory",
    "TrajectoryDataset",
    "IntegrationError",
    "KernelEvaluationError",
    "force_field",
    "pair_geometry",
    "integrate",
    "integrate_batch",
    "sample_initial",
    "generate_dataset",
    "predict_trajectory",
    "observation_substeps",
    "MAX_DT",
]

#: Largest RK4 step used when no explicit ``dt`` is requested.
MAX_DT = 0.05

SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]


class IntegrationError(RuntimeError):
    pass


class KernelEvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class SpeciesConfig:
    n1: int
    n2: int
    dim: int = 2

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1 or self.dim < 1:
            raise ValueError(f"need n1, n2, dim >= 1, got {self.n1}, {self.n2}, {self.dim}")

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    @property
    def types(self) -> np.ndarray:
        """Species label (1 or 2) of every agent."""
        return np.r_[np.ones(self.n1, dtype=int), np.full(self.n2, 2, dtype=int)]

    def index(self, p: int) -> slice:
        """Agent indices of species ``p``."""
        return slice(0, self.n1) if p == 1 else slice(self.n1, self.n)

    def count(self, p: int) -> int:
        return self.n1 if p == 1 else self.n2


@dataclass
class Trajectory:
    times: np.ndarray  # (L,)
    states: np.ndarray  # (L, N, d)
    velocities: np.ndarray  # (L, N, d)

    def __len__(self):
        return len(self.times)


@dataclass
class TrajectoryDataset:
    """``M`` trajectories observed at ``L`` common times, with noisy velocities.

    Arrays are stored as ``(M, L, N, d)``; flattening in C order gives the
    stacked observation vector with trajectory, then time, then agent, then
    coordinate as the index order.
    """

    config: SpeciesConfig
    times: np.ndarray
    positions: np.ndarray
    velocities: Optional[np.ndarray]
    noisy_velocities: np.ndarray
    noise_level: float = 0.0
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    @property
    def L(self) -> int:
        return self.positions.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_obs(self) -> int:
        """Length of the stacked observation vector, ``d N M L``."""
        return self.positions.size

    @property
    def trajectories(self) -> list[Trajectory]:
        vel = self.velocities if self.velocities is not None else self.noisy_velocities
        return [Trajectory(self.times.copy(), self.positions[m], vel[m]) for m in range(self.M)]

    def snapshots(self) -> np.ndarray:
        """Positions as ``(M L, N, d)``."""
        c = self.config
        return self.positions.reshape(-1, c.n, c.dim)

    def observations(self) -> np.ndarray:
        return self.noisy_velocities.reshape(-1)

    def with_observations(self, z) -> "TrajectoryDataset":
        """Copy with the noisy velocity vector replaced."""
        z = np.asarray(z, dtype=float).reshape(self.positions.shape)
        return TrajectoryDataset(
            self.config, self.times, self.positions, self.velocities, z, self.noise_level, self.seed, dict(self.meta)
        )

    def subset(self, m: Sequence[int]) -> "TrajectoryDataset":
        m = np.asarray(m)
        vel = None if self.velocities is None else self.velocities[m]
        return TrajectoryDataset(
            self.config, self.times, self.positions[m], vel, self.noisy_velocities[m],
            self.noise_level, self.seed, dict(self.meta),
        )

    # -- serialization ---------------------------------------------------

    def to_csv(self, path) -> Path:
        """Write ``m,l,t,agent,type,x0..,v0..`` rows plus a ``.meta.json`` sidecar.

        The ``v`` columns hold the observed (noisy) velocities.
        """
        path = Path(path)
        c = self.config
        types = c.types
        header = ["m", "l", "t", "agent", "type"]
        header += [f"x{a}" for a in range(c.dim)] + [f"v{a}" for a in range(c.dim)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for m in range(self.M):
                for l in range(self.L):
                    t = repr(float(self.times[l]))
                    for i in range(c.n):
                        row = [m, l, t, i, int(types[i])]
                        row += [repr(float(v)) for v in self.positions[m, l, i]]
                        row += [repr(float(v)) for v in self.noisy_velocities[m, l, i]]
                        w.writerow(row)
        meta = {
            "n1": c.n1,
            "n2": c.n2,
            "dim": c.dim,
            "M": self.M,
            "L": self.L,
            "T": self.T,
            "sigma": self.noise_level,
            "seed": self.seed,
            **self.meta,
        }
        with open(_meta_path(path), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "TrajectoryDataset":
        path = Path(path)
        with open(_meta_path(path)) as fh:
            meta = json.load(fh)
        c = SpeciesConfig(meta["n1"], meta["n2"], meta["dim"])
        M, L = meta["M"], meta["L"]
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if raw.shape != (M * L * c.n, 5 + 2 * c.dim):
            raise ValueError(f"{path}: unexpected table shape {raw.shape}")
        pos = raw[:, 5 : 5 + c.dim].reshape(M, L, c.n, c.dim)
        vel = raw[:, 5 + c.dim :].reshape(M, L, c.n, c.dim)
        times = raw[: L * c.n : c.n, 2].copy()
        extra = {k: v for k, v in meta.items() if k not in {"n1", "n2", "dim", "M", "L", "T", "sigma", "seed"}}
        return cls(c, times, pos, None, vel, float(meta["sigma"]), meta.get("seed"), extra)


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


# ---------------------------------------------------------------------------
# Force field


def pair_geometry(positions, config: SpeciesConfig, p: int, q: int):
    """Displacements ``x_k - x_i`` and distances for ``i`` of type ``p``, ``k`` of type ``q``.

    ``positions`` is ``(S, N, d)``.  Returns ``disp`` of shape ``(S, Np, Nq, d)``,
    ``dist`` of shape ``(S, Np, Nq)`` and a boolean ``(Np, Nq)`` mask that is
    False on self-pairs (only possible when ``p == q``).  Self-pair
    displacements are exactly zero.
    """
    x = np.asarray(positions, dtype=float)
    xp, xq = x[:, config.index(p)], x[:, config.index(q)]
    disp = xq[:, None, :, :] - xp[:, :, None, :]
    dist = np.sqrt(np.einsum("sikd,sikd->sik", disp, disp))
    mask = np.ones((config.count(p), config.count(q)), dtype=bool)
    if p == q:
        np.fill_diagonal(mask, False)
    return disp, dist, mask


def force_field(state, kernels: KernelSet, config: SpeciesConfig) -> np.ndarray:
    """Velocities of all agents, ``(1/N) sum_{i' != i} phi^{p q}(r) (x_i' - x_i)``.

    ``state`` is ``(..., N, d)`` or a flat ``(N d,)`` vector; the result has the
    same shape.
    """
    x = np.asarray(state, dtype=float)
    flat = x.ndim == 1
    if flat:
        x = x.reshape(config.n, config.dim)
    if x.shape[-2:] != (config.n, config.dim):
        raise ValueError(f"state shape {x.shape} does not match {config}")
    disp = x[..., None, :, :] - x[..., :, None, :]  # disp[..., i, k] = x_k - x_i
    dist = np.sqrt(np.einsum("...ikd,...ikd->...ik", disp, disp))
    v = np.zeros_like(x)
    for p, q in PAIRS:
        ip, iq = config.index(p), config.index(q)
        r = dist[..., ip, iq]
        self_pair = None
        if p == q:
            self_pair = np.eye(config.count(p), dtype=bool)
            r = np.where(self_pair, 1.0, r)
        w = kernels[(p, q)](r)
        if self_pair is not None:
            w = np.where(self_pair, 0.0, w)
        if not np.all(np.isfinite(w)):
            bad = np.argwhere(~np.isfinite(w))[0]
            i, k = bad[-2] + ip.start, bad[-1] + iq.start
            raise KernelEvaluationError(
                f"kernel phi{p}{q} is not finite for pair ({i}, {k}) at distance {float(r[tuple(bad)])!r}"
            )
        v[..., ip, :] += np.einsum("...ik,...ikd->...id", w, disp[..., ip, iq, :])
    v /= config.n
    return v.reshape(-1) if flat else v


# ---------------------------------------------------------------------------
# Integration


def observation_substeps(spacing: float, dt: Optional[float] = None) -> int:
    """Number of RK4 steps between consecutive observations."""
    if dt is None:
        return max(10, math.ceil(spacing / MAX_DT - 1e-9))
    if dt <= 0:
        raise ValueError("dt must be positive")
    k = round(spacing / dt)
    if k < 1 or abs(k * dt - spacing) > 1e-9 * max(spacing, 1.0):
        raise ValueError(f"dt={dt} does not divide the observation spacing {spacing}")
    return k


def integrate_batch(
    initial,
    kernels: KernelSet,
    config: SpeciesConfig,
    t_span: tuple[float, float],
    n_obs: int,
    dt: Optional[float] = None,
):
    """Classical RK4 for a batch of initial states ``(B, N, d)``.

    Returns ``(times, states, velocities)`` with ``states`` shaped
    ``(B, n_obs, N, d)``; velocities are exact force evaluations at the
    recorded states.
    """
    t0, t1 = map(float, t_span)
    x = np.array(initial, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if n_obs == 1:
        times = np.array([t0])
        states = x[:, None].copy()
        return times, states, force_field(states, kernels, config)
    if not t1 > t0 or n_obs < 2:
        raise ValueError("need t1 > t0 and n_obs >= 2")
    times = np.linspace(t0, t1, n_obs)
    spacing = (t1 - t0) / (n_obs - 1)
    nsub = observation_substeps(spacing, dt)
    h = spacing / nsub
    states = np.empty((x.shape[0], n_obs) + x.shape[1:])
    states[:, 0] = x
    f = lambda y: force_field(y, kernels, config)
    step = 0
    for j in range(1, n_obs):
        for _ in range(nsub):
            # blow-up is detected below, so overflow inside the stages is not reported twice
            with np.errstate(over="ignore", invalid="ignore"):
                k1 = f(x)
                k2 = f(x + 0.5 * h * k1)
                k3 = f(x + 0.5 * h * k2)
                k4 = f(x + h * k3)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            step += 1
            if not np.all(np.isfinite(x)):
                raise IntegrationError(f"non-finite state at step {step}, t={t0 + step * h:.6g}")
        states[:, j] = x
    return times, states, f(states)


def integrate(initial, kernels, config, t_span, n_obs, dt=None) -> Trajectory:
    times, states, vel = integrate_batch(np.asarray(initial)[None], kernels, config, t_span, n_obs, dt)
    return Trajectory(times, states[0], vel[0])


def predict_trajectory(initial, learned: KernelSet, config, t_span, n_obs, dt=None) -> Trajectory:
    """Integrate the system driven by learned kernels (see ``PosteriorCurve.as_kernel``)."""
    return integrate(initial, learned, config, t_span, n_obs, dt)


# ---------------------------------------------------------------------------
# Sampling


def sample_initial(config: SpeciesConfig, rng: SeedLike = None, size: Optional[int] = None) -> np.ndarray:
    """I.i.d. Uniform[-1, 1] coordinates, ``(N, d)`` or ``(size, N, d)``."""
    rng = np.random.default_rng(rng)
    shape = (config.n, config.dim) if size is None else (size, config.n, config.dim)
    return rng.uniform(-1.0, 1.0, shape)


def _child_generators(rng: SeedLike, n: int) -> list[np.random.Generator]:
    if isinstance(rng, np.random.Generator):
        return rng.spawn(n)
    ss = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def generate_dataset(
    config: SpeciesConfig,
    kernels: KernelSet,
    M: int,
    L: int,
    T: float,
    sigma: float,
    rng: SeedLike = None,
    dt: Optional[float] = None,
) -> TrajectoryDataset:
    """Simulate ``M`` trajectories on ``[0, T]``, observe at ``L`` equidistant
    times and add ``N(0, sigma^2)`` noise to every velocity coordinate.

    Trajectory ``m`` draws its initial condition and its noise from the
    ``m``-th child of ``rng``, so results do not depend on batching.
    """
    if M < 1 or L < 1:
        raise ValueError("M and L must be >= 1")
    if not T > 0:
        raise ValueError("T must be positive")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    gens = _child_generators(rng, M)
    x0 = np.stack([sample_initial(config, g) for g in gens])
    times, states, vel = integrate_batch(x0, kernels, config, (0.0, T), L, dt)
    if L == 1:
        times = np.array([0.0])
    noise = np.stack([g.standard_normal((L, config.n, config.dim)) for g in gens])
    noisy = vel + sigma * noise if sigma > 0 else vel.copy()
    return TrajectoryDataset(config, times, states, vel, noisy, float(sigma), seed)
