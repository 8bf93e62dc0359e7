"""Exact Gaussian-process regression of the four interaction kernels.

Each ``phi^{pq}`` carries an independent zero-mean GP prior with a Matérn-3/2
covariance.  Because the force field is linear in the kernels, the stacked
velocity observations are jointly Gaussian with covariance

    K = (1/N^2) sum_{pq} A_pq G_pq A_pq^T,

where ``A_pq`` maps pair atoms ``(snapshot, i, k)`` to the displacement
``x_k - x_i`` in the row of agent ``i`` and ``G_pq`` is the Matérn Gram
matrix over pair distances.  Observation vectors are flattened in
(trajectory, time, agent, coordinate) order.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.sparse.linalg import LinearOperator, cg

from ._matvec import SortedMatern32
from .dynamics import SpeciesConfig, TrajectoryDataset, pair_geometry
from .kernels import PAIRS, MaternParams, RadialKernel, matern32

__all__ = [
    "DENSE_CAP",
    "CovarianceError",
    "DenseCapError",
    "OptimizationWarning",
    "GPHyperparams",
    "TrainedGP",
    "PosteriorCurve",
    "Design",
    "assemble_train_cov",
    "assemble_cross_cov",
    "nlml",
    "nlml_grad",
    "optimize_hyperparams",
    "fit",
    "fit_iterative",
    "posterior",
    "posterior_curve",
    "data_radius",
]

#: Largest observation vector handled by the dense Cholesky path.
DENSE_CAP = 4000

_JITTERS = tuple(10.0**k for k in range(-12, -5))
_CHUNK = 2_000_000
_SQRT3 = math.sqrt(3.0)

#: Box constraints in log space used by :func:`optimize_hyperparams`.
LOG_BOUNDS = {
    "s2": (math.log(1e-10), math.log(1e6)),
    "omega": (math.log(1e-3), math.log(1e3)),
    "sigma": (math.log(1e-6), math.log(10.0)),
}


class CovarianceError(RuntimeError):
    pass


class DenseCapError(ValueError):
    pass


class OptimizationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GPHyperparams:
    """Matérn parameters for the four kernels (ordered as ``PAIRS``) and the noise std."""

    theta: tuple[MaternParams, MaternParams, MaternParams, MaternParams]
    sigma: float

    def __post_init__(self):
        if len(self.theta) != 4:
            raise ValueError("need four Matérn parameter sets")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    def __getitem__(self, pq) -> MaternParams:
        return self.theta[PAIRS.index(tuple(pq))]

    def log_vector(self, include_sigma: bool = True) -> np.ndarray:
        v = [f(x) for t in self.theta for x, f in ((t.s2, math.log), (t.omega, math.log))]
        if include_sigma:
            v.append(math.log(self.sigma))
        return np.array(v)

    @classmethod
    def from_log_vector(cls, v, sigma: Optional[float] = None) -> "GPHyperparams":
        v = np.asarray(v, dtype=float)
        theta = tuple(MaternParams(math.exp(v[2 * j]), math.exp(v[2 * j + 1])) for j in range(4))
        return cls(theta, math.exp(v[8]) if sigma is None else sigma)

    def with_sigma(self, sigma: float) -> "GPHyperparams":
        return GPHyperparams(self.theta, sigma)

    @classmethod
    def uniform(cls, params: MaternParams, sigma: float) -> "GPHyperparams":
        return cls((params,) * 4, sigma)

    @classmethod
    def default(cls, dataset: TrajectoryDataset, sigma: Optional[float] = None) -> "GPHyperparams":
        """``s2 = 1``, ``omega = max(0.2 R, 0.1)`` with ``R`` the largest observed
        distance of the pair class, and ``sigma = max(noise level, 1e-3)``."""
        radius = data_radius(dataset)
        theta = tuple(MaternParams(1.0, max(0.2 * radius[pq], 0.1)) for pq in PAIRS)
        s = dataset.noise_level if sigma is None else sigma
        return cls(theta, max(float(s), 1e-3))

    @classmethod
    def scaled_prior(cls, base, lam, sigma: float, M: int, N: int, L: int) -> "GPHyperparams":
        """Prior ``sigma^2 K / (M N L lam)`` per pair class, under which the
        posterior mean is the kernel ridge estimator with penalty ``lam``."""
        base = tuple(base) if not isinstance(base, MaternParams) else (base,) * 4
        lam = np.broadcast_to(np.asarray(lam, dtype=float), (4,))
        theta = tuple(
            MaternParams(sigma**2 * b.s2 / (M * N * L * l), b.omega) for b, l in zip(base, lam)
        )
        return cls(theta, sigma)

    def to_dict(self) -> dict:
        d = {f"phi{p}{q}": {"s2": t.s2, "omega": t.omega, "nu": t.nu} for (p, q), t in zip(PAIRS, self.theta)}
        d["sigma"] = self.sigma
        return d

    @classmethod
    def from_dict(cls, d) -> "GPHyperparams":
        theta = tuple(MaternParams(d[f"phi{p}{q}"]["s2"], d[f"phi{p}{q}"]["omega"]) for p, q in PAIRS)
        return cls(theta, d["sigma"])

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GPHyperparams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class Design:
    """Pair geometry of a set of snapshots, shared by all covariance routines."""

    def __init__(self, positions, config: SpeciesConfig):
        x = np.asarray(positions, dtype=float)
        self.config = config
        self.positions = x.reshape(-1, config.n, config.dim)
        self.S = self.positions.shape[0]
        self.geo = {pq: pair_geometry(self.positions, config, *pq) for pq in PAIRS}

    @classmethod
    def from_dataset(cls, dataset: TrajectoryDataset) -> "Design":
        return cls(dataset.positions, dataset.config)

    @property
    def n(self) -> int:
        return self.S * self.config.n * self.config.dim

    def atoms(self, pq) -> np.ndarray:
        """Pair distances of class ``pq``, self-pairs excluded."""
        _, dist, mask = self.geo[pq]
        return dist[:, mask].ravel()


def data_radius(dataset: TrajectoryDataset) -> dict:
    """Largest pair distance per class (0 when a class has no pairs)."""
    design = Design.from_dataset(dataset)
    return {pq: float(design.atoms(pq).max(initial=0.0)) for pq in PAIRS}


# ---------------------------------------------------------------------------
# Covariance assembly


def _gram_contract(geo1, geo2, params: MaternParams, outputs=("k",)):
    """``sum_{k,k'} g(r_ik, r'_jk') (x_k - x_i)_a (x'_k' - x'_j)_b`` for every
    pair of agent rows; returns one ``(S1 P d, S2 P' d)`` array per output.

    ``outputs`` selects ``g``: ``"k"`` is the Matérn covariance, ``"domega"``
    its derivative with respect to ``log omega``.
    """
    disp1, dist1 = geo1
    disp2, dist2 = geo2
    S1, P1, Q, d = disp1.shape
    S2, P2 = disp2.shape[:2]
    J = S2 * P2
    a = _SQRT3 / params.omega
    r2 = dist2.reshape(-1)
    D2 = disp2.reshape(J, Q, d)
    out = [np.empty((S1 * P1 * d, J * d)) for _ in outputs]
    step = max(1, _CHUNK // max(1, P1 * Q * r2.size))
    for s0 in range(0, S1, step):
        s1 = min(S1, s0 + step)
        I = (s1 - s0) * P1
        u = a * np.abs(dist1[s0:s1].reshape(-1)[:, None] - r2[None, :])
        e = np.exp(-u)
        D1t = disp1[s0:s1].reshape(I, Q, d).transpose(0, 2, 1)
        for o, name in zip(out, outputs):
            g = (1.0 + u) * e if name == "k" else u * u * e
            g *= params.s2
            # contract the right neighbour index, then the left one
            H = np.matmul(g.reshape(I * Q, J, Q).transpose(1, 0, 2), D2)  # (J, I*Q, d)
            H = H.reshape(J, I, Q, d).transpose(1, 2, 0, 3).reshape(I, Q, J * d)
            o[s0 * P1 * d : s1 * P1 * d] = np.matmul(D1t, H).reshape(I * d, J * d)
    return out


def _train_blocks(design: Design, hp: GPHyperparams, outputs=("k",)):
    """Per pair class, the unscaled covariance blocks on type-p rows."""
    return {
        pq: _gram_contract(design.geo[pq][:2], design.geo[pq][:2], hp[pq], outputs) for pq in PAIRS
    }


def _assemble(design: Design, blocks) -> np.ndarray:
    c = design.config
    S, N, d = design.S, c.n, c.dim
    K = np.zeros((S, N, d, S, N, d))
    for (p, q), blk in blocks.items():
        ip = c.index(p)
        K[:, ip, :, :, ip, :] += blk[0].reshape(S, c.count(p), d, S, c.count(p), d)
    K = K.reshape(design.n, design.n) / N**2
    return 0.5 * (K + K.T)


def assemble_train_cov(dataset, hp: GPHyperparams) -> np.ndarray:
    """Covariance of the stacked noise-free velocities, ``(dNML, dNML)``.

    Rows of agents of different species are uncorrelated, so the
    corresponding blocks are exactly zero.
    """
    design = dataset if isinstance(dataset, Design) else Design.from_dataset(dataset)
    return _assemble(design, _train_blocks(design, hp))


def _cross_cov(design: Design, r_star, pq, params: MaternParams) -> np.ndarray:
    c = design.config
    p, q = pq
    disp, dist, _ = design.geo[pq]
    r_star = np.atleast_1d(np.asarray(r_star, dtype=float))
    g = matern32(params, dist[..., None], r_star)  # (S, Np, Nq, G)
    blk = np.einsum("sikg,sika->siag", g, disp)
    out = np.zeros((design.S, c.n, c.dim, r_star.size))
    out[:, c.index(p)] = blk
    return out.reshape(design.n, r_star.size) / c.n


def assemble_cross_cov(dataset, r_star, pq, hp: GPHyperparams) -> np.ndarray:
    """``Cov(observations, phi^{pq}(r_star))``: a vector for scalar ``r_star``,
    otherwise ``(dNML, len(r_star))``."""
    design = dataset if isinstance(dataset, Design) else Design.from_dataset(dataset)
    k = _cross_cov(design, r_star, tuple(pq), hp[pq])
    return k[:, 0] if np.ndim(r_star) == 0 else k


# ---------------------------------------------------------------------------
# Likelihood


def _factor(K: np.ndarray, sigma: float):
    """Cholesky factor of ``K + sigma^2 I``, escalating diagonal jitter on failure."""
    A = K.copy()
    A[np.diag_indices_from(A)] += sigma**2
    try:
        return linalg.cholesky(A, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(A))) or 1.0
    for j in _JITTERS:
        B = A.copy()
        B[np.diag_indices_from(B)] += j * scale
        try:
            return linalg.cholesky(B, lower=True, check_finite=False), j * scale
        except linalg.LinAlgError:
            continue
    raise CovarianceError(
        f"covariance not positive definite even with jitter {_JITTERS[-1]:g} x mean diagonal "
        f"({scale:.3g}); min diagonal {np.min(np.diag(A)):.3g}"
    )


def _check_dense(n: int) -> None:
    if n > DENSE_CAP:
        raise DenseCapError(
            f"observation vector of length {n} exceeds the dense limit {DENSE_CAP}; "
            "subsample trajectories or use the iterative solver"
        )


def _nlml_parts(design: Design, z, hp: GPHyperparams, with_grad: bool):
    _check_dense(design.n)
    outputs = ("k", "domega") if with_grad else ("k",)
    blocks = _train_blocks(design, hp, outputs)
    K = _assemble(design, blocks)
    L, _ = _factor(K, hp.sigma)
    gamma = linalg.cho_solve((L, True), z, check_finite=False)
    n = z.size
    value = 0.5 * z @ gamma + np.sum(np.log(np.diag(L))) + 0.5 * n * math.log(2 * math.pi)
    if not with_grad:
        return value, None
    Kinv = linalg.cho_solve((L, True), np.eye(n), check_finite=False)
    W = np.outer(gamma, gamma) - Kinv
    c = design.config
    S, N, d = design.S, c.n, c.dim
    W6 = W.reshape(S, N, d, S, N, d)
    grad = np.empty(9)
    for j, (p, q) in enumerate(PAIRS):
        ip = c.index(p)
        Wp = W6[:, ip, :, :, ip, :].reshape(blocks[(p, q)][0].shape)
        for k, blk in enumerate(blocks[(p, q)]):
            grad[2 * j + k] = -0.5 * np.sum(Wp * blk) / N**2
    grad[8] = -0.5 * 2.0 * hp.sigma**2 * (gamma @ gamma - np.trace(Kinv))
    return value, grad


def nlml(dataset: TrajectoryDataset, hp: GPHyperparams) -> float:
    """Negative log marginal likelihood of the noisy velocities."""
    return float(_nlml_parts(Design.from_dataset(dataset), dataset.observations(), hp, False)[0])


def nlml_grad(dataset: TrajectoryDataset, hp: GPHyperparams) -> np.ndarray:
    """Gradient of :func:`nlml` with respect to
    ``(log s2_11, log omega_11, ..., log s2_22, log omega_22, log sigma)``."""
    return _nlml_parts(Design.from_dataset(dataset), dataset.observations(), hp, True)[1]


def optimize_hyperparams(
    dataset: TrajectoryDataset,
    init: GPHyperparams,
    max_iters: int = 50,
    fix_sigma: bool = False,
) -> GPHyperparams:
    """Minimize the NLML over log-parameters with L-BFGS (memory 10).

    Returns the best iterate seen.  Emits :class:`OptimizationWarning` when
    the line search fails; the best point so far is still returned.
    """
    design = Design.from_dataset(dataset)
    z = dataset.observations()
    x0 = init.log_vector(include_sigma=not fix_sigma)
    bounds = [LOG_BOUNDS["s2"], LOG_BOUNDS["omega"]] * 4
    if not fix_sigma:
        bounds.append(LOG_BOUNDS["sigma"])
    x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])
    pinned = init.sigma if fix_sigma else None
    best = {"f": math.inf, "x": x0.copy()}

    def objective(x):
        hp = GPHyperparams.from_log_vector(x, pinned)
        try:
            f, g = _nlml_parts(design, z, hp, True)
        except CovarianceError:
            return math.inf, np.zeros_like(x)
        if f < best["f"]:
            best["f"], best["x"] = f, x.copy()
        return f, (g[:8] if fix_sigma else g)

    res = optimize.minimize(
        objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
        options={"maxiter": max_iters, "maxcor": 10},
    )
    if not res.success and "ABNORMAL" in str(res.message).upper():
        warnings.warn(f"line search failed: {res.message}", OptimizationWarning, stacklevel=2)
    if not math.isfinite(best["f"]):
        raise CovarianceError("no hyperparameter setting gave a factorizable covariance")
    return GPHyperparams.from_log_vector(best["x"], pinned)


# ---------------------------------------------------------------------------
# Fitting and prediction


@dataclass
class TrainedGP:
    """A GP conditioned on a dataset.

    ``chol`` is the lower Cholesky factor of ``K + sigma^2 I`` (plus ``jitter``
    on the diagonal) and ``gamma`` the weight vector solving the system.
    Models fitted iteratively keep ``chol = None`` and only provide means.
    """

    dataset: TrajectoryDataset
    hyperparams: GPHyperparams
    chol: Optional[np.ndarray]
    gamma: np.ndarray
    jitter: float = 0.0
    design: Optional[Design] = field(default=None, repr=False)

    def __post_init__(self):
        if self.design is None:
            self.design = Design.from_dataset(self.dataset)

    def atom_coefficients(self, pq) -> tuple[np.ndarray, np.ndarray]:
        """Distances and weights ``c`` with ``mean(r) = sum c K(atom, r)``."""
        c = self.design.config
        p, _ = pq
        disp, dist, mask = self.design.geo[tuple(pq)]
        G = self.gamma.reshape(self.design.S, c.n, c.dim)[:, c.index(p)]
        coef = np.einsum("sikd,sid->sik", disp, G) / c.n
        return dist[:, mask].ravel(), coef[:, mask].ravel()


def fit(dataset: TrajectoryDataset, hp: GPHyperparams) -> TrainedGP:
    design = Design.from_dataset(dataset)
    _check_dense(design.n)
    K = assemble_train_cov(design, hp)
    L, jitter = _factor(K, hp.sigma)
    gamma = linalg.cho_solve((L, True), dataset.observations(), check_finite=False)
    return TrainedGP(dataset, hp, L, gamma, jitter, design)


def _train_operator(design: Design, hp: GPHyperparams):
    c = design.config
    S, N, d = design.S, c.n, c.dim
    parts = []
    diag = np.zeros((S, N, d))
    for pq in PAIRS:
        disp, dist, _ = design.geo[pq]
        ip = c.index(pq[0])
        parts.append((ip, disp, SortedMatern32(dist, hp[pq].s2, hp[pq].omega)))
        g = matern32(hp[pq], dist[..., :, None], dist[..., None, :])
        diag[:, ip] += np.einsum("sikl,sika,sila->sia", g, disp, disp)
    diag = diag.reshape(-1) / N**2 + hp.sigma**2

    def matvec(v):
        V = np.asarray(v).reshape(S, N, d)
        out = np.zeros_like(V)
        for ip, disp, gram in parts:
            w = np.einsum("sikd,sid->sik", disp, V[:, ip])
            gw = gram(w).reshape(w.shape)
            out[:, ip] += np.einsum("sikd,sik->sid", disp, gw)
        return out.reshape(-1) / N**2 + hp.sigma**2 * np.asarray(v).reshape(-1)

    return LinearOperator((design.n, design.n), matvec=matvec, dtype=float), diag


def fit_iterative(
    dataset: TrajectoryDataset, hp: GPHyperparams, rtol: float = 1e-8, maxiter: int = 50_000
) -> TrainedGP:
    """Solve for ``gamma`` by preconditioned conjugate gradients without forming K.

    Matrix-vector products cost O(number of pairs) through the sorted
    Matérn recurrence, so datasets far beyond the dense limit fit in memory.
    The resulting model provides posterior means only.
    """
    if not hp.sigma > 0:
        raise ValueError("the iterative solver needs sigma > 0")
    design = Design.from_dataset(dataset)
    op, diag = _train_operator(design, hp)
    z = dataset.observations()
    precond = LinearOperator(op.shape, matvec=lambda v: v / diag, dtype=float)
    gamma, info = cg(op, z, rtol=rtol, atol=0.0, maxiter=maxiter, M=precond)
    if info != 0:
        raise CovarianceError(f"conjugate gradients did not converge within {maxiter} iterations")
    return TrainedGP(dataset, hp, None, gamma, 0.0, design)


def posterior(model: TrainedGP, r_star, pq):
    """Posterior mean and variance of ``phi^{pq}`` at ``r_star`` (scalar or array)."""
    pq = tuple(pq)
    r = np.atleast_1d(np.asarray(r_star, dtype=float))
    if model.chol is None:
        mean = _atom_mean(model, r, pq)
        var = np.full_like(mean, np.nan)
    else:
        params = model.hyperparams[pq]
        k = _cross_cov(model.design, r, pq, params)
        mean = k.T @ model.gamma
        v = linalg.solve_triangular(model.chol, k, lower=True, check_finite=False)
        var = params.s2 - np.einsum("ij,ij->j", v, v)
    if np.ndim(r_star) == 0:
        return float(mean[0]), float(var[0])
    return mean, var


def _atom_mean(model: TrainedGP, r, pq) -> np.ndarray:
    atoms, coef = model.atom_coefficients(pq)
    params = model.hyperparams[pq]
    out = np.zeros(r.size)
    step = max(1, _CHUNK // max(1, r.size))
    for j in range(0, atoms.size, step):
        out += coef[j : j + step] @ matern32(params, atoms[j : j + step, None], r[None, :])
    return out


@dataclass
class PosteriorCurve:
    pq: tuple[int, int]
    grid: np.ndarray
    mean: np.ndarray
    variance: Optional[np.ndarray] = None

    @property
    def std(self) -> np.ndarray:
        if self.variance is None:
            return np.full_like(self.mean, np.nan)
        return np.sqrt(self.variance)

    def as_kernel(self, label: Optional[str] = None) -> RadialKernel:
        """Piecewise-linear interpolant of the mean, constant beyond the grid."""
        grid, mean = self.grid.copy(), self.mean.copy()
        return RadialKernel(
            lambda r: np.interp(r, grid, mean),
            label or "phi%d%d (learned)" % self.pq,
            (float(grid[0]), float(grid[-1])),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "mean", "std"])
            for row in zip(self.grid, self.mean, self.std):
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path, pq) -> "PosteriorCurve":
        a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        var = None if np.all(np.isnan(a[:, 2])) else a[:, 2] ** 2
        return cls(tuple(pq), a[:, 0], a[:, 1], var)


def posterior_curve(model: TrainedGP, pq, grid: Sequence[float], variance: bool = True) -> PosteriorCurve:
    """Posterior over a sorted grid, reusing the stored factorization.

    Negative variances from rounding are checked against the prior amplitude
    and clamped to zero.
    """
    pq = tuple(pq)
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted")
    if model.chol is None or not variance:
        if model.chol is None:
            mean = _atom_mean(model, grid, pq)
        else:
            mean = _cross_cov(model.design, grid, pq, model.hyperparams[pq]).T @ model.gamma
        return PosteriorCurve(pq, grid, mean, None)
    means, variances = [], []
    step = max(1, _CHUNK // max(1, model.design.n))
    for j in range(0, grid.size, step):
        m, v = posterior(model, grid[j : j + step], pq)
        means.append(m)
        variances.append(v)
    mean, var = np.concatenate(means), np.concatenate(variances)
    s2 = model.hyperparams[pq].s2
    if np.any(var < -1e-10 * s2):
        raise CovarianceError(f"posterior variance {var.min():.3g} is negative beyond rounding")
    return PosteriorCurve(pq, grid, mean, np.maximum(var, 0.0))
