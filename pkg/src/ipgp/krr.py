"""Kernel ridge regression of the interaction kernels in representer form.

This is a deliberately plain implementation: explicit displacement matrices,
explicit Gram matrices and a dense LU solve.  It serves as an independent
reference for the GP posterior, which coincides with it under the prior
``sigma^2 K / (M N L lam)``.

With pair-class penalties ``lam_pq`` the minimizer of

    (1/(M L N)) sum_{m,l} |F_phi(X^(m,l)) - Z^(m,l)|^2 + sum_pq lam_pq |phi^pq|^2_H

is ``phi^pq = sum_r c_r K^pq(r, .)`` with

    c^pq = (1/(N lam_pq)) A_pq^T (sum_q' K_F^q' / lam_q' + N M L I)^{-1} Z,

where ``K_F^pq = A_pq G_pq A_pq^T / N^2``.  For a common penalty this is
``(1/N) A^T (K_F + lam N M L I)^{-1} Z``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dynamics import TrajectoryDataset
from .kernels import PAIRS, MaternParams, matern32

__all__ = [
    "RepresenterModel",
    "displacement_matrix",
    "krr_fit",
    "krr_evaluate",
    "variance_identity_gap",
    "empirical_risk",
]


@dataclass
class RepresenterModel:
    """Atom distances, coefficients, penalties and base kernels per pair class."""

    atoms: dict
    coefficients: dict
    lam: dict
    base: dict

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pq", "atom_r", "coeff"])
            for p, q in PAIRS:
                for r, c in zip(self.atoms[(p, q)], self.coefficients[(p, q)]):
                    w.writerow([f"{p}{q}", repr(float(r)), repr(float(c))])


def _per_pair(value) -> dict:
    if isinstance(value, dict):
        return {pq: value[pq] for pq in PAIRS}
    if isinstance(value, MaternParams) or np.ndim(value) == 0:
        return {pq: value for pq in PAIRS}
    return dict(zip(PAIRS, value))


def displacement_matrix(dataset: TrajectoryDataset, pq):
    """Dense ``(dNML, n_atoms)`` matrix ``A_pq`` and the atom distances.

    Column ``(s, i, k)`` holds ``x_k - x_i`` in the rows of agent ``i`` of
    snapshot ``s``; self-pairs are not atoms.
    """
    c = dataset.config
    p, q = pq
    X = dataset.snapshots()
    S, N, d = X.shape
    cols, dists = [], []
    for s in range(S):
        for i in range(N)[c.index(p)]:
            for k in range(N)[c.index(q)]:
                if k == i:
                    continue
                col = np.zeros((S, N, d))
                col[s, i] = X[s, k] - X[s, i]
                cols.append(col.reshape(-1))
                dists.append(np.linalg.norm(X[s, k] - X[s, i]))
    if not cols:
        return np.zeros((S * N * d, 0)), np.zeros(0)
    return np.stack(cols, axis=1), np.array(dists)


def _system(dataset: TrajectoryDataset, lam: dict, base: dict):
    N = dataset.config.n
    parts = {}
    K = np.zeros((dataset.n_obs, dataset.n_obs))
    for pq in PAIRS:
        if not lam[pq] > 0:
            raise ValueError(f"penalty for phi{pq[0]}{pq[1]} must be positive")
        A, r = displacement_matrix(dataset, pq)
        G = matern32(base[pq], r[:, None], r[None, :])
        parts[pq] = (A, r, G)
        K += A @ G @ A.T / (N**2 * lam[pq])
    K[np.diag_indices_from(K)] += N * dataset.M * dataset.L
    return K, parts


def krr_fit(dataset: TrajectoryDataset, lam, base_kernels, targets=None) -> RepresenterModel:
    """Representer coefficients of the ridge estimator.

    ``targets`` replaces the observed velocities (flattened like
    ``dataset.observations()``) when given.
    """
    lam, base = _per_pair(lam), _per_pair(base_kernels)
    z = dataset.observations() if targets is None else np.asarray(targets, dtype=float).ravel()
    K, parts = _system(dataset, lam, base)
    alpha = linalg.lu_solve(linalg.lu_factor(K), z)
    assert np.all(np.isfinite(alpha)), "singular ridge system"
    N = dataset.config.n
    atoms, coef = {}, {}
    for pq, (A, r, _) in parts.items():
        atoms[pq] = r
        coef[pq] = A.T @ alpha / (N * lam[pq])
    return RepresenterModel(atoms, coef, lam, base)


def krr_evaluate(model: RepresenterModel, r_star, pq):
    """``sum_atoms c K^pq(atom, r_star)``; scalar in, scalar out."""
    pq = tuple(pq)
    r = np.atleast_1d(np.asarray(r_star, dtype=float))
    val = matern32(model.base[pq], r[:, None], model.atoms[pq][None, :]) @ model.coefficients[pq]
    return float(val[0]) if np.ndim(r_star) == 0 else val


def variance_identity_gap(dataset: TrajectoryDataset, lam, base_kernels, r_star: float, pq, sigma=None):
    """``|Var_GP - sigma^2/(M L lam N) (K(r*, r*) - K_lam(r*))|`` at one point.

    The left side is the GP posterior variance under the rescaled prior; the
    right side uses the ridge estimator trained on the noise-free force field
    of the section ``K^pq(r*, .)``.
    """
    from .gpcore import GPHyperparams, fit, posterior

    pq = tuple(pq)
    lam, base = _per_pair(lam), _per_pair(base_kernels)
    sigma = dataset.noise_level if sigma is None else sigma
    M, L, N = dataset.M, dataset.L, dataset.config.n
    hp = GPHyperparams.scaled_prior([base[k] for k in PAIRS], [lam[k] for k in PAIRS], sigma, M, N, L)
    _, lhs = posterior(fit(dataset, hp), r_star, pq)

    A, r = displacement_matrix(dataset, pq)
    target = A @ matern32(base[pq], r, r_star) / N
    section = krr_fit(dataset, lam, base, targets=target)
    rhs = sigma**2 / (M * L * lam[pq] * N) * (base[pq].s2 - krr_evaluate(section, r_star, pq))
    return abs(lhs - rhs)


def _force(dataset: TrajectoryDataset, model: RepresenterModel):
    N = dataset.config.n
    out = np.zeros(dataset.n_obs)
    for pq in PAIRS:
        A, r = displacement_matrix(dataset, pq)
        out += A @ (matern32(model.base[pq], r[:, None], model.atoms[pq][None, :]) @ model.coefficients[pq]) / N
    return out


def empirical_risk(dataset: TrajectoryDataset, candidate: RepresenterModel, lam=None) -> float:
    """Regularized least-squares risk of an atom expansion.

    The data term averages ``|F - Z|^2 / N`` over the ``M L`` snapshots; the
    penalty uses ``c^T G c`` for each RKHS norm.
    """
    lam = _per_pair(candidate.lam if lam is None else lam)
    resid = _force(dataset, candidate) - dataset.observations()
    N = dataset.config.n
    risk = resid @ resid / (dataset.M * dataset.L * N)
    for pq in PAIRS:
        a, c = candidate.atoms[pq], candidate.coefficients[pq]
        risk += lam[pq] * c @ matern32(candidate.base[pq], a[:, None], a[None, :]) @ c
    return float(risk)
