"""Radial functions: Matérn covariances, ground-truth interaction kernels,
and smooth truncation of singular kernels near the origin."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "PAIRS",
    "RadialKernel",
    "KernelSet",
    "MaternParams",
    "matern32",
    "matern32_with_grads",
    "truth_G",
    "truncate_singular",
    "truncation_coefficients",
    "preset",
    "PRESETS",
    "zero_kernel",
    "constant_kernel",
    "export_kernel_csv",
]

#: Species pair classes in canonical order (1-based, as (p, q)).
PAIRS: tuple[tuple[int, int], ...] = ((1, 1), (1, 2), (2, 1), (2, 2))

G0_CONSTANT = 0.9357796257


@dataclass(frozen=True)
class RadialKernel:
    """A real function of distance, vectorized over numpy arrays.

    ``derivative`` is optional; when present it is used by
    :func:`truncate_singular` instead of a finite difference.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    label: str = ""
    support: Optional[tuple[float, float]] = None
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.asarray(self.evaluate(r), dtype=float) * np.ones_like(r)

    def deriv(self, r, h: float = 1e-6):
        r = np.asarray(r, dtype=float)
        if self.derivative is not None:
            return np.asarray(self.derivative(r), dtype=float) * np.ones_like(r)
        return (self(r + h) - self(r - h)) / (2 * h)

    def scaled(self, c: float, label: Optional[str] = None) -> "RadialKernel":
        f, df = self.evaluate, self.derivative
        return RadialKernel(
            lambda r: c * f(r),
            label or f"{c}*{self.label}",
            self.support,
            None if df is None else (lambda r: c * df(r)),
        )


def zero_kernel(label: str = "0") -> RadialKernel:
    return RadialKernel(lambda r: np.zeros_like(r), label, derivative=lambda r: np.zeros_like(r))


def constant_kernel(c: float, label: Optional[str] = None) -> RadialKernel:
    return RadialKernel(
        lambda r: np.full_like(r, c), label or str(c), derivative=lambda r: np.zeros_like(r)
    )


@dataclass(frozen=True)
class KernelSet:
    """The four interaction kernels; ``phipq`` is the influence of type q on type p."""

    phi11: RadialKernel
    phi12: RadialKernel
    phi21: RadialKernel
    phi22: RadialKernel

    def __getitem__(self, pq: tuple[int, int]) -> RadialKernel:
        p, q = pq
        return getattr(self, f"phi{p}{q}")

    def __iter__(self) -> Iterator[RadialKernel]:
        return iter((self.phi11, self.phi12, self.phi21, self.phi22))

    def items(self):
        return zip(PAIRS, iter(self))

    def swapped(self) -> "KernelSet":
        """Kernel set for the system with the two species relabelled."""
        return KernelSet(self.phi22, self.phi21, self.phi12, self.phi11)

    @classmethod
    def from_mapping(cls, m) -> "KernelSet":
        return cls(m[(1, 1)], m[(1, 2)], m[(2, 1)], m[(2, 2)])

    @classmethod
    def uniform(cls, k: RadialKernel) -> "KernelSet":
        return cls(k, k, k, k)


@dataclass(frozen=True)
class MaternParams:
    """Matérn amplitude ``s2`` and length-scale ``omega``; smoothness fixed at 3/2."""

    s2: float = 1.0
    omega: float = 1.0
    nu: float = 1.5

    def __post_init__(self):
        if not (self.s2 > 0 and self.omega > 0):
            raise ValueError(f"Matérn parameters must be positive, got s2={self.s2}, omega={self.omega}")
        if self.nu != 1.5:
            raise ValueError("only nu = 3/2 is supported")


_SQRT3 = math.sqrt(3.0)


def matern32(params: MaternParams, r, rp):
    """Matérn-3/2 covariance ``s2 (1 + sqrt(3) h / omega) exp(-sqrt(3) h / omega)``, ``h = |r - rp|``.

    Broadcasts over ``r`` and ``rp``.
    """
    u = _SQRT3 * np.abs(np.asarray(r, dtype=float) - np.asarray(rp, dtype=float)) / params.omega
    return params.s2 * (1.0 + u) * np.exp(-u)


def matern32_with_grads(params: MaternParams, r, rp):
    """Covariance and its derivatives with respect to ``log s2`` and ``log omega``."""
    u = _SQRT3 * np.abs(np.asarray(r, dtype=float) - np.asarray(rp, dtype=float)) / params.omega
    e = np.exp(-u)
    k = params.s2 * (1.0 + u) * e
    return k, k, params.s2 * u * u * e


# ---------------------------------------------------------------------------
# Ground-truth building blocks


def _G0(x):
    return 1.0 + 2.0 * (1.0 - x) + x ** -0.25 - G0_CONSTANT


def _dG0(x):
    return -2.0 - 0.25 * x ** -1.25


def _G3(x):
    return 1.0 + (1.0 - x) + (1.0 - x) ** 2


def _dG3(x):
    return -1.0 - 2.0 * (1.0 - x)


def _G5(x):
    y = 1.0 - x
    return 1.5 * y**2 + y**3 - y**4


def _dG5(x):
    y = 1.0 - x
    return -(3.0 * y + 3.0 * y**2 - 4.0 * y**3)


_G = {"G0": (_G0, _dG0), "G3": (_G3, _dG3), "G5": (_G5, _dG5)}


def truth_G(which: str, x):
    """Evaluate one of the aggregation-model building blocks ``G0``, ``G3``, ``G5``."""
    try:
        f = _G[which][0]
    except KeyError:
        raise ValueError(f"unknown function {which!r}; expected one of {sorted(_G)}") from None
    x = np.asarray(x, dtype=float)
    if which == "G0" and np.any(x <= 0):
        raise ValueError("G0 is only defined for x > 0")
    return f(x)


def truncation_coefficients(f: RadialKernel, r_cut: float) -> tuple[float, float]:
    """Solve ``a exp(-b r_cut) = f(r_cut)`` and ``-b a exp(-b r_cut) = f'(r_cut)``."""
    fc = float(f(r_cut))
    if fc == 0.0 or not math.isfinite(fc):
        raise ValueError(f"cannot match a*exp(-b r) at r_cut={r_cut}: f(r_cut)={fc}")
    b = -float(f.deriv(r_cut)) / fc
    if not math.isfinite(b):
        raise ValueError(f"non-finite decay rate at r_cut={r_cut}")
    return fc * math.exp(b * r_cut), b


def truncate_singular(f: RadialKernel, r_cut: float) -> RadialKernel:
    """Replace ``f`` on ``[0, r_cut)`` by ``a exp(-b r)`` matching value and slope at ``r_cut``."""
    a, b = truncation_coefficients(f, r_cut)
    inner, dinner = f.evaluate, f.deriv

    def g(r):
        rr = np.maximum(r, r_cut)
        return np.where(r < r_cut, a * np.exp(-b * r), inner(rr))

    def dg(r):
        rr = np.maximum(r, r_cut)
        return np.where(r < r_cut, -b * a * np.exp(-b * r), dinner(rr))

    return RadialKernel(g, f"trunc({f.label}, {r_cut})", f.support, dg)


# ---------------------------------------------------------------------------
# Presets
#
# The published tables state kernels for the outward displacement x_i - x_i'.
# The force field here uses x_i' - x_i, so every table entry is negated.


def _rk(f, df, label):
    return RadialKernel(f, label, derivative=df)


def _repulsive() -> KernelSet:
    phi11 = truncate_singular(
        _rk(lambda r: -_G0(0.5 * r * r), lambda r: -_dG0(0.5 * r * r) * r, "-G0(r^2/2)"), 0.25
    )
    phi12 = truncate_singular(
        _rk(
            lambda r: -0.5 * _G0(0.5 * r * r),
            lambda r: -0.5 * _dG0(0.5 * r * r) * r,
            "-G0(r^2/2)/2",
        ),
        0.25,
    )
    return KernelSet(phi11, phi12, phi12, phi11)


def _linear_repulsive() -> KernelSet:
    phi11 = truncate_singular(
        _rk(
            lambda r: -(_G3(r) + 1.1158 * _G0(r)),
            lambda r: -(_dG3(r) + 1.1158 * _dG0(r)),
            "-(G3(r)+1.1158 G0(r))",
        ),
        0.5,
    )
    cross = _rk(lambda r: 4.0 * r, lambda r: np.full_like(r, 4.0), "4r")
    phi22 = truncate_singular(
        _rk(
            lambda r: -(_G5(r) + 1.3 * _G0(r)),
            lambda r: -(_dG5(r) + 1.3 * _dG0(r)),
            "-(G5(r)+1.3 G0(r))",
        ),
        0.5,
    )
    return KernelSet(phi11, cross, cross, phi22)


def _predator_prey(a: float, b: float, c: float, p: float) -> KernelSet:
    r_cut = 0.5
    phi11 = truncate_singular(
        _rk(lambda r: a - r**-2.0, lambda r: 2.0 * r**-3.0, f"{a}-r^-2"), r_cut
    )
    phi12 = truncate_singular(
        _rk(lambda r: -b * r**-2.0, lambda r: 2.0 * b * r**-3.0, f"-{b} r^-2"), r_cut
    )
    phi21 = truncate_singular(
        _rk(lambda r: c * r**-p, lambda r: -p * c * r ** (-p - 1.0), f"{c} r^-{p}"), r_cut
    )
    return KernelSet(phi11, phi12, phi21, zero_kernel())


PRESETS: dict[str, Callable[[], KernelSet]] = {
    "repulsive": _repulsive,
    "linear_repulsive": _linear_repulsive,
    "predator_prey_migratory": lambda: _predator_prey(1.0, 3.0, 0.2, 2.5),
    "predator_prey_ring": lambda: _predator_prey(1.0, 3.4, 0.9, 2.5),
}


def preset(name: str) -> KernelSet:
    """Ground-truth kernel set for one of the benchmark systems.

    Names: ``repulsive``, ``linear_repulsive``, ``predator_prey_migratory``,
    ``predator_prey_ring``.  Singular kernels come already truncated.
    """
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None


def export_kernel_csv(kernel: RadialKernel, grid: Sequence[float], path) -> None:
    grid = np.asarray(grid, dtype=float)
    values = kernel(grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "value"])
        for r, v in zip(grid, values):
            w.writerow([repr(float(r)), repr(float(v))])
