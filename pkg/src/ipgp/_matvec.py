"""Linear-time Matérn-3/2 matrix-vector product on sorted 1-D points."""

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _sorted_matvec(x, w, a):
    # sum_j (1 + a|x_i - x_j|) exp(-a|x_i - x_j|) w_j, x ascending
    n = x.shape[0]
    out = np.empty(n)
    if n == 0:
        return out
    p = w[0]
    dsum = 0.0
    out[0] = p
    for i in range(1, n):
        delta = x[i] - x[i - 1]
        e = math.exp(-a * delta)
        dsum = e * (dsum + delta * p)
        p = e * p + w[i]
        out[i] = p + a * dsum
    q = 0.0
    f = 0.0
    for i in range(n - 2, -1, -1):
        delta = x[i + 1] - x[i]
        e = math.exp(-a * delta)
        f = e * (f + delta * (q + w[i + 1]))
        q = e * (q + w[i + 1])
        out[i] += q + a * f
    return out


class SortedMatern32:
    """Apply a Matérn-3/2 Gram matrix over fixed 1-D points in O(n)."""

    def __init__(self, points, s2: float, omega: float):
        points = np.asarray(points, dtype=float).ravel()
        self.order = np.argsort(points, kind="stable")
        self.x = np.ascontiguousarray(points[self.order])
        self.s2 = float(s2)
        self.a = math.sqrt(3.0) / float(omega)

    def __call__(self, w):
        w = np.asarray(w, dtype=float).ravel()
        y = _sorted_matvec(self.x, np.ascontiguousarray(w[self.order]), self.a)
        out = np.empty_like(y)
        out[self.order] = y
        return self.s2 * out
