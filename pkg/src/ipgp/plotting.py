"""Static SVG figures written with the standard library XML tools."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Optional

import numpy as np

from .dynamics import SpeciesConfig, Trajectory
from .gpcore import PosteriorCurve
from .kernels import RadialKernel
from .metrics import EmpiricalMeasure

__all__ = ["Panel", "plot_kernel", "plot_trajectories"]

_TYPE_COLORS = {1: "#1f77b4", 2: "#d62728"}


def _num(v: float) -> str:
    return f"{float(v):.3f}"


class Panel:
    """A rectangular plot area mapping data coordinates to SVG pixels."""

    def __init__(self, root, x0, y0, width, height, xlim, ylim, equal: bool = False):
        self.g = ET.SubElement(root, "g")
        self.x0, self.y0, self.w, self.h = x0, y0, width, height
        (a, b), (c, d) = xlim, ylim
        if b <= a:
            b = a + 1.0
        if d <= c:
            c, d = c - 0.5, d + 0.5
        if equal:
            span = max(b - a, d - c)
            mx, my = 0.5 * (a + b), 0.5 * (c + d)
            a, b, c, d = mx - span / 2, mx + span / 2, my - span / 2, my + span / 2
        self.xlim, self.ylim = (a, b), (c, d)
        ET.SubElement(self.g, "rect", x=_num(x0), y=_num(y0), width=_num(width), height=_num(height),
                      fill="none", stroke="#444", **{"stroke-width": "1"})

    def px(self, x):
        a, b = self.xlim
        return self.x0 + (np.asarray(x, dtype=float) - a) / (b - a) * self.w

    def py(self, y):
        c, d = self.ylim
        return self.y0 + self.h - (np.asarray(y, dtype=float) - c) / (d - c) * self.h

    def line(self, x, y, color, width=1.5, dash: Optional[str] = None, **attrs):
        pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(self.px(x), self.py(y)))
        kw = {"points": pts, "fill": "none", "stroke": color, "stroke-width": str(width), **attrs}
        if dash:
            kw["stroke-dasharray"] = dash
        return ET.SubElement(self.g, "polyline", **kw)

    def band(self, x, lo, hi, color, opacity=0.25, **attrs):
        xs = np.concatenate([x, x[::-1]])
        ys = np.concatenate([hi, lo[::-1]])
        pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(self.px(xs), self.py(ys)))
        return ET.SubElement(self.g, "polygon", points=pts, fill=color, **{"fill-opacity": str(opacity)}, **attrs)

    def dot(self, x, y, color, r=2.0):
        ET.SubElement(self.g, "circle", cx=_num(self.px(x)), cy=_num(self.py(y)), r=str(r), fill=color)

    def text(self, x, y, s, size=12, anchor="middle"):
        t = ET.SubElement(self.g, "text", x=_num(x), y=_num(y), **{"font-size": str(size), "text-anchor": anchor,
                                                                   "font-family": "sans-serif"})
        t.text = s

    def ticks(self, n=5):
        for v in np.linspace(*self.xlim, n):
            self.text(self.px(v), self.y0 + self.h + 14, f"{v:.2g}", 10)
        for v in np.linspace(*self.ylim, n):
            self.text(self.x0 - 4, self.py(v) + 3, f"{v:.2g}", 10, "end")


def _svg(width, height):
    root = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height),
                      viewBox=f"0 0 {width} {height}")
    ET.SubElement(root, "rect", width="100%", height="100%", fill="white")
    return root


def _write(root, path) -> None:
    ET.indent(root)
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)


def plot_kernel(
    curve: PosteriorCurve,
    truth: RadialKernel,
    rho: Optional[EmpiricalMeasure],
    path,
    bins: int = 40,
    title: Optional[str] = None,
) -> None:
    """Truth (black), posterior mean (blue) with a one-std band, and a grey
    histogram of the distance distribution scaled to the lower third."""
    r = curve.grid
    t = truth(r)
    std = np.nan_to_num(curve.std) if curve.variance is not None else np.zeros_like(r)
    lo, hi = curve.mean - std, curve.mean + std
    y_all = np.concatenate([t, lo, hi])
    pad = 0.05 * (y_all.max() - y_all.min() + 1e-12)
    root = _svg(480, 360)
    panel = Panel(root, 60, 30, 400, 290, (r[0], r[-1]), (y_all.min() - pad, y_all.max() + pad))
    if rho is not None and rho.r.size:
        edges, weights = rho.histogram(bins, (r[0], r[-1]))
        density = weights / np.diff(edges)
        scale = (panel.h / 3) / max(density.max(), 1e-300)
        for a, b, w, dens in zip(edges[:-1], edges[1:], weights, density):
            x0, x1 = panel.px(a), panel.px(b)
            hgt = dens * scale
            ET.SubElement(panel.g, "rect", x=_num(x0), y=_num(panel.y0 + panel.h - hgt), width=_num(x1 - x0),
                          height=_num(hgt), fill="#bbbbbb", **{"class": "hist", "data-weight": repr(float(w))})
    if curve.variance is not None:
        panel.band(r, lo, hi, "#1f77b4", **{"class": "std-band"})
    panel.line(r, t, "black", **{"class": "truth"})
    panel.line(r, curve.mean, "#1f77b4", **{"class": "mean"})
    panel.ticks()
    panel.text(260, 20, title or "phi%d%d" % curve.pq, 14)
    panel.text(260, 352, "r", 12)
    _write(root, path)


def plot_trajectories(
    truth: Trajectory, pred: Trajectory, config: SpeciesConfig, path, mark_index: Optional[int] = None, title: str = ""
) -> None:
    """Side-by-side agent paths: true dynamics left, predicted right.

    ``mark_index`` marks every agent at that sample (e.g. ``t = T``).
    """
    X = np.concatenate([truth.states, pred.states]).reshape(-1, config.dim)
    lim = ((X[:, 0].min(), X[:, 0].max()), (X[:, 1].min(), X[:, 1].max()))
    root = _svg(760, 400)
    types = config.types
    for k, (traj, name) in enumerate(((truth, "true"), (pred, "predicted"))):
        panel = Panel(root, 40 + k * 370, 40, 320, 320, *lim, equal=True)
        for i in range(config.n):
            color = _TYPE_COLORS[int(types[i])]
            panel.line(traj.states[:, i, 0], traj.states[:, i, 1], color, width=0.8)
            if mark_index is not None:
                panel.dot(traj.states[mark_index, i, 0], traj.states[mark_index, i, 1], "black", 2.2)
        panel.text(panel.x0 + 160, 30, f"{title} {name}".strip(), 14)
    _write(root, path)
