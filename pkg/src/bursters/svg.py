"""Minimal SVG line plots: polylines, markers, axes and labels."""
from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .dynsys import write_atomic

__all__ = ["Series", "Marker", "Plot", "render", "write_svg"]

_COLORS = ("#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad", "#d68910", "#555555")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    color: str | None = None
    dashed: bool = False
    width: float = 1.2


@dataclass
class Marker:
    x: float
    y: float
    label: str = ""
    filled: bool = True
    color: str = "#000000"


@dataclass
class Plot:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    series: list[Series] = field(default_factory=list)
    markers: list[Marker] = field(default_factory=list)
    width: int = 640
    height: int = 420
    xlim: tuple[float, float] | None = None
    ylim: tuple[float, float] | None = None


def _limits(values, given):
    if given is not None:
        return given
    v = np.concatenate([np.asarray(a, float).ravel() for a in values]) if values else np.zeros(1)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    pad = 0.05 * (hi - lo) if hi > lo else 0.5 * max(abs(lo), 1.0)
    return lo - pad, hi + pad


def _ticks(lo, hi, n=5):
    step = 10 ** np.floor(np.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= n:
            step *= m
            break
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def render(plot: Plot) -> str:
    """SVG document text for ``plot``."""
    W, H = plot.width, plot.height
    left, right, top, bottom = 70, 20, 30, 50
    xs = [s.x for s in plot.series] + [np.array([m.x for m in plot.markers])]
    ys = [s.y for s in plot.series] + [np.array([m.y for m in plot.markers])]
    x0, x1 = _limits(xs, plot.xlim)
    y0, y1 = _limits(ys, plot.ylim)

    def px(x):
        return left + (np.asarray(x) - x0) / (x1 - x0) * (W - left - right)

    def py(y):
        return H - bottom - (np.asarray(y) - y0) / (y1 - y0) * (H - top - bottom)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{W - left - right}" height="{H - top - bottom}" '
           'fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        X = px(t)
        out.append(f'<line x1="{X:.2f}" y1="{H - bottom}" x2="{X:.2f}" y2="{H - bottom + 4}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{H - bottom + 16}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        Y = py(t)
        out.append(f'<line x1="{left - 4}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{Y + 4:.2f}" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{(left + W - right) / 2}" y="{H - 12}" text-anchor="middle">{escape(plot.xlabel)}</text>')
    out.append(f'<text x="16" y="{(top + H - bottom) / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(top + H - bottom) / 2})">{escape(plot.ylabel)}</text>')
    if plot.title:
        out.append(f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(plot.title)}</text>')
    out.append(f'<clipPath id="plotarea"><rect x="{left}" y="{top}" width="{W - left - right}" '
               f'height="{H - top - bottom}"/></clipPath><g clip-path="url(#plotarea)">')
    for i, s in enumerate(plot.series):
        color = s.color or _COLORS[i % len(_COLORS)]
        X, Y = px(s.x), py(s.y)
        ok = np.isfinite(X) & np.isfinite(Y)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(X[ok], Y[ok]))
        dash = ' stroke-dasharray="5,3"' if s.dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{s.width}"{dash}/>')
    for m in plot.markers:
        fill = m.color if m.filled else "white"
        out.append(f'<circle cx="{px(m.x):.2f}" cy="{py(m.y):.2f}" r="4" fill="{fill}" stroke="{m.color}"/>')
        if m.label:
            out.append(f'<text x="{px(m.x) + 6:.2f}" y="{py(m.y) - 6:.2f}">{escape(m.label)}</text>')
    out.append("</g>")
    labelled = [(s, s.color or _COLORS[i % len(_COLORS)]) for i, s in enumerate(plot.series) if s.label]
    for k, (s, color) in enumerate(labelled):
        y = top + 14 + 14 * k
        out.append(f'<line x1="{W - right - 110}" y1="{y - 4}" x2="{W - right - 90}" y2="{y - 4}" stroke="{color}"/>')
        out.append(f'<text x="{W - right - 86}" y="{y}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(plot: Plot, path) -> None:
    write_atomic(path, render(plot))
