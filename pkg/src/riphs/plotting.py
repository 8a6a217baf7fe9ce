"""Dependency-free SVG line plots for state and control histories."""

from __future__ import annotations

from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["line_plot_svg", "write_svg"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
WIDTH, HEIGHT = 720, 420
MARGIN = {"left": 64, "right": 120, "top": 36, "bottom": 48}


def _nice_ticks(lo, hi, count=6):
    if not np.isfinite(lo) or not np.isfinite(hi):
        return np.array([0.0])
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    step = next(mag * f for f in (1, 2, 2.5, 5, 10) if mag * f >= raw)
    first = np.ceil(lo / step - 1e-9) * step
    return np.arange(first, hi + 1e-9 * step, step)


def _num(v):
    return f"{v:.2f}"


def _label(v):
    return f"{v:.4g}"


def line_plot_svg(
    t,
    series: Sequence,
    labels: Sequence[str],
    *,
    title: str = "",
    xlabel: str = "t",
    hlines: Optional[Sequence[Optional[float]]] = None,
    step: bool = False,
) -> str:
    """SVG document with one polyline per series.

    ``hlines[i]`` (if not None) draws a dashed horizontal line in the colour
    of series ``i``; used for turnpike levels.  ``step=True`` draws
    piecewise-constant signals, each value held until the next sample.
    """
    t = np.asarray(t, dtype=float)
    ys = [np.asarray(s, dtype=float) for s in series]
    extra = [v for v in (hlines or []) if v is not None]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys] + [np.asarray(extra, dtype=float)])
    y_lo, y_hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    pad = 0.05 * (y_hi - y_lo) if y_hi > y_lo else 0.5
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = (float(t.min()), float(t.max())) if t.size else (0.0, 1.0)
    if x_hi <= x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        return MARGIN["top"] + (y_hi - v) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    x0, y0 = MARGIN["left"], MARGIN["top"]
    out.append(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for v in _nice_ticks(x_lo, x_hi):
        if x_lo <= v <= x_hi:
            px = sx(v)
            out.append(f'<line x1="{_num(px)}" y1="{y0 + ph}" x2="{_num(px)}" y2="{y0 + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{_num(px)}" y="{y0 + ph + 18}" text-anchor="middle">{_label(v)}</text>')
    for v in _nice_ticks(y_lo, y_hi):
        if y_lo <= v <= y_hi:
            py = sy(v)
            out.append(f'<line x1="{x0 - 5}" y1="{_num(py)}" x2="{x0}" y2="{_num(py)}" stroke="black"/>')
            out.append(f'<line x1="{x0}" y1="{_num(py)}" x2="{x0 + pw}" y2="{_num(py)}" stroke="#e0e0e0"/>')
            out.append(f'<text x="{x0 - 8}" y="{_num(py + 4)}" text-anchor="end">{_label(v)}</text>')
    out.append(f'<text x="{x0 + pw / 2:.2f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')

    for i, (y, name) in enumerate(zip(ys, labels)):
        colour = PALETTE[i % len(PALETTE)]
        n = min(len(y), len(t))
        if step:
            pts = []
            for k in range(n):
                right = t[k + 1] if k + 1 < len(t) else t[k]
                pts += [(t[k], y[k]), (right, y[k])]
        else:
            pts = list(zip(t[:n], y[:n]))
        pts = [(a, b) for a, b in pts if np.isfinite(b)]
        if pts:
            coords = " ".join(f"{_num(sx(a))},{_num(sy(b))}" for a, b in pts)
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
        if hlines is not None and i < len(hlines) and hlines[i] is not None:
            py = _num(sy(hlines[i]))
            out.append(f'<line x1="{x0}" y1="{py}" x2="{x0 + pw}" y2="{py}" stroke="{colour}" '
                       f'stroke-dasharray="6,4"/>')
        ly = y0 + 14 + 18 * i
        out.append(f'<line x1="{x0 + pw + 12}" y1="{ly - 4}" x2="{x0 + pw + 32}" y2="{ly - 4}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{x0 + pw + 38}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, *args, **kwargs) -> None:
    with open(path, "w") as fh:
        fh.write(line_plot_svg(*args, **kwargs))
