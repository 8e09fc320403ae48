"""Deterministic SVG rendering: line charts with mean/std bands and heatmaps.

Hand-rolled writer so the output is dependency-free, diffable, and contains no
timestamps: identical inputs produce byte-identical files.
"""

from __future__ import annotations

import math

__all__ = ["line_chart_svg", "heatmap_svg"]

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 64, 20, 28, 48
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 5, 10):
        if mult * mag >= raw:
            stp = mult * mag
            break
    start = math.ceil(lo / stp) * stp
    out = []
    t = start
    while t <= hi + 1e-12:
        out.append(round(t, 12))
        t += stp
    return out


class _Svg:
    def __init__(self, width=_W, height=_H):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]

    def add(self, s: str):
        self.parts.append(s)

    def text(self, x, y, s, size=12, anchor="middle", rotate=None):
        rot = f' transform="rotate(-90 {_fmt(x)} {_fmt(y)})"' if rotate else ""
        self.add(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="sans-serif" '
                 f'font-size="{size}" text-anchor="{anchor}"{rot}>{s}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def line_chart_svg(series: list[dict], xlabel: str, ylabel: str, title: str = "") -> str:
    """Each series: {label, x: [...], mean: [...], std: [...] (optional)}."""
    if not series or any(len(s["x"]) == 0 for s in series):
        raise ValueError("empty series")
    xs = [v for s in series for v in s["x"]]
    ys = []
    for s in series:
        std = s.get("std") or [0.0] * len(s["mean"])
        ys += [m - d for m, d in zip(s["mean"], std)]
        ys += [m + d for m, d in zip(s["mean"], std)]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    pad = 0.05 * (y_hi - y_lo or 1.0)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return _MT + ph - (y - y_lo) / (y_hi - y_lo) * ph

    svg = _Svg()
    if title:
        svg.text(_ML + pw / 2, 18, title, size=14)
    svg.add(f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" '
            f'fill="none" stroke="#333"/>')
    for t in _ticks(x_lo, x_hi):
        svg.add(f'<line x1="{_fmt(px(t))}" y1="{_MT + ph}" x2="{_fmt(px(t))}" '
                f'y2="{_MT + ph + 4}" stroke="#333"/>')
        svg.text(px(t), _MT + ph + 18, _fmt(t), size=11)
    for t in _ticks(y_lo, y_hi):
        svg.add(f'<line x1="{_ML - 4}" y1="{_fmt(py(t))}" x2="{_ML}" '
                f'y2="{_fmt(py(t))}" stroke="#333"/>')
        svg.text(_ML - 8, py(t) + 4, _fmt(t), size=11, anchor="end")
    svg.text(_ML + pw / 2, _H - 12, xlabel, size=12)
    svg.text(16, _MT + ph / 2, ylabel, size=12, rotate=True)

    for si, s in enumerate(series):
        color = _COLORS[si % len(_COLORS)]
        std = s.get("std")
        if std is not None:
            upper = [(px(x), py(m + d)) for x, m, d in zip(s["x"], s["mean"], std)]
            lower = [(px(x), py(m - d)) for x, m, d in zip(s["x"], s["mean"], std)]
            pts = upper + lower[::-1]
            path = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
            svg.add(f'<polygon points="{path}" fill="{color}" fill-opacity="0.15" '
                    f'stroke="none"/>')
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(m))}" for x, m in zip(s["x"], s["mean"]))
        svg.add(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                f'stroke-width="1.5"/>')
        ly = _MT + 16 + 16 * si
        svg.add(f'<line x1="{_ML + pw - 130}" y1="{ly - 4}" x2="{_ML + pw - 106}" '
                f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        svg.text(_ML + pw - 100, ly, s["label"], size=11, anchor="start")
    return svg.render()


def heatmap_svg(values: list[list[float]], row_labels, col_labels,
                xlabel: str, ylabel: str, title: str = "") -> str:
    """Blue-to-red heatmap with in-cell value annotations."""
    if not values or not values[0]:
        raise ValueError("empty heatmap")
    rows, cols = len(values), len(values[0])
    flat = [v for row in values for v in row]
    lo, hi = min(flat), max(flat)
    span = hi - lo or 1.0

    pw, ph = _W - _ML - _MR, _H - _MT - _MB
    cw, ch = pw / cols, ph / rows

    def color(v):
        f = (v - lo) / span
        r = int(round(40 + 200 * f))
        b = int(round(240 - 200 * f))
        return f"rgb({r},80,{b})"

    svg = _Svg()
    if title:
        svg.text(_ML + pw / 2, 18, title, size=14)
    for i in range(rows):
        for j in range(cols):
            x, y = _ML + j * cw, _MT + i * ch
            svg.add(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(cw)}" '
                    f'height="{_fmt(ch)}" fill="{color(values[i][j])}"/>')
            svg.text(x + cw / 2, y + ch / 2 + 4, _fmt(values[i][j]),
                     size=11)
    for j, lab in enumerate(col_labels):
        svg.text(_ML + (j + 0.5) * cw, _MT + ph + 18, str(lab), size=11)
    for i, lab in enumerate(row_labels):
        svg.text(_ML - 8, _MT + (i + 0.5) * ch + 4, str(lab), size=11, anchor="end")
    svg.text(_ML + pw / 2, _H - 12, xlabel, size=12)
    svg.text(16, _MT + ph / 2, ylabel, size=12, rotate=True)
    return svg.render()
