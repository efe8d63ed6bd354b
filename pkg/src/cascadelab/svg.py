"""Minimal SVG line charts and heatmaps; CSV stays the authoritative output."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 60, 150, 30, 50


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _frame(title: str, xlabel: str, ylabel: str, x0, x1, y0, y1) -> list[str]:
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{LEFT + pw / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{LEFT + pw / 2}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{TOP + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {TOP + ph / 2})">'
        f'{escape(ylabel)}</text>',
    ]
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        px = LEFT + pw * i / 4
        py = TOP + ph - ph * i / 4
        out.append(f'<text x="{px}" y="{TOP + ph + 15}" text-anchor="middle">{_fmt(fx)}</text>')
        out.append(f'<text x="{LEFT - 5}" y="{py + 4}" text-anchor="end">{_fmt(fy)}</text>')
    return out


def _scaler(x0, x1, y0, y1):
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    dx = (x1 - x0) or 1.0
    dy = (y1 - y0) or 1.0
    return (lambda x: LEFT + pw * (x - x0) / dx), (lambda y: TOP + ph - ph * (y - y0) / dy)


def line_chart(x, series: dict[str, np.ndarray], title: str = "", xlabel: str = "t",
               ylabel: str = "density", ylim=(0.0, 1.0)) -> str:
    """Lines sharing one x axis; non-finite points break a line."""
    x = np.asarray(x, float)
    x0, x1 = float(np.min(x)), float(np.max(x))
    sx, sy = _scaler(x0, x1, *ylim)
    out = _frame(title, xlabel, ylabel, x0, x1, *ylim)
    for i, (name, y) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts, paths = [], []
        for a, b in zip(x, np.asarray(y, float)):
            if math.isfinite(a) and math.isfinite(b):
                pts.append(f"{sx(a):.2f},{sy(b):.2f}")
            elif pts:
                paths.append(pts)
                pts = []
        if pts:
            paths.append(pts)
        for p in paths:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(p)}"/>')
        ly = TOP + 12 + 16 * i
        out.append(f'<line x1="{W - RIGHT + 10}" y1="{ly}" x2="{W - RIGHT + 30}" y2="{ly}" stroke="{color}"/>')
        out.append(f'<text x="{W - RIGHT + 35}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _gray(v: float) -> str:
    if not math.isfinite(v):
        return "#f4d03f"
    c = int(round(255 * (1 - min(max(v, 0.0), 1.0))))
    return f"#{c:02x}{c:02x}{c:02x}"


def heatmap(xs, ys, values, title: str = "", xlabel: str = "", ylabel: str = "",
            curves: dict[str, list[tuple[float, float]]] | None = None) -> str:
    """Grayscale map of ``values[i, j]`` at ``(xs[i], ys[j])``; darker is larger, NaN is yellow."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    v = np.asarray(values, float)
    hx = (xs[1] - xs[0]) / 2 if len(xs) > 1 else 0.5
    hy = (ys[1] - ys[0]) / 2 if len(ys) > 1 else 0.5
    x0, x1, y0, y1 = xs[0] - hx, xs[-1] + hx, ys[0] - hy, ys[-1] + hy
    sx, sy = _scaler(x0, x1, y0, y1)
    out = _frame(title, xlabel, ylabel, x0, x1, y0, y1)
    for i, a in enumerate(xs):
        for j, b in enumerate(ys):
            px, py = sx(a - hx), sy(b + hy)
            out.append(f'<rect x="{px:.2f}" y="{py:.2f}" width="{sx(a + hx) - px + 0.3:.2f}" '
                       f'height="{sy(b - hy) - py + 0.3:.2f}" fill="{_gray(v[i, j])}"/>')
    for n, (name, pts) in enumerate((curves or {}).items()):
        color = PALETTE[(n + 1) % len(PALETTE)]
        # markers rather than polylines: a boundary may consist of several branches
        for a, b in pts:
            out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="1.8" fill="{color}"/>')
        ly = TOP + 12 + 16 * n
        out.append(f'<circle cx="{W - RIGHT + 20}" cy="{ly}" r="3" fill="{color}"/>')
        out.append(f'<text x="{W - RIGHT + 35}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
