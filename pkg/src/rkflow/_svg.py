"""Minimal deterministic SVG output (no timestamps, fixed float formatting)."""

from __future__ import annotations

import math

import numpy as np


def heatmap(values, cell=8) -> str:
    """Grayscale heatmap normalized per map to [0, 1]."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0
    h, w = v.shape
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * cell}" height="{h * cell}" shape-rendering="crispEdges">']
    for i in range(h):
        for j in range(w):
            g = int(round(255 * (v[i, j] - lo) / span))
            parts.append(f'<rect x="{j * cell}" y="{i * cell}" width="{cell}" height="{cell}" fill="rgb({g},{g},{g})"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def loglog_plot(series, width=480, height=360, pad=40) -> str:
    """``series`` maps a label to ``(xs, ys)``; both axes are log10."""
    pts = [(math.log10(x), math.log10(y)) for xs, ys in series.values() for x, y in zip(xs, ys) if x > 0 and y > 0]
    if not pts:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"></svg>\n'
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    sx = (width - 2 * pad) / ((x1 - x0) or 1.0)
    sy = (height - 2 * pad) / ((y1 - y0) or 1.0)
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    parts.append(f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="black"/>')
    for k, (label, (xs, ys)) in enumerate(series.items()):
        color = palette[k % len(palette)]
        coords = [
            f"{pad + (math.log10(x) - x0) * sx:.2f},{height - pad - (math.log10(y) - y0) * sy:.2f}"
            for x, y in zip(xs, ys)
            if x > 0 and y > 0
        ]
        parts.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(coords)}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * (k + 1)}" font-size="10" fill="{color}">{label}</text>')
    parts.append(f'<text x="{width / 2:.0f}" y="{height - 8}" font-size="11" text-anchor="middle">log10 h</text>')
    parts.append(f'<text x="10" y="{height / 2:.0f}" font-size="11">log10 err</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
