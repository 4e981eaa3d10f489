"""Tiny SVG writer for line and scatter plots."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n)


def plot(path, series, title="", xlabel="", ylabel="", logy=False, width=640, height=420, max_points=20000):
    """Write an SVG with one panel.

    ``series`` is a list of ``(label, x, y, style)`` with style ``"line"`` or
    ``"scatter"``. Scatter series are thinned to ``max_points`` evenly.
    """
    ml, mr, mt, mb = 70, 20, 30, 50
    pw, ph = width - ml - mr, height - mt - mb
    prepared = []
    for label, x, y, style in series:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if logy:
            keep = y > 0
            x, y = x[keep], np.log10(y[keep])
        if x.size > max_points:
            idx = np.linspace(0, x.size - 1, max_points).astype(int)
            x, y = x[idx], y[idx]
        prepared.append((label, x, y, style))
    allx = np.concatenate([s[1] for s in prepared]) if prepared else np.zeros(1)
    ally = np.concatenate([s[2] for s in prepared]) if prepared else np.zeros(1)
    if allx.size == 0:
        allx, ally = np.zeros(1), np.zeros(1)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.1f}" y="{mt + ph + 15}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        lab = f"1e{t:.2g}" if logy else f"{t:.3g}"
        out.append(f'<text x="{ml - 5}" y="{sy(t) + 4:.1f}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{mt + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {mt + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for i, (label, x, y, style) in enumerate(prepared):
        c = _COLORS[i % len(_COLORS)]
        if style == "line" and x.size > 1:
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        else:
            out.extend(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="1" fill="{c}"/>' for a, b in zip(x, y))
        out.append(f'<text x="{ml + pw - 5}" y="{mt + 15 + 14 * i}" text-anchor="end" fill="{c}">{escape(label)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path
