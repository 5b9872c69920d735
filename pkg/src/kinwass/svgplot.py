"""Minimal deterministic SVG line plots.

Hand-rolled so that replayed runs produce byte-identical artifacts (no
timestamps, no library version strings).  Linear or log10 axes, fixed
palette, text labels only.
"""

from __future__ import annotations

import math

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 16, 28, 44


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _ticks(lo: float, hi: float, n: int = 6):
    """Round tick locations covering [lo, hi]."""
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if step >= raw:
            break
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-9 * step:
        out.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return out


def line_plot(path, series, title="", xlabel="", ylabel="",
              logy=False, logx=False, width=640, height=420):
    """Write an SVG line plot.

    series: iterable of (label, xs, ys).  With logy/logx, nonpositive
    points are dropped from the corresponding axis.
    """
    pts = []
    for label, xs, ys in series:
        keep = []
        for x, y in zip(xs, ys):
            if not (math.isfinite(x) and math.isfinite(y)):
                continue
            if logy and y <= 0:
                continue
            if logx and x <= 0:
                continue
            keep.append((math.log10(x) if logx else float(x),
                         math.log10(y) if logy else float(y)))
        pts.append((label, keep))

    allx = [q[0] for _, kp in pts for q in kp]
    ally = [q[1] for _, kp in pts for q in kp]
    if not allx:
        allx = ally = [0.0, 1.0]
    x_lo, x_hi = min(allx), max(allx)
    y_lo, y_hi = min(ally), max(ally)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.04 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    px0, px1 = _MARGIN_L, width - _MARGIN_R
    py0, py1 = height - _MARGIN_B, _MARGIN_T

    def sx(x):
        return px0 + (x - x_lo) / (x_hi - x_lo) * (px1 - px0)

    def sy(y):
        return py0 + (y - y_lo) / (y_hi - y_lo) * (py1 - py0)

    out = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
               f'height="{height}" viewBox="0 0 {width} {height}">')
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    out.append(f'<rect x="{px0}" y="{py1}" width="{px1 - px0}" '
               f'height="{py0 - py1}" fill="none" stroke="black"/>')
    if title:
        out.append(f'<text x="{(px0 + px1) / 2:.1f}" y="18" '
                   f'text-anchor="middle" font-size="13">{title}</text>')

    for tx in _ticks(x_lo, x_hi):
        x = sx(tx)
        out.append(f'<line x1="{x:.2f}" y1="{py0}" x2="{x:.2f}" '
                   f'y2="{py1}" stroke="#dddddd"/>')
        label = _fmt(10 ** tx) if logx else _fmt(tx)
        out.append(f'<text x="{x:.2f}" y="{py0 + 16}" text-anchor="middle" '
                   f'font-size="10">{label}</text>')
    for ty in _ticks(y_lo, y_hi):
        y = sy(ty)
        out.append(f'<line x1="{px0}" y1="{y:.2f}" x2="{px1}" '
                   f'y2="{y:.2f}" stroke="#dddddd"/>')
        label = _fmt(10 ** ty) if logy else _fmt(ty)
        out.append(f'<text x="{px0 - 4}" y="{y + 3:.2f}" text-anchor="end" '
                   f'font-size="10">{label}</text>')
    if xlabel:
        out.append(f'<text x="{(px0 + px1) / 2:.1f}" y="{height - 8}" '
                   f'text-anchor="middle" font-size="11">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{(py0 + py1) / 2:.1f}" font-size="11" '
                   f'text-anchor="middle" transform="rotate(-90 14 '
                   f'{(py0 + py1) / 2:.1f})">{ylabel}</text>')

    legend_y = py1 + 14
    for k, (label, kp) in enumerate(pts):
        color = PALETTE[k % len(PALETTE)]
        if kp:
            d = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in kp)
            out.append(f'<polyline points="{d}" fill="none" '
                       f'stroke="{color}" stroke-width="1.5"/>')
        if label:
            out.append(f'<line x1="{px1 - 130}" y1="{legend_y - 3}" '
                       f'x2="{px1 - 110}" y2="{legend_y - 3}" '
                       f'stroke="{color}" stroke-width="1.5"/>')
            out.append(f'<text x="{px1 - 105}" y="{legend_y}" '
                       f'font-size="10">{label}</text>')
            legend_y += 14
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
