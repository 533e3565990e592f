"""Dependency-free SVG scatter plots for rate-distortion summaries."""

from __future__ import annotations

import math

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#17becf"]

_W, _H = 640, 440
_ML, _MR, _MT, _MB = 70, 30, 40, 60


def _nice_range(values: list[float]) -> tuple[float, float]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if lo == hi:
        pad = abs(lo) * 0.1 or 0.5
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.08
    return lo - pad, hi + pad


def scatter_svg(series: dict[str, list[tuple[float, float]]],
                xlabel: str, ylabel: str, title: str = "") -> str:
    """Render labeled point groups as a standalone SVG document."""
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    x0, x1 = _nice_range(xs)
    y0, y1 = _nice_range(ys)
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB

    def px(x: float) -> float:
        return _ML + (x - x0) / (x1 - x0) * plot_w

    def py(y: float) -> float:
        return _MT + (y1 - y) / (y1 - y0) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333"/>',
    ]
    if title:
        parts.append(f'<text x="{_W / 2}" y="24" text-anchor="middle" '
                     f'font-size="15">{title}</text>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x0 + frac * (x1 - x0)
        yv = y0 + frac * (y1 - y0)
        parts.append(f'<text x="{px(xv):.1f}" y="{_H - _MB + 18}" '
                     f'text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<text x="{_ML - 8}" y="{py(yv) + 4:.1f}" '
                     f'text-anchor="end">{yv:.3g}</text>')
    parts.append(f'<text x="{_ML + plot_w / 2}" y="{_H - 16}" '
                 f'text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="20" y="{_MT + plot_h / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 20 {_MT + plot_h / 2})">{ylabel}</text>')
    for i, (label, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        for x, y in pts:
            if not (math.isfinite(x) and math.isfinite(y)):
                continue
            parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="4" '
                         f'fill="{color}" fill-opacity="0.8"/>')
        ly = _MT + 16 + 16 * i
        parts.append(f'<circle cx="{_W - _MR - 110}" cy="{ly - 4}" r="4" fill="{color}"/>')
        parts.append(f'<text x="{_W - _MR - 100}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
