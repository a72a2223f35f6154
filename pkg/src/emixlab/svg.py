"""Static SVG 1.1 line charts built as plain text."""

from __future__ import annotations

from html import escape
from typing import Mapping, Sequence

PALETTE = ("#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")

Series = Mapping[str, tuple[Sequence[float], Sequence[float]]]


def _nice_range(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _num(v: float) -> str:
    return f"{v:.2f}"


def _panel(x0: float, y0: float, w: float, h: float, title: str, xlabel: str, series: Series) -> list[str]:
    xs = [x for pts, _ in series.values() for x in pts]
    ys = [y for _, vals in series.values() for y in vals]
    out = [f'<g transform="translate({_num(x0)},{_num(y0)})">',
           f'<rect x="0" y="0" width="{_num(w)}" height="{_num(h)}" fill="none" stroke="#444"/>',
           f'<text x="{_num(w / 2)}" y="-8" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<text x="{_num(w / 2)}" y="{_num(h + 32)}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>']
    if not xs:
        return out + ["</g>"]
    xmin, xmax = _nice_range(xs)
    ymin, ymax = _nice_range(ys)
    sx = lambda v: (v - xmin) / (xmax - xmin) * w          # noqa: E731
    sy = lambda v: h - (v - ymin) / (ymax - ymin) * h      # noqa: E731
    for t in range(5):
        yv = ymin + (ymax - ymin) * t / 4
        xv = xmin + (xmax - xmin) * t / 4
        out.append(f'<text x="-6" y="{_num(sy(yv) + 4)}" text-anchor="end" font-size="10">{yv:.3g}</text>')
        out.append(f'<text x="{_num(sx(xv))}" y="{_num(h + 15)}" text-anchor="middle" font-size="10">{xv:.4g}</text>')
    for idx, (name, (px, py)) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join(f"{_num(sx(a))},{_num(sy(b))}" for a, b in zip(px, py))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{_num(w - 6)}" y="{_num(14 + 13 * idx)}" text-anchor="end" font-size="11" '
                   f'fill="{color}">{escape(name)}</text>')
    out.append("</g>")
    return out


def line_chart(panels: Sequence[tuple[str, Series]], xlabel: str = "iteration",
               panel_width: int = 360, panel_height: int = 240) -> str:
    """Side-by-side panels, each a set of named (x, y) polylines."""
    margin_l, margin_t, gap = 60, 30, 80
    width = margin_l + len(panels) * (panel_width + gap)
    height = margin_t + panel_height + 50
    body = []
    for j, (title, series) in enumerate(panels):
        body += _panel(margin_l + j * (panel_width + gap), margin_t, panel_width, panel_height, title, xlabel, series)
    return "\n".join([
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'font-family="sans-serif">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        *body,
        "</svg>",
        "",
    ])
