"""Minimal static SVG line charts (no plotting dependency)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=72, right=20, top=36, bottom=52)


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    markers: bool = False
    step: bool = False


def nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    """Round tick positions (1, 2, 5 times a power of ten) covering [lo, hi]."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        hi = lo + (abs(lo) if lo else 1.0)
    raw = (hi - lo) / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        if t >= lo - 1e-9 * step:
            ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _label(v: float) -> str:
    if v != 0 and (abs(v) >= 1e5 or abs(v) < 1e-3):
        return f"{v:.1e}"
    return f"{v:g}"


def line_chart(series: list[Series], title: str, xlabel: str, ylabel: str) -> str:
    """Render the series on shared linear axes and return the SVG text."""
    xs = np.concatenate([np.asarray(s.x, float) for s in series]) if series else np.zeros(0)
    ys = np.concatenate([np.asarray(s.y, float) for s in series]) if series else np.zeros(0)
    ok = np.isfinite(xs) & np.isfinite(ys)
    if not ok.any():
        xs, ys, ok = np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([True, True])
    x0, x1 = float(xs[ok].min()), float(xs[ok].max())
    y0, y1 = float(ys[ok].min()), float(ys[ok].max())
    xt, yt = nice_ticks(x0, x1), nice_ticks(y0, y1)
    x0, x1 = min([x0] + xt), max([x1] + xt)
    y0, y1 = min([y0] + yt), max([y1] + yt)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    L, R, T, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def px(x):
        return L + (x - x0) / (x1 - x0) * (R - L)

    def py(y):
        return B - (y - y0) / (y1 - y0) * (B - T)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for t in xt:
        out.append(f'<line x1="{_fmt(px(t))}" y1="{T}" x2="{_fmt(px(t))}" y2="{B}" stroke="#eee"/>')
        out.append(f'<text x="{_fmt(px(t))}" y="{B + 16}" text-anchor="middle">{_label(t)}</text>')
    for t in yt:
        out.append(f'<line x1="{L}" y1="{_fmt(py(t))}" x2="{R}" y2="{_fmt(py(t))}" stroke="#eee"/>')
        out.append(f'<text x="{L - 6}" y="{_fmt(py(t) + 4)}" text-anchor="end">{_label(t)}</text>')
    out.append(f'<rect x="{L}" y="{T}" width="{R - L}" height="{B - T}" fill="none" stroke="black"/>')
    out.append(f'<text x="{(L + R) / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{(T + B) / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(T + B) / 2})">{escape(ylabel)}</text>')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        x = np.asarray(s.x, float)
        y = np.asarray(s.y, float)
        keep = np.isfinite(x) & np.isfinite(y)
        x, y = x[keep], y[keep]
        if x.size == 0:
            continue
        if s.step and x.size > 1:
            # hold each value until the next sample
            x = np.repeat(x, 2)[1:]
            y = np.repeat(y, 2)[:-1]
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        if s.markers:
            for a, b in zip(x, y):
                out.append(f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="3" fill="{color}"/>')
        ly = T + 14 + 16 * i
        out.append(f'<line x1="{R - 150}" y1="{ly - 4}" x2="{R - 130}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{R - 124}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path, series: list[Series], title: str, xlabel: str, ylabel: str) -> Path:
    path = Path(path)
    path.write_text(line_chart(series, title, xlabel, ylabel), encoding="utf-8")
    return path
