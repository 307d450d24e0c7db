"""Minimal self-contained log-log SVG plots for convergence reports."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 480
LEFT, RIGHT, TOP, BOTTOM = 80, 30, 40, 60


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _decades(lo: float, hi: float) -> list[int]:
    return list(range(math.floor(lo), math.ceil(hi) + 1))


def loglog_svg(axis, errors, axis_label: str, fitted_rate: float | None, title: str = "", reference_rate: float | None = None) -> str:
    """SVG text with the error series, a fitted-slope line and an optional reference-slope line."""
    pts = [(math.log10(a), math.log10(e)) for a, e in zip(axis, errors) if e > 0 and a > 0]
    if not pts:
        pts = [(0.0, 0.0), (1.0, 0.0)]
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = math.floor(min(xs) * 2) / 2, math.ceil(max(xs) * 2) / 2
    y0, y1 = math.floor(min(ys)), math.ceil(max(ys))
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for d in _decades(x0, x1):
        if x0 <= d <= x1:
            out.append(f'<line x1="{_fmt(px(d))}" y1="{TOP}" x2="{_fmt(px(d))}" y2="{TOP + ph}" stroke="#ddd"/>')
            out.append(f'<text x="{_fmt(px(d))}" y="{TOP + ph + 18}" font-size="12" text-anchor="middle">1e{d}</text>')
    for d in _decades(y0, y1):
        if y0 <= d <= y1:
            out.append(f'<line x1="{LEFT}" y1="{_fmt(py(d))}" x2="{LEFT + pw}" y2="{_fmt(py(d))}" stroke="#ddd"/>')
            out.append(f'<text x="{LEFT - 6}" y="{_fmt(py(d) + 4)}" font-size="12" text-anchor="end">1e{d}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 15}" font-size="14" text-anchor="middle">{escape(axis_label)}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2:.1f}" font-size="14" text-anchor="middle" transform="rotate(-90 18 {TOP + ph / 2:.1f})">error</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="24" font-size="15" text-anchor="middle">{escape(title)}</text>')
    poly = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in pts)
    out.append(f'<polyline points="{poly}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    for x, y in pts:
        out.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="4" fill="#1f77b4"/>')
    mx, my = sum(xs) / len(xs), sum(ys) / len(ys)
    lines = []
    if fitted_rate is not None and math.isfinite(fitted_rate):
        lines.append((fitted_rate, "#d62728", "", f"fitted rate {fitted_rate:.3f}"))
    if reference_rate is not None:
        lines.append((reference_rate, "#555", ' stroke-dasharray="6 4"', f"reference slope {reference_rate:.3f}"))
    for k, (rate, color, dash, label) in enumerate(lines):
        xa, xb = min(xs), max(xs)
        ya, yb = my - rate * (xa - mx), my - rate * (xb - mx)
        out.append(
            f'<line x1="{_fmt(px(xa))}" y1="{_fmt(py(ya))}" x2="{_fmt(px(xb))}" y2="{_fmt(py(yb))}" stroke="{color}"{dash}/>'
        )
        out.append(f'<text x="{LEFT + pw - 8}" y="{TOP + 20 + 18 * k}" font-size="13" text-anchor="end" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_loglog_svg(path, axis, errors, axis_label: str, fitted_rate, title: str = "", reference_rate=None) -> None:
    Path(path).write_text(loglog_svg(axis, errors, axis_label, fitted_rate, title, reference_rate))
