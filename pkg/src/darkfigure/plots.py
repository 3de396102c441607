"""Minimal static SVG renderings of the plot datasets."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = 60


def _scale(lo, hi, a, b):
    if hi <= lo:
        hi = lo + 1.0
    return lambda v: a + (v - lo) / (hi - lo) * (b - a)


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(v)
        v += step
    return out


def _frame(title, xlabel, ylabel, xr, yr, sx, sy):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - 20}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{MARGIN}" y2="30" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{HEIGHT / 2}" text-anchor="middle" transform="rotate(-90 15 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]
    for t in _ticks(*xr):
        x = sx(t)
        parts.append(f'<line x1="{x:.1f}" y1="{HEIGHT - MARGIN}" x2="{x:.1f}" y2="{HEIGHT - MARGIN + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(*yr):
        y = sy(t)
        parts.append(f'<line x1="{MARGIN - 4}" y1="{y:.1f}" x2="{MARGIN}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN - 6}" y="{y + 4:.1f}" text-anchor="end">{t:g}</text>')
    return parts


def scatter_svg(rows: list[dict], title: str = "Models") -> str:
    """Scatter of total estimate against ``-BIC`` with the best-BIC model marked.

    ``rows`` are as produced by :func:`darkfigure.select.export_scatter`.
    """
    pts = [r for r in rows if math.isfinite(r["neg_bic"]) and math.isfinite(r["total_estimate"])]
    if not pts:
        raise ValueError("nothing to plot")
    xs = [r["neg_bic"] for r in pts]
    ys = [r["total_estimate"] for r in pts]
    xr = (min(xs), max(xs))
    yr = (0.0, max(ys) * 1.05)
    sx = _scale(*xr, MARGIN, WIDTH - 30)
    sy = _scale(*yr, HEIGHT - MARGIN, 40)
    parts = _frame(title, "-BIC", "total population", xr, yr, sx, sy)
    for r in pts:
        fill = "#888" if r.get("diverged") else "#1f4e9e"
        parts.append(f'<circle cx="{sx(r["neg_bic"]):.1f}" cy="{sy(r["total_estimate"]):.1f}" r="2.5" fill="{fill}"/>')
    for r in pts:
        if r.get("best_bic"):
            y = sy(r["total_estimate"])
            parts.append(f'<line x1="{MARGIN}" y1="{y:.1f}" x2="{WIDTH - 20}" y2="{y:.1f}" stroke="#c0392b" stroke-dasharray="4 3"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def histogram_svg(bins: list[dict], title: str = "Posterior of the total") -> str:
    """Bar chart of histogram rows with keys ``lower``, ``upper``, ``count``."""
    if not bins:
        raise ValueError("nothing to plot")
    xr = (bins[0]["lower"], bins[-1]["upper"])
    yr = (0.0, max(b["count"] for b in bins) * 1.05 or 1.0)
    sx = _scale(*xr, MARGIN, WIDTH - 30)
    sy = _scale(*yr, HEIGHT - MARGIN, 40)
    parts = _frame(title, "total population", "draws", xr, yr, sx, sy)
    for b in bins:
        x0, x1 = sx(b["lower"]), sx(b["upper"])
        y = sy(b["count"])
        parts.append(f'<rect x="{x0:.1f}" y="{y:.1f}" width="{max(x1 - x0, 0.5):.1f}" height="{HEIGHT - MARGIN - y:.1f}" fill="#1f4e9e"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
