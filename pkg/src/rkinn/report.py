"""Self-contained SVG rendering for run reports.

Plots are simple polyline/scatter drawings written directly as SVG text with
deterministic number formatting, so re-rendering from the same CSV inputs
produces byte-identical files. No plotting dependency.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 78, 24, 42, 56

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        return [0.0, 1.0]
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / target))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= target:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12 * span:
        ticks.append(round(t, 12))
        t += step
    return ticks or [lo, hi]


def _log_ticks(lo: float, hi: float) -> list[float]:
    lo_e = math.floor(math.log10(lo))
    hi_e = math.ceil(math.log10(hi))
    if hi_e - lo_e > 12:
        stride = math.ceil((hi_e - lo_e) / 12)
    else:
        stride = 1
    return [10.0 ** e for e in range(lo_e, hi_e + 1, stride)]


class Axes:
    """Linear or log scaling from data coordinates onto the pixel frame."""

    def __init__(self, xlim, ylim, xlog=False, ylog=False):
        self.xlog, self.ylog = xlog, ylog
        self.xlim = self._guard(xlim, xlog)
        self.ylim = self._guard(ylim, ylog)

    @staticmethod
    def _guard(lim, log):
        lo, hi = lim
        if log:
            lo = max(lo, 1e-300)
            hi = max(hi, lo * 10)
            return (lo, hi)
        if hi <= lo:
            pad = max(abs(lo), 1.0) * 0.05
            return (lo - pad, lo + pad)
        pad = (hi - lo) * 0.05
        return (lo - pad, hi + pad)

    def _tx(self, v, lim, log):
        lo, hi = lim
        if log:
            v = max(v, 1e-300)
            return (math.log10(v) - math.log10(lo)) / (math.log10(hi) - math.log10(lo))
        return (v - lo) / (hi - lo)

    def x(self, v) -> float:
        return MARGIN_L + self._tx(v, self.xlim, self.xlog) * (WIDTH - MARGIN_L - MARGIN_R)

    def y(self, v) -> float:
        return HEIGHT - MARGIN_B - self._tx(v, self.ylim, self.ylog) * (HEIGHT - MARGIN_T - MARGIN_B)

    def x_ticks(self):
        return _log_ticks(*self.xlim) if self.xlog else _nice_ticks(*self.xlim)

    def y_ticks(self):
        return _log_ticks(*self.ylim) if self.ylog else _nice_ticks(*self.ylim)


def _axes_svg(ax: Axes, title: str, xlabel: str, ylabel: str) -> list[str]:
    parts = [
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" '
        f'width="{WIDTH - MARGIN_L - MARGIN_R}" height="{HEIGHT - MARGIN_T - MARGIN_B}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" '
        f'font-size="15" font-family="sans-serif">{title}</text>',
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-size="13" font-family="sans-serif">{xlabel}</text>',
        f'<text x="18" y="{HEIGHT / 2:.1f}" text-anchor="middle" font-size="13" '
        f'font-family="sans-serif" transform="rotate(-90 18 {HEIGHT / 2:.1f})">{ylabel}</text>',
    ]
    for t in ax.x_ticks():
        if not (ax.xlim[0] <= t <= ax.xlim[1]):
            continue
        px = ax.x(t)
        parts.append(f'<line x1="{px:.1f}" y1="{HEIGHT - MARGIN_B}" '
                     f'x2="{px:.1f}" y2="{HEIGHT - MARGIN_B + 5}" stroke="#333"/>')
        label = f"1e{int(round(math.log10(t)))}" if ax.xlog else _fmt(t)
        parts.append(f'<text x="{px:.1f}" y="{HEIGHT - MARGIN_B + 18}" '
                     f'text-anchor="middle" font-size="11" font-family="sans-serif">{label}</text>')
    for t in ax.y_ticks():
        if not (ax.ylim[0] <= t <= ax.ylim[1]):
            continue
        py = ax.y(t)
        parts.append(f'<line x1="{MARGIN_L - 5}" y1="{py:.1f}" '
                     f'x2="{MARGIN_L}" y2="{py:.1f}" stroke="#333"/>')
        label = f"1e{int(round(math.log10(t)))}" if ax.ylog else _fmt(t)
        parts.append(f'<text x="{MARGIN_L - 8}" y="{py + 4:.1f}" '
                     f'text-anchor="end" font-size="11" font-family="sans-serif">{label}</text>')
    return parts


def _finite_minmax(arrays, log=False):
    lo, hi = np.inf, -np.inf
    for a in arrays:
        a = np.asarray(a, dtype=float)
        mask = np.isfinite(a)
        if log:
            mask &= a > 0
        if not np.any(mask):
            continue
        lo = min(lo, float(a[mask].min()))
        hi = max(hi, float(a[mask].max()))
    if not math.isfinite(lo):
        lo, hi = (1e-3, 1.0) if log else (0.0, 1.0)
    return lo, hi


def svg_plot(path, series, title="", xlabel="", ylabel="",
             xlog=False, ylog=False, identity_line=False) -> Path:
    """Write one SVG chart.

    Each series is a dict: x, y (arrays), label, color, and mode
    ("line", "dash", "points"); optional yerr draws vertical error bars.
    """
    xs = [s["x"] for s in series]
    ys = [s["y"] for s in series] + [
        np.asarray(s["y"]) + np.asarray(s["yerr"]) for s in series if s.get("yerr") is not None] + [
        np.asarray(s["y"]) - np.asarray(s["yerr"]) for s in series if s.get("yerr") is not None]
    ax = Axes(_finite_minmax(xs, xlog), _finite_minmax(ys, ylog), xlog, ylog)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
             f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
             f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    parts.extend(_axes_svg(ax, title, xlabel, ylabel))

    if identity_line:
        lo = max(ax.xlim[0], ax.ylim[0])
        hi = min(ax.xlim[1], ax.ylim[1])
        parts.append(f'<line x1="{ax.x(lo):.2f}" y1="{ax.y(lo):.2f}" '
                     f'x2="{ax.x(hi):.2f}" y2="{ax.y(hi):.2f}" '
                     'stroke="#888" stroke-width="1" stroke-dasharray="2,3"/>')

    for idx, s in enumerate(series):
        color = s.get("color", PALETTE[idx % len(PALETTE)])
        mode = s.get("mode", "line")
        x = np.asarray(s["x"], dtype=float)
        y = np.asarray(s["y"], dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if xlog:
            keep &= x > 0
        if ylog:
            keep &= y > 0
        x, y = x[keep], y[keep]
        if x.size == 0:
            continue
        if s.get("yerr") is not None:
            err = np.asarray(s["yerr"], dtype=float)[keep]
            for xi, yi, ei in zip(x, y, err):
                parts.append(f'<line x1="{ax.x(xi):.2f}" y1="{ax.y(yi - ei):.2f}" '
                             f'x2="{ax.x(xi):.2f}" y2="{ax.y(yi + ei):.2f}" '
                             f'stroke="{color}" stroke-width="1"/>')
        if mode in ("line", "dash"):
            pts = " ".join(f"{ax.x(xi):.2f},{ax.y(yi):.2f}" for xi, yi in zip(x, y))
            dash = ' stroke-dasharray="6,4"' if mode == "dash" else ""
            parts.append(f'<polyline points="{pts}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5"{dash}/>')
        else:
            for xi, yi in zip(x, y):
                parts.append(f'<circle cx="{ax.x(xi):.2f}" cy="{ax.y(yi):.2f}" '
                             f'r="2.5" fill="{color}" fill-opacity="0.7"/>')

    # legend: one text row per labelled series, top-right inside the frame
    row = 0
    for idx, s in enumerate(series):
        label = s.get("label")
        if not label:
            continue
        color = s.get("color", PALETTE[idx % len(PALETTE)])
        y0 = MARGIN_T + 16 + 16 * row
        parts.append(f'<rect x="{WIDTH - MARGIN_R - 150}" y="{y0 - 9}" width="12" '
                     f'height="9" fill="{color}"/>')
        parts.append(f'<text x="{WIDTH - MARGIN_R - 133}" y="{y0}" font-size="11" '
                     f'font-family="sans-serif">{label}</text>')
        row += 1

    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
    return Path(path)
