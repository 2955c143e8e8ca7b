"""Minimal self-contained SVG plots with fixed styling.

Output depends only on the data, so identical inputs give identical bytes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from html import escape
from pathlib import Path

import numpy as np

PALETTE = ("#1f4e9c", "#c0392b", "#27864a", "#8e44ad", "#d4820a", "#16a0a0", "#6b6b6b", "#a0522d")


def _num(v: float) -> str:
    out = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if out in ("-0", "") else out


def nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _tick_label(v: float) -> str:
    if v != 0 and (abs(v) >= 1e5 or abs(v) < 1e-3):
        return f"{v:.1e}"
    return f"{v:.6g}"


@dataclass
class Figure:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: int = 640
    height: int = 400
    series: list = field(default_factory=list)

    def line(self, x, y, label: str = "", color: int = 0, dashed: bool = False):
        self.series.append(("line", np.asarray(x, float), np.asarray(y, float), label, color, dashed, None))
        return self

    def scatter(self, x, y, label: str = "", color: int = 0):
        self.series.append(("scatter", np.asarray(x, float), np.asarray(y, float), label, color, False, None))
        return self

    def errorbars(self, x, mean, std, label: str = "", color: int = 0):
        self.series.append(("errorbar", np.asarray(x, float), np.asarray(mean, float), label, color, False,
                            np.asarray(std, float)))
        return self

    def histogram(self, edges, counts, label: str = "", color: int = 0):
        edges = np.asarray(edges, float)
        self.series.append(("hist", edges, np.asarray(counts, float), label, color, False, None))
        return self

    def _bounds(self):
        xs, ys = [], [0.0] if any(s[0] == "hist" for s in self.series) else []
        for kind, x, y, _, _, _, err in self.series:
            xs.extend(x[np.isfinite(x)])
            yy = y if err is None else np.concatenate([y - err, y + err])
            ys.extend(yy[np.isfinite(yy)])
        if not xs or not ys:
            return 0.0, 1.0, 0.0, 1.0
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        pad = 0.05 * (y1 - y0)
        return x0, x1, y0 - (0 if y0 == 0 else pad), y1 + pad

    def render(self) -> str:
        W, H = self.width, self.height
        left, right, top, bottom = 70, 20 + (150 if any(s[3] for s in self.series) else 0), 36, 50
        pw, ph = W - left - right, H - top - bottom
        x0, x1, y0, y1 = self._bounds()
        sx = lambda v: left + (v - x0) / (x1 - x0) * pw
        sy = lambda v: top + ph - (v - y0) / (y1 - y0) * ph
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
            'font-family="sans-serif" font-size="11">',
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>',
            f'<text x="{W / 2:.0f}" y="20" text-anchor="middle" font-size="14">{escape(self.title)}</text>',
            f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>',
        ]
        for t in nice_ticks(x0, x1):
            X = _num(sx(t))
            out.append(f'<line x1="{X}" y1="{top + ph}" x2="{X}" y2="{top + ph + 4}" stroke="#000000"/>')
            out.append(f'<text x="{X}" y="{top + ph + 16}" text-anchor="middle">{_tick_label(t)}</text>')
        for t in nice_ticks(y0, y1):
            Y = _num(sy(t))
            out.append(f'<line x1="{left - 4}" y1="{Y}" x2="{left}" y2="{Y}" stroke="#000000"/>')
            out.append(f'<text x="{left - 6}" y="{Y}" text-anchor="end" dominant-baseline="middle">{_tick_label(t)}</text>')
        out.append(f'<text x="{left + pw / 2:.0f}" y="{H - 12}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="16" y="{top + ph / 2:.0f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {top + ph / 2:.0f})">{escape(self.ylabel)}</text>')
        legend = []
        for kind, x, y, label, color, dashed, err in self.series:
            c = PALETTE[color % len(PALETTE)]
            if kind == "line":
                ok = np.isfinite(x) & np.isfinite(y)
                pts = " ".join(f"{_num(sx(a))},{_num(sy(b))}" for a, b in zip(x[ok], y[ok]))
                dash = ' stroke-dasharray="6,4"' if dashed else ""
                out.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"{dash}/>')
            elif kind == "scatter":
                for a, b in zip(x, y):
                    if math.isfinite(a) and math.isfinite(b):
                        out.append(f'<circle cx="{_num(sx(a))}" cy="{_num(sy(b))}" r="2.5" fill="{c}" fill-opacity="0.6"/>')
            elif kind == "errorbar":
                pts = []
                for a, m, s in zip(x, y, err):
                    if not (math.isfinite(a) and math.isfinite(m)):
                        continue
                    s = s if math.isfinite(s) else 0.0
                    X = _num(sx(a))
                    out.append(f'<line x1="{X}" y1="{_num(sy(m - s))}" x2="{X}" y2="{_num(sy(m + s))}" stroke="{c}"/>')
                    pts.append(f"{X},{_num(sy(m))}")
                out.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{c}" stroke-width="2"/>')
            elif kind == "hist":
                for lo, hi, n in zip(x[:-1], x[1:], y):
                    if n <= 0:
                        continue
                    X, Y = sx(lo), sy(n)
                    out.append(f'<rect x="{_num(X)}" y="{_num(Y)}" width="{_num(sx(hi) - X)}" '
                               f'height="{_num(sy(0) - Y)}" fill="{c}" fill-opacity="0.5" stroke="{c}"/>')
            if label:
                legend.append((label, c, dashed))
        for i, (label, c, dashed) in enumerate(legend):
            Y = top + 10 + 16 * i
            X = left + pw + 10
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            out.append(f'<line x1="{X}" y1="{Y}" x2="{X + 20}" y2="{Y}" stroke="{c}" stroke-width="2"{dash}/>')
            out.append(f'<text x="{X + 26}" y="{Y}" dominant-baseline="middle">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.render())
        return path
