"""Minimal self-contained SVG plots: polyline charts and contour maps built
with marching squares.  No plotting dependency."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

_MARGIN = 56.0
_PALETTE_LOW = (38, 70, 160)     # deep blue
_PALETTE_HIGH = (208, 60, 40)    # red
_NAN_FILL = "#d9d9d9"

_SERIES_COLORS = ("#c22d26", "#707070", "#2a7a2a", "#2b5aa3", "#8a5fb0", "#b8860b")


def _hex(rgb):
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def _ramp(frac: float) -> str:
    frac = min(max(frac, 0.0), 1.0)
    return _hex(tuple(lo + frac * (hi - lo) for lo, hi in zip(_PALETTE_LOW, _PALETTE_HIGH)))


def _ticks(lo: float, hi: float, n: int = 5):
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo == hi:
        return [lo]
    return list(np.linspace(lo, hi, n))


def _fmt(v: float) -> str:
    return f"{v:.4g}"


class _Canvas:
    def __init__(self, width, height, title, x_label, y_label, x_range, y_range):
        self.width, self.height = width, height
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]
        if title:
            self.parts.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
                              f'font-size="13">{title}</text>')
        if x_label:
            self.parts.append(f'<text x="{width / 2:.1f}" y="{height - 8:.1f}" '
                              f'text-anchor="middle">{x_label}</text>')
        if y_label:
            y_mid = height / 2
            self.parts.append(f'<text x="14" y="{y_mid:.1f}" text-anchor="middle" '
                              f'transform="rotate(-90 14 {y_mid:.1f})">{y_label}</text>')

    def px(self, x: float) -> float:
        span = self.x1 - self.x0 or 1.0
        return _MARGIN + (x - self.x0) / span * (self.width - 2 * _MARGIN)

    def py(self, y: float) -> float:
        span = self.y1 - self.y0 or 1.0
        return self.height - _MARGIN - (y - self.y0) / span * (self.height - 2 * _MARGIN)

    def axes(self):
        left, right = _MARGIN, self.width - _MARGIN
        top, bottom = _MARGIN, self.height - _MARGIN
        self.parts.append(f'<rect x="{left}" y="{top}" width="{right - left}" '
                          f'height="{bottom - top}" fill="none" stroke="black"/>')
        for tick in _ticks(self.x0, self.x1):
            px = self.px(tick)
            self.parts.append(f'<line x1="{px:.1f}" y1="{bottom}" x2="{px:.1f}" '
                              f'y2="{bottom + 4}" stroke="black"/>')
            self.parts.append(f'<text x="{px:.1f}" y="{bottom + 16}" '
                              f'text-anchor="middle">{_fmt(tick)}</text>')
        for tick in _ticks(self.y0, self.y1):
            py = self.py(tick)
            self.parts.append(f'<line x1="{left - 4}" y1="{py:.1f}" x2="{left}" '
                              f'y2="{py:.1f}" stroke="black"/>')
            self.parts.append(f'<text x="{left - 6}" y="{py + 4:.1f}" '
                              f'text-anchor="end">{_fmt(tick)}</text>')

    def save(self, path):
        self.parts.append("</svg>")
        Path(path).write_text("\n".join(self.parts) + "\n", encoding="utf-8")


def line_chart(path, x, series: dict, *, title="", x_label="", y_label="",
               width=640, height=420):
    """Polyline chart of one or more named series over a shared x axis."""
    x = np.asarray(x, dtype=float)
    arrays = {name: np.asarray(vals, dtype=float) for name, vals in series.items()}
    finite = np.concatenate([a[np.isfinite(a)] for a in arrays.values() if a.size])
    y_lo = float(finite.min()) if finite.size else 0.0
    y_hi = float(finite.max()) if finite.size else 1.0
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    canvas = _Canvas(width, height, title, x_label, y_label,
                     (float(x.min()), float(x.max())), (y_lo, y_hi))
    canvas.axes()
    for k, (name, vals) in enumerate(arrays.items()):
        color = _SERIES_COLORS[k % len(_SERIES_COLORS)]
        pts = " ".join(f"{canvas.px(xv):.1f},{canvas.py(yv):.1f}"
                       for xv, yv in zip(x, vals) if math.isfinite(yv))
        canvas.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                            f'stroke-width="1.5"/>')
        canvas.parts.append(f'<text x="{width - _MARGIN - 4:.1f}" y="{_MARGIN + 14 + 14 * k:.1f}" '
                            f'text-anchor="end" fill="{color}">{name}</text>')
    canvas.save(path)


def _marching_squares(xs, ys, grid, level):
    """Iso-line segments of grid (indexed [i, j] over xs, ys) at one level."""
    segments = []
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            corners = (grid[i, j], grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1])
            if any(not math.isfinite(c) for c in corners):
                continue
            z00, z10, z11, z01 = corners
            case = ((z00 > level) | (z10 > level) << 1 |
                    (z11 > level) << 2 | (z01 > level) << 3)
            if case in (0, 15):
                continue
            x0, x1 = xs[i], xs[i + 1]
            y0, y1 = ys[j], ys[j + 1]

            def lerp(a, b, za, zb):
                t = 0.5 if zb == za else (level - za) / (zb - za)
                return a + t * (b - a)

            bottom = (lerp(x0, x1, z00, z10), y0)
            right = (x1, lerp(y0, y1, z10, z11))
            top = (lerp(x0, x1, z01, z11), y1)
            left = (x0, lerp(y0, y1, z00, z01))
            table = {
                1: [(left, bottom)], 2: [(bottom, right)], 3: [(left, right)],
                4: [(right, top)], 6: [(bottom, top)], 7: [(left, top)],
                8: [(top, left)], 9: [(bottom, top)], 11: [(right, top)],
                12: [(left, right)], 13: [(bottom, right)], 14: [(left, bottom)],
            }
            if case in (5, 10):
                # saddle: disambiguate with the cell-center value
                center = 0.25 * (z00 + z10 + z11 + z01)
                if case == 5:
                    segs = [(left, top), (bottom, right)] if center > level \
                        else [(left, bottom), (right, top)]
                else:
                    segs = [(bottom, left), (top, right)] if center > level \
                        else [(left, top), (bottom, right)]
                segments.extend(segs)
            else:
                segments.extend(table[case])
    return segments


def contour_chart(path, x, y, grid, *, levels=None, title="", x_label="", y_label="",
                  width=640, height=500, overlay_points=None):
    """Filled contour map: colored cells banded by level plus iso-lines.

    `grid[i, j]` is the value at (x[i], y[j]); non-finite cells render gray.
    `overlay_points` is an optional (N, 2) array drawn as dots.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    grid = np.asarray(grid, dtype=float)
    finite = grid[np.isfinite(grid)]
    if levels is None:
        if finite.size and float(finite.min()) != float(finite.max()):
            levels = list(np.linspace(float(finite.min()), float(finite.max()), 9)[1:-1])
        else:
            levels = []
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 1.0
    span = (hi - lo) or 1.0

    canvas = _Canvas(width, height, title, x_label, y_label,
                     (float(x.min()), float(x.max())), (float(y.min()), float(y.max())))
    # cell fill: color by the mean of finite corners, banded to the levels
    bands = [lo] + list(levels) + [hi]
    for i in range(len(x) - 1):
        for j in range(len(y) - 1):
            vals = [grid[i, j], grid[i + 1, j], grid[i, j + 1], grid[i + 1, j + 1]]
            vals = [v for v in vals if math.isfinite(v)]
            if not vals:
                fill = _NAN_FILL
            else:
                mean = float(np.mean(vals))
                k = max(0, min(len(bands) - 2, int(np.searchsorted(bands, mean) - 1)))
                mid = 0.5 * (bands[k] + bands[k + 1])
                fill = _ramp((mid - lo) / span)
            x0, x1 = canvas.px(x[i]), canvas.px(x[i + 1])
            y0, y1 = canvas.py(y[j]), canvas.py(y[j + 1])
            canvas.parts.append(
                f'<rect x="{min(x0, x1):.1f}" y="{min(y0, y1):.1f}" '
                f'width="{abs(x1 - x0):.1f}" height="{abs(y1 - y0):.1f}" fill="{fill}"/>')
    for level in levels:
        for (ax, ay), (bx, by) in _marching_squares(x, y, grid, level):
            canvas.parts.append(
                f'<line x1="{canvas.px(ax):.1f}" y1="{canvas.py(ay):.1f}" '
                f'x2="{canvas.px(bx):.1f}" y2="{canvas.py(by):.1f}" '
                f'stroke="black" stroke-width="0.6" opacity="0.6"/>')
    if overlay_points is not None:
        for px, py in np.asarray(overlay_points, dtype=float):
            canvas.parts.append(f'<circle cx="{canvas.px(px):.1f}" cy="{canvas.py(py):.1f}" '
                                f'r="3" fill="#ff8c00" stroke="black" stroke-width="0.4"/>')
    canvas.axes()
    canvas.save(path)
