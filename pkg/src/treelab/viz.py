"""Deterministic SVG renderers for the four analysis figure kinds:
scatter, grouped box plot, crown map, and histogram with Gaussian overlay.

Charts are written as standalone vector graphics with stable structure:
identical inputs produce byte-identical SVG, and the data elements carry
CSS classes (``point``, ``box-group``, ``crown``, ``bar``, ``fit``) so
tests and UIs can count them without parsing path geometry.
"""

from __future__ import annotations

import math

import numpy as np

WIDTH, HEIGHT = 640, 440
MARGIN = {"left": 64, "right": 24, "top": 40, "bottom": 52}


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _tick_label(v: float) -> str:
    return f"{v:.4g}"


class _Canvas:
    """Linear data-to-pixel scales plus shared axis scaffolding."""

    def __init__(self, x_range, y_range, x_label, y_label, title,
                 invert_y: bool = False):
        self.x0, self.x1 = self._pad(*x_range)
        self.y0, self.y1 = self._pad(*y_range)
        self.invert_y = invert_y
        self.x_label, self.y_label, self.title = x_label, y_label, title
        self.parts: list[str] = []

    @staticmethod
    def _pad(lo, hi):
        lo, hi = float(lo), float(hi)
        if hi <= lo:
            span = abs(lo) if lo != 0 else 1.0
            return lo - span / 2 - 0.5, hi + span / 2 + 0.5
        pad = (hi - lo) * 0.05
        return lo - pad, hi + pad

    def sx(self, v: float) -> float:
        frac = (v - self.x0) / (self.x1 - self.x0)
        return MARGIN["left"] + frac * (WIDTH - MARGIN["left"] - MARGIN["right"])

    def sy(self, v: float) -> float:
        frac = (v - self.y0) / (self.y1 - self.y0)
        top, bottom = MARGIN["top"], HEIGHT - MARGIN["bottom"]
        if self.invert_y:  # image row axis: larger values lower on screen
            return top + frac * (bottom - top)
        return bottom - frac * (bottom - top)

    def add(self, element: str) -> None:
        self.parts.append(element)

    def _axes(self) -> list[str]:
        left, right = MARGIN["left"], WIDTH - MARGIN["right"]
        top, bottom = MARGIN["top"], HEIGHT - MARGIN["bottom"]
        out = ['<g class="axes" stroke="#444" fill="none">']
        out.append(f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}"/>')
        out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}"/>')
        out.append("</g>")
        out.append('<g class="ticks" font-size="11" fill="#333" font-family="sans-serif">')
        for v in np.linspace(self.x0, self.x1, 5):
            x = self.sx(v)
            out.append(f'<line x1="{_fmt(x)}" y1="{bottom}" x2="{_fmt(x)}" '
                       f'y2="{bottom + 5}" stroke="#444"/>')
            out.append(f'<text x="{_fmt(x)}" y="{bottom + 18}" '
                       f'text-anchor="middle">{_tick_label(v)}</text>')
        for v in np.linspace(self.y0, self.y1, 5):
            y = self.sy(v)
            out.append(f'<line x1="{left - 5}" y1="{_fmt(y)}" x2="{left}" '
                       f'y2="{_fmt(y)}" stroke="#444"/>')
            out.append(f'<text x="{left - 8}" y="{_fmt(y + 4)}" '
                       f'text-anchor="end">{_tick_label(v)}</text>')
        out.append("</g>")
        out.append(f'<text class="title" x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" '
                   f'font-size="15" font-family="sans-serif">{self.title}</text>')
        out.append(f'<text class="x-label" x="{(left + right) / 2:.0f}" y="{HEIGHT - 14}" '
                   f'text-anchor="middle" font-size="12" font-family="sans-serif">'
                   f'{self.x_label}</text>')
        out.append(f'<text class="y-label" x="16" y="{(top + bottom) / 2:.0f}" '
                   f'text-anchor="middle" font-size="12" font-family="sans-serif" '
                   f'transform="rotate(-90 16 {(top + bottom) / 2:.0f})">{self.y_label}</text>')
        return out

    def render(self) -> str:
        header = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
                  f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">')
        background = f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>'
        return "\n".join([header, background, *self._axes(), *self.parts, "</svg>"]) + "\n"


def render_scatter(xs, ys, x_label: str, y_label: str,
                   title: str = "Scatter plot") -> str:
    xs, ys = list(map(float, xs)), list(map(float, ys))
    if not xs or len(xs) != len(ys):
        raise ValueError("scatter needs equal-length non-empty x and y data")
    cv = _Canvas((min(xs), max(xs)), (min(ys), max(ys)), x_label, y_label, title)
    cv.add('<g class="series" fill="#2a7e43" fill-opacity="0.75">')
    for x, y in zip(xs, ys):
        cv.add(f'<circle class="point" cx="{_fmt(cv.sx(x))}" cy="{_fmt(cv.sy(y))}" r="3"/>')
    cv.add("</g>")
    return cv.render()


def _box_stats(values):
    arr = np.sort(np.asarray(values, dtype=float))
    return {
        "min": float(arr[0]),
        "q1": float(np.percentile(arr, 25)),
        "median": float(np.percentile(arr, 50)),
        "q3": float(np.percentile(arr, 75)),
        "max": float(arr[-1]),
    }


def render_box_grouped(groups: list[tuple[float, list[float]]], bin_width: float,
                       x_label: str, y_label: str,
                       title: str = "Grouped box plot") -> str:
    """One box-and-whisker per non-empty bin; ``groups`` is a list of
    (bin lower edge, values) in ascending bin order."""
    groups = [(float(lo), list(map(float, vals))) for lo, vals in groups if vals]
    if not groups:
        raise ValueError("box plot needs at least one non-empty group")
    all_vals = [v for _, vals in groups for v in vals]
    lo_edge = groups[0][0]
    hi_edge = groups[-1][0] + bin_width
    cv = _Canvas((lo_edge, hi_edge), (min(all_vals), max(all_vals)),
                 x_label, y_label, title)
    box_w = min(40.0, 0.6 * (cv.sx(lo_edge + bin_width) - cv.sx(lo_edge)))
    for lo, vals in groups:
        s = _box_stats(vals)
        cx = cv.sx(lo + bin_width / 2)
        x_left = cx - box_w / 2
        cv.add(f'<g class="box-group" data-bin="{_fmt(lo)}" data-count="{len(vals)}" '
               f'stroke="#1f5f8b" fill="#9ec9e2">')
        cv.add(f'<line x1="{_fmt(cx)}" y1="{_fmt(cv.sy(s["min"]))}" '
               f'x2="{_fmt(cx)}" y2="{_fmt(cv.sy(s["max"]))}"/>')
        top, bot = cv.sy(s["q3"]), cv.sy(s["q1"])
        cv.add(f'<rect x="{_fmt(x_left)}" y="{_fmt(top)}" width="{_fmt(box_w)}" '
               f'height="{_fmt(max(bot - top, 0.5))}"/>')
        cv.add(f'<line x1="{_fmt(x_left)}" y1="{_fmt(cv.sy(s["median"]))}" '
               f'x2="{_fmt(x_left + box_w)}" y2="{_fmt(cv.sy(s["median"]))}" '
               f'stroke-width="2"/>')
        cv.add("</g>")
    return cv.render()


def render_crown_map(cols, rows, widths_m, pixel_size: float = 1.0,
                     title: str = "Crown map") -> str:
    """Circles at tree positions (pixel coordinates, image row axis pointing
    down) with radius proportional to crown width."""
    cols, rows = list(map(float, cols)), list(map(float, rows))
    widths = list(map(float, widths_m))
    if not cols or not len(cols) == len(rows) == len(widths):
        raise ValueError("crown map needs equal-length non-empty position and width data")
    cv = _Canvas((min(cols), max(cols)), (min(rows), max(rows)),
                 "column (px)", "row (px)", title, invert_y=True)
    cv.add('<g class="series" fill="#2a7e43" fill-opacity="0.45" stroke="#1b5e2f">')
    # radius in data units; convert crown width (m) to pixels on the x scale
    unit = abs(cv.sx(1.0) - cv.sx(0.0))
    for c, r, w in zip(cols, rows, widths):
        radius_px = max(w / (2.0 * pixel_size) * unit, 1.5)
        cv.add(f'<circle class="crown" cx="{_fmt(cv.sx(c))}" cy="{_fmt(cv.sy(r))}" '
               f'r="{_fmt(radius_px)}"/>')
    cv.add("</g>")
    return cv.render()


def gaussian_pdf(x: np.ndarray, mean: float, std: float) -> np.ndarray:
    if std <= 0:
        raise ValueError("std must be positive for a pdf evaluation")
    z = (np.asarray(x, dtype=float) - mean) / std
    return np.exp(-0.5 * z * z) / (std * math.sqrt(2.0 * math.pi))


def render_histogram_fit(values, mean: float, std: float, bins: int = 10,
                         title: str = "Histogram with Gaussian fit") -> str:
    """Density histogram with the fitted normal pdf sampled across the range."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise ValueError("histogram needs data")
    density, edges = np.histogram(arr, bins=bins, density=True)
    pdf_max = gaussian_pdf(np.array([mean]), mean, std)[0] if std > 0 else 0.0
    y_max = max(float(density.max()), float(pdf_max), 1e-9)
    cv = _Canvas((float(edges[0]), float(edges[-1])), (0.0, y_max),
                 "value", "density", title)
    cv.add('<g class="series" fill="#c8a24b" fill-opacity="0.7" stroke="#8a6d25">')
    base = cv.sy(0.0)
    for d, lo, hi in zip(density, edges[:-1], edges[1:]):
        x, x2 = cv.sx(float(lo)), cv.sx(float(hi))
        y = cv.sy(float(d))
        cv.add(f'<rect class="bar" x="{_fmt(x)}" y="{_fmt(y)}" '
               f'width="{_fmt(max(x2 - x - 1, 0.5))}" height="{_fmt(max(base - y, 0))}"/>')
    cv.add("</g>")
    if std > 0:
        xs = np.linspace(float(edges[0]), float(edges[-1]), 120)
        pdf = gaussian_pdf(xs, mean, std)
        pts = " ".join(f"{_fmt(cv.sx(float(x)))},{_fmt(cv.sy(float(p)))}"
                       for x, p in zip(xs, pdf))
        cv.add(f'<polyline class="fit" points="{pts}" fill="none" '
               f'stroke="#b03030" stroke-width="2"/>')
    return cv.render()
