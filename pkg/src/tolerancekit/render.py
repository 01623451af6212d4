"""Static SVG output: phase portraits (isoclines, regions, trajectories) and tolerance maps.

Everything is written by hand with fixed number formatting so that identical
input gives byte-identical documents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import escape

import contourpy
import numpy as np

from .geometry import PolygonRegion, StripRegion
from .scan import ToleranceMap
from .system import PlanarSystem

Point = tuple[float, float]
Box = tuple[float, float, float, float]

WIDTH, HEIGHT = 640, 480
MARGIN = 56
LEGEND_W = 150

OUTCOME_FILL = {
    "Tolerance": "#4caf50",
    "NoTolerance": "#e57373",
    "Inconclusive": "#9e9e9e",
}
STATUS_FILL = {
    "skipped-A3": "#ffffff",
    "outside-basin": "#e0e0e0",
    "error": "#212121",
}
PREDICTION_STROKE = {"Guaranteed": "#1b5e20", "Impossible": "#b71c1c"}
TRAJ_COLORS = ("#1565c0", "#ef6c00", "#6a1b9a", "#00838f", "#ad1457", "#558b2f")


def _n(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


class _Frame:
    """Maps data coordinates onto the plot area (y up)."""

    def __init__(self, box: Box, width: int = WIDTH, height: int = HEIGHT, legend: bool = True):
        self.box = box
        self.width, self.height = width, height
        self.left, self.top = MARGIN, MARGIN // 2
        self.right = width - MARGIN // 2 - (LEGEND_W if legend else 0)
        self.bottom = height - MARGIN
        x0, x1, y0, y1 = box
        self.sx = (self.right - self.left) / (x1 - x0)
        self.sy = (self.bottom - self.top) / (y1 - y0)

    def px(self, x: float) -> float:
        return self.left + (x - self.box[0]) * self.sx

    def py(self, y: float) -> float:
        return self.bottom - (y - self.box[2]) * self.sy

    def clip_rect(self) -> str:
        return (
            f'<clipPath id="plot"><rect x="{_n(self.left)}" y="{_n(self.top)}" '
            f'width="{_n(self.right - self.left)}" height="{_n(self.bottom - self.top)}"/></clipPath>'
        )

    def polyline(self, xs, ys, attrs: str) -> str:
        pts = " ".join(f"{_n(self.px(x))},{_n(self.py(y))}" for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y))
        return f'<polyline points="{pts}" fill="none" {attrs}/>'


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


def _axes(fr: _Frame, xlabel: str = "x", ylabel: str = "y") -> list[str]:
    out = [
        '<g class="axes">',
        f'<rect x="{_n(fr.left)}" y="{_n(fr.top)}" width="{_n(fr.right - fr.left)}" '
        f'height="{_n(fr.bottom - fr.top)}" fill="none" stroke="#000" stroke-width="1"/>'
    ]
    x0, x1, y0, y1 = fr.box
    for v in _ticks(x0, x1):
        p = _n(fr.px(v))
        out.append(f'<line x1="{p}" y1="{_n(fr.bottom)}" x2="{p}" y2="{_n(fr.bottom + 5)}" stroke="#000"/>')
        out.append(f'<text x="{p}" y="{_n(fr.bottom + 18)}" text-anchor="middle">{_n(v)}</text>')
    for v in _ticks(y0, y1):
        p = _n(fr.py(v))
        out.append(f'<line x1="{_n(fr.left - 5)}" y1="{p}" x2="{_n(fr.left)}" y2="{p}" stroke="#000"/>')
        out.append(f'<text x="{_n(fr.left - 8)}" y="{p}" text-anchor="end" dominant-baseline="middle">{_n(v)}</text>')
    cx = _n((fr.left + fr.right) / 2)
    out.append(f'<text x="{cx}" y="{_n(fr.height - 12)}" text-anchor="middle">{escape(xlabel)}</text>')
    cy = _n((fr.top + fr.bottom) / 2)
    out.append(f'<text x="14" y="{cy}" text-anchor="middle" transform="rotate(-90 14 {cy})">{escape(ylabel)}</text>')
    out.append("</g>")
    return out


def _legend(fr: _Frame, entries: Sequence[tuple[str, str, str]]) -> list[str]:
    """entries: (label, kind, color) with kind 'fill' or 'line'."""
    x = fr.right + 16
    out = ['<g class="legend">']
    for k, (label, kind, color) in enumerate(entries):
        y = fr.top + 8 + 18 * k
        if kind == "fill":
            out.append(f'<rect x="{_n(x)}" y="{_n(y - 6)}" width="12" height="12" fill="{color}" stroke="#000" stroke-width="0.5"/>')
        else:
            out.append(f'<line x1="{_n(x)}" y1="{_n(y)}" x2="{_n(x + 12)}" y2="{_n(y)}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_n(x + 18)}" y="{_n(y)}" dominant-baseline="middle">{escape(label)}</text>')
    out.append("</g>")
    return out


def _document(fr: _Frame, body: list[str], title: str | None) -> str:
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{fr.width}" height="{fr.height}" '
        f'viewBox="0 0 {fr.width} {fr.height}" font-family="sans-serif" font-size="11">',
        f"<defs>{fr.clip_rect()}</defs>",
        f'<rect width="{fr.width}" height="{fr.height}" fill="#fff"/>',
    ]
    if title:
        head.append(f'<text x="{_n(fr.width / 2)}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>')
    return "\n".join(head + body + ["</svg>"]) + "\n"


def empty_svg(message: str, width: int = WIDTH, height: int = HEIGHT) -> str:
    """A valid document that only carries a diagnostic."""
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">\n'
        f'<text class="diagnostic" x="{width // 2}" y="{height // 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{escape(message)}</text>\n'
        "</svg>\n"
    )


# ---------------------------------------------------------------- isoclines


def isocline_paths(
    sys: PlanarSystem, box: Box, levels: Sequence[float], resolution: int = 200
) -> list[list[np.ndarray]]:
    """Level sets f = C on ``box``, one list of (k, 2) polylines per requested level."""
    x0, x1, y0, y1 = box
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    z = np.empty((resolution, resolution))
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            try:
                z[j, i] = sys.f_value(float(x), float(y))
            except (ArithmeticError, ValueError):
                z[j, i] = np.nan
            else:
                if not math.isfinite(z[j, i]):
                    z[j, i] = np.nan
    gen = contourpy.contour_generator(xs, ys, np.ma.masked_invalid(z), line_type="Separate")
    return [list(gen.lines(float(c))) for c in levels]


# ---------------------------------------------------------------- portraits


@dataclass
class Portrait:
    """Layers for a phase portrait; empty layers are simply skipped."""

    box: Box
    system: PlanarSystem | None = None
    isocline_levels: Sequence[float] = ()
    trajectories: Sequence[tuple[str, Sequence[float], Sequence[float]]] = ()
    regions: Sequence[PolygonRegion | StripRegion] = ()
    markers: Sequence[tuple[str, Point]] = ()
    title: str | None = None
    resolution: int = 200
    extra: dict = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not (self.isocline_levels or self.trajectories or self.regions or self.markers)


def _region_shape(fr: _Frame, region) -> str:
    if isinstance(region, PolygonRegion):
        g = region.graph
        pts = " ".join(f"{_n(fr.px(x))},{_n(fr.py(y))}" for x, y in g)
        return f'<polygon class="region" data-label="{escape(region.label)}" points="{pts}" fill="#ffeb3b" fill-opacity="0.45" stroke="#f9a825"/>'
    if isinstance(region, StripRegion):
        ytop = fr.box[3]
        x, y = fr.px(region.x_lo), fr.py(ytop)
        w = fr.px(region.x_hi) - x
        h = fr.py(region.y_low) - y
        return (
            f'<rect class="region" data-label="{escape(region.label)}" x="{_n(x)}" y="{_n(y)}" '
            f'width="{_n(w)}" height="{_n(max(h, 0.0))}" fill="#81d4fa" fill-opacity="0.35" stroke="#0277bd" stroke-dasharray="4 3"/>'
        )
    raise TypeError(f"cannot draw region of type {type(region).__name__}")


def render_portrait(p: Portrait) -> str:
    if p.is_empty():
        return empty_svg("nothing to draw: no isoclines, regions, trajectories or markers")
    fr = _Frame(p.box)
    body = _axes(fr)
    legend: list[tuple[str, str, str]] = []
    body.append('<g clip-path="url(#plot)">')
    for region in p.regions:
        body.append(_region_shape(fr, region))
        legend.append((region.label, "fill", "#ffeb3b" if isinstance(region, PolygonRegion) else "#81d4fa"))
    if p.isocline_levels:
        if p.system is None:
            raise ValueError("isoclines need a system")
        paths = isocline_paths(p.system, p.box, p.isocline_levels, p.resolution)
        for c, lines in zip(p.isocline_levels, paths):
            body.append(f'<g class="isocline" data-level="{_n(c)}">')
            zero = c == 0
            attrs = f'stroke="{"#000" if zero else "#bdbdbd"}" stroke-width="{"1.5" if zero else "0.8"}"'
            for ln in lines:
                body.append(fr.polyline(ln[:, 0], ln[:, 1], attrs))
            body.append("</g>")
        legend.append(("isoclines f = C", "line", "#bdbdbd"))
    for k, (label, xs, ys) in enumerate(p.trajectories):
        color = TRAJ_COLORS[k % len(TRAJ_COLORS)]
        body.append(f'<g class="trajectory" data-label="{escape(label)}">')
        body.append(fr.polyline(xs, ys, f'stroke="{color}" stroke-width="1.8"'))
        body.append("</g>")
        legend.append((label, "line", color))
    for label, (x, y) in p.markers:
        body.append(
            f'<circle class="marker" cx="{_n(fr.px(x))}" cy="{_n(fr.py(y))}" r="3.5" fill="#000"/>'
            f'<text x="{_n(fr.px(x) + 6)}" y="{_n(fr.py(y) - 6)}">{escape(label)}</text>'
        )
    body.append("</g>")
    body += _legend(fr, legend)
    return _document(fr, body, p.title)


# ---------------------------------------------------------------- tolerance maps


def _cell_fill(c) -> str:
    if c.status != "evaluated":
        return STATUS_FILL.get(c.status, "#ffffff")
    return OUTCOME_FILL.get(c.outcome, "#ffffff")


def render_map(tmap: ToleranceMap, title: str | None = None) -> str:
    if not tmap.cells:
        return empty_svg("empty tolerance map")
    g = tmap.grid
    fr = _Frame((g.x_min, g.x_max, g.y_min, g.y_max))
    dx = (g.x_max - g.x_min) / g.nx
    dy = (g.y_max - g.y_min) / g.ny
    body = ['<g class="cells">']
    for c in tmap.cells:
        x = fr.px(c.x - dx / 2)
        y = fr.py(c.y + dy / 2)
        stroke = PREDICTION_STROKE.get(c.prediction)
        s = f' stroke="{stroke}" stroke-width="1.5"' if stroke else ' stroke="#fff" stroke-width="0.3"'
        body.append(
            f'<rect class="cell" x="{_n(x)}" y="{_n(y)}" width="{_n(dx * fr.sx)}" height="{_n(dy * fr.sy)}" '
            f'fill="{_cell_fill(c)}"{s}/>'
        )
    body.append("</g>")
    r0 = tmap.r0
    if g.x_min <= r0[0] <= g.x_max and g.y_min <= r0[1] <= g.y_max:
        body.append(f'<circle class="marker" cx="{_n(fr.px(r0[0]))}" cy="{_n(fr.py(r0[1]))}" r="4" fill="#000"/>')
    body += _axes(fr, "x(0) of perturbed start", "y(0) of perturbed start")
    entries = [(k, "fill", v) for k, v in OUTCOME_FILL.items()]
    entries += [("outside basin", "fill", STATUS_FILL["outside-basin"]), ("x < x_r", "fill", STATUS_FILL["skipped-A3"])]
    entries += [(f"predicted {k}", "line", v) for k, v in PREDICTION_STROKE.items()]
    body += _legend(fr, entries)
    return _document(fr, body, title or f"tolerance map, {tmap.system}, r0 = ({_n(r0[0])}, {_n(r0[1])})")


def render_svg(data, **style) -> str:
    """Dispatch on the data type: ToleranceMap or Portrait."""
    if data is None:
        return empty_svg("no data")
    if isinstance(data, ToleranceMap):
        return render_map(data, style.get("title"))
    if isinstance(data, Portrait):
        return render_portrait(data)
    raise TypeError(f"cannot render {type(data).__name__}")


def animation_frames(p: Portrait, n: int) -> list[str]:
    """N portraits with trajectories revealed progressively (frame k shows the first k/N of each)."""
    if n < 1:
        raise ValueError("frame count must be positive")
    frames = []
    for k in range(1, n + 1):
        cut = []
        for label, xs, ys in p.trajectories:
            m = max(2, math.ceil(len(xs) * k / n))
            cut.append((label, list(xs)[:m], list(ys)[:m]))
        q = Portrait(p.box, p.system, p.isocline_levels, cut, p.regions, p.markers, p.title, p.resolution)
        frames.append(render_portrait(q))
    return frames


__all__ = [
    "Portrait",
    "animation_frames",
    "empty_svg",
    "isocline_paths",
    "render_map",
    "render_portrait",
    "render_svg",
]
