"""Tiny deterministic SVG scatter writer (no plotting backend needed)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b",
    "#e377c2", "#17becf", "#bcbd22", "#ff7f0e", "#7f7f7f",
)


def _f(v: float) -> str:
    return f"{v:.2f}"


def _star(cx, cy, r, points, inner):
    pts = []
    for i in range(2 * points):
        rad = r if i % 2 == 0 else r * inner
        a = -math.pi / 2 + i * math.pi / points
        pts.append(f"{_f(cx + rad * math.cos(a))},{_f(cy + rad * math.sin(a))}")
    return " ".join(pts)


def marker(shape: str, cx: float, cy: float, color: str, r: float = 5.0) -> str:
    """SVG fragment for one marker; unknown shapes raise ``ValueError``."""
    stroke = f'stroke="{color}" stroke-width="1.8" fill="none"'
    fill = f'fill="{color}" stroke="{color}"'
    if shape == "cross":
        return (f'<path d="M{_f(cx - r)},{_f(cy - r)}L{_f(cx + r)},{_f(cy + r)}'
                f'M{_f(cx - r)},{_f(cy + r)}L{_f(cx + r)},{_f(cy - r)}" {stroke}/>')
    if shape == "plus":
        return (f'<path d="M{_f(cx - r)},{_f(cy)}L{_f(cx + r)},{_f(cy)}'
                f'M{_f(cx)},{_f(cy - r)}L{_f(cx)},{_f(cy + r)}" {stroke}/>')
    if shape == "circle":
        return f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" {fill}/>'
    if shape == "square":
        return (f'<rect x="{_f(cx - r)}" y="{_f(cy - r)}" width="{_f(2 * r)}" '
                f'height="{_f(2 * r)}" {fill}/>')
    if shape == "star":
        return f'<polygon points="{_star(cx, cy, r * 1.2, 6, 0.45)}" {fill}/>'
    if shape == "star5":
        return f'<polygon points="{_star(cx, cy, r * 1.25, 5, 0.45)}" {fill}/>'
    if shape == "triangle":
        return (f'<polygon points="{_f(cx)},{_f(cy - r)} {_f(cx + r)},{_f(cy + r)} '
                f'{_f(cx - r)},{_f(cy + r)}" {fill}/>')
    if shape == "triangle_down":
        return (f'<polygon points="{_f(cx)},{_f(cy + r)} {_f(cx + r)},{_f(cy - r)} '
                f'{_f(cx - r)},{_f(cy - r)}" {fill}/>')
    raise ValueError(f"unknown marker shape {shape!r}")


def scatter(points, groups, shapes: dict, colors: dict, title: str = "",
            ylabel: str = "delta", hlines=(), width: int = 720, height: int = 420) -> str:
    """Categorical scatter.

    ``points`` is a sequence of ``(group, shape_key, color_key, y)``; ``groups``
    fixes the x-axis order. ``shapes`` maps shape keys to marker names and
    ``colors`` maps color keys to CSS colors; both are drawn as legends.
    """
    if not points:
        raise ValueError("nothing to plot")
    left, right, top, bottom = 60, 170, 40, 50
    pw, ph = width - left - right, height - top - bottom
    ys = [p[3] for p in points] + list(hlines)
    ymin, ymax = min(ys), max(ys)
    span = max(ymax - ymin, 1.0)
    ymin, ymax = ymin - 0.1 * span, ymax + 0.1 * span
    gx = {g: left + pw * (i + 0.5) / len(groups) for i, g in enumerate(groups)}
    slot = pw / len(groups) * 0.7
    skeys = list(shapes)

    def ypix(v):
        return top + ph * (ymax - v) / (ymax - ymin)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(ymin, ymax):
        y = ypix(t)
        out.append(f'<line x1="{left - 4}" y1="{_f(y)}" x2="{left}" y2="{_f(y)}" stroke="#444"/>')
        out.append(f'<text x="{left - 6}" y="{_f(y + 4)}" text-anchor="end">{t:g}</text>')
    for v in hlines:
        y = ypix(v)
        out.append(f'<line x1="{left}" y1="{_f(y)}" x2="{left + pw}" y2="{_f(y)}" '
                   f'stroke="#999" stroke-dasharray="4,3"/>')
    for g, x in gx.items():
        out.append(f'<text x="{_f(x)}" y="{top + ph + 16}" text-anchor="middle">{escape(str(g))}</text>')
    out.append(f'<text x="14" y="{top + ph // 2}" transform="rotate(-90 14 {top + ph // 2})" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    for group, skey, ckey, y in points:
        offset = (skeys.index(skey) + 0.5) / len(skeys) - 0.5 if len(skeys) > 1 else 0.0
        out.append(marker(shapes[skey], gx[group] + offset * slot, ypix(y), colors[ckey]))
    ly = top + 8
    lx = left + pw + 20
    out.append(f'<text x="{lx}" y="{ly}" font-weight="bold">test condition</text>')
    for key in skeys:
        ly += 16
        out.append(marker(shapes[key], lx + 6, ly - 4, "#333", 4.5))
        out.append(f'<text x="{lx + 18}" y="{ly}">{escape(str(key))}</text>')
    ly += 24
    out.append(f'<text x="{lx}" y="{ly}" font-weight="bold">training</text>')
    for key, color in colors.items():
        ly += 16
        out.append(f'<rect x="{lx + 1}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{lx + 18}" y="{ly}">{escape(str(key))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _ticks(lo: float, hi: float, n: int = 6) -> list:
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=mag * 10)
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9:
        ticks.append(round(t, 10))
        t += step
    return ticks
