"""Minimal deterministic SVG line charts (no plotting dependency)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[Optional[float]]
    dashed: bool = False


@dataclass
class Panel:
    title: str
    series: list = field(default_factory=list)
    y_range: Optional[tuple] = None
    x_label: str = "step"
    kind: str = "line"          # "line" or "bar" (bars use the first series only)
    colors: Optional[list] = None   # per-series override of the palette


def _f(v: float) -> str:
    return f"{v:.2f}"


def _nice_max(v: float) -> float:
    if v <= 0:
        return 1.0
    for m in (1, 2, 2.5, 5, 10):
        for e in range(-6, 9):
            cand = m * 10.0 ** e
            if cand >= v:
                return cand
    return v


def render(panels: Sequence[Panel], title: str = "", panel_w: int = 360, panel_h: int = 260) -> str:
    margin_l, margin_r, margin_t, margin_b = 52, 14, 40, 64
    width = len(panels) * (panel_w + margin_l + margin_r)
    height = panel_h + margin_t + margin_b + (20 if title else 0)
    top = margin_t + (20 if title else 0)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{_f(width / 2)}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>')
    labels = []
    for p_i, panel in enumerate(panels):
        x0 = p_i * (panel_w + margin_l + margin_r) + margin_l
        xs = [float(x) for s in panel.series for x in s.x]
        ys = [float(y) for s in panel.series for y in s.y if y is not None]
        x_max = max(xs) if xs else 1.0
        x_min = min(xs) if xs else 0.0
        if x_max == x_min:
            x_max = x_min + 1.0
        if panel.y_range is not None:
            y_min, y_max = panel.y_range
        else:
            y_min, y_max = 0.0, _nice_max(max(ys) if ys else 1.0)

        def px(x):
            return x0 + (float(x) - x_min) / (x_max - x_min) * panel_w

        def py(y):
            return top + panel_h - (float(y) - y_min) / (y_max - y_min) * panel_h

        out.append(f'<text x="{_f(x0 + panel_w / 2)}" y="{top - 8}" text-anchor="middle" '
                   f'font-size="12">{escape(panel.title)}</text>')
        out.append(f'<rect x="{x0}" y="{top}" width="{panel_w}" height="{panel_h}" fill="none" stroke="#444"/>')
        for k in range(5):
            yv = y_min + (y_max - y_min) * k / 4
            yy = py(yv)
            out.append(f'<line x1="{x0}" y1="{_f(yy)}" x2="{x0 + panel_w}" y2="{_f(yy)}" stroke="#ddd"/>')
            out.append(f'<text x="{x0 - 4}" y="{_f(yy + 4)}" text-anchor="end">{yv:g}</text>')
            xv = x_min + (x_max - x_min) * k / 4
            out.append(f'<text x="{_f(px(xv))}" y="{top + panel_h + 14}" text-anchor="middle">{xv:g}</text>')
        out.append(f'<text x="{_f(x0 + panel_w / 2)}" y="{top + panel_h + 28}" '
                   f'text-anchor="middle">{escape(panel.x_label)}</text>')
        if panel.kind == "bar" and panel.series:
            s = panel.series[0]
            bw = panel_w / max(len(s.x), 1)
            for i, (xv, yv) in enumerate(zip(s.x, s.y)):
                if yv is None:
                    continue
                h = (float(yv) - y_min) / (y_max - y_min) * panel_h
                out.append(f'<rect x="{_f(x0 + i * bw)}" y="{_f(top + panel_h - h)}" width="{_f(bw)}" '
                           f'height="{_f(h)}" fill="{PALETTE[0]}" stroke="white"/>')
            continue
        for s_i, s in enumerate(panel.series):
            color = panel.colors[s_i] if panel.colors else PALETTE[s_i % len(PALETTE)]
            dash = ' stroke-dasharray="4,3"' if s.dashed else ""
            runs, run = [], []
            for xv, yv in zip(s.x, s.y):
                if yv is None:
                    runs.append(run)
                    run = []
                else:
                    run.append(f"{_f(px(xv))},{_f(py(yv))}")
            runs.append(run)
            for run in runs:
                if len(run) > 1:
                    out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} '
                               f'points="{" ".join(run)}"/>')
                elif len(run) == 1:
                    cx, cy = run[0].split(",")
                    out.append(f'<circle cx="{cx}" cy="{cy}" r="2" fill="{color}"/>')
            entry = (s.label, color, s.dashed)
            if entry not in labels:
                labels.append(entry)
    # legend along the bottom
    lx, ly = margin_l, height - 14
    for label, color, dashed in labels:
        dash = ' stroke-dasharray="4,3"' if dashed else ""
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 22}" y="{ly}">{escape(label)}</text>')
        lx += 30 + 7 * len(label)
    out.append("</svg>")
    return "\n".join(out) + "\n"
