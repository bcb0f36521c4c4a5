"""Deterministic SVG plot writers plus CSV twins.

Plots are assembled by hand so output bytes depend only on the input
values: fixed float formatting, fixed palette, no timestamps or library
ids.  Three figures cover the analyses: per-dimension trajectory panels,
a condition-pair divergence heatmap, and 2-D per-character trajectory
segments.
"""

from __future__ import annotations

import math

import numpy as np

from .datamodel import float_text

PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]
CHAR_PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _svg_header(width, height):
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n'
    )


def _polyline(points, color, width=1.2):
    coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{coords}"/>\n'


def _text(x, y, content, size=11, anchor="middle"):
    return (
        f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="sans-serif" '
        f'font-size="{size}" text-anchor="{anchor}">{content}</text>\n'
    )


def _axis_box(x, y, w, h):
    return f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" height="{_fmt(h)}" fill="none" stroke="black" stroke-width="1"/>\n'


def plot_trajectories(trajectories, labels=None, title="", k=None) -> str:
    """SVG with one panel per dimension and one polyline per trial.

    trajectories: list of T x k matrices (possibly different T).  Colors
    cycle through a fixed palette per trial.
    """
    if not trajectories:
        raise ValueError("no trajectories to plot")
    k = k or trajectories[0].shape[1]
    panel_w, panel_h, margin, gap = 640, 140, 56, 24
    width = panel_w + 2 * margin
    height = margin + k * (panel_h + gap) + margin
    parts = [_svg_header(width, height)]
    if title:
        parts.append(_text(width / 2, margin - 28, title, size=13))
    t_max = max(tr.shape[0] for tr in trajectories)
    for dim in range(k):
        top = margin + dim * (panel_h + gap)
        values = np.concatenate([tr[:, dim] for tr in trajectories])
        lo, hi = float(values.min()), float(values.max())
        if hi - lo < 1e-12:
            lo, hi = lo - 1.0, hi + 1.0
        parts.append(_axis_box(margin, top, panel_w, panel_h))
        parts.append(_text(margin - 10, top + panel_h / 2, f"dim {dim + 1}", anchor="end"))
        for idx, tr in enumerate(trajectories):
            color = PALETTE[idx % len(PALETTE)]
            t_len = tr.shape[0]
            xs = margin + np.arange(t_len) / max(t_max - 1, 1) * panel_w
            ys = top + panel_h - (tr[:, dim] - lo) / (hi - lo) * panel_h
            parts.append(_polyline(zip(xs, ys), color))
        parts.append(_text(margin, top + panel_h + 14, "0", size=9))
        parts.append(_text(margin + panel_w, top + panel_h + 14, str(t_max - 1), size=9))
    parts.append(_text(width / 2, height - 10, "timestep"))
    if labels:
        for idx, label in enumerate(labels):
            color = PALETTE[idx % len(PALETTE)]
            x = margin + idx * 72
            parts.append(
                f'<rect x="{_fmt(x)}" y="{_fmt(height - 34)}" width="10" height="10" fill="{color}"/>\n'
            )
            parts.append(_text(x + 14, height - 25, str(label), size=9, anchor="start"))
    parts.append("</svg>\n")
    return "".join(parts)


def _heat_color(fraction: float) -> str:
    # white -> dark blue, linear
    f = min(max(fraction, 0.0), 1.0)
    r = round(255 * (1.0 - f) + 8 * f)
    g = round(255 * (1.0 - f) + 48 * f)
    b = round(255 * (1.0 - f) + 107 * f)
    return f"rgb({r},{g},{b})"


def plot_kl_heatmap(matrix) -> str:
    """Heatmap of a KlMatrix with label ticks and a 0..max linear scale."""
    values = np.asarray(matrix.values, dtype=float)
    m = values.shape[0]
    cell = max(18, min(34, 420 // max(m, 1)))
    margin = 86
    width = margin + m * cell + 120
    height = margin + m * cell + 40
    top = float(values.max())
    parts = [_svg_header(width, height)]
    for i in range(m):
        for j in range(m):
            frac = 0.0 if top == 0.0 else values[i, j] / top
            x, y = margin + j * cell, margin + i * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_heat_color(frac)}" stroke="none"/>\n'
            )
    parts.append(_axis_box(margin, margin, m * cell, m * cell))
    for i, label in enumerate(matrix.labels):
        parts.append(_text(margin - 6, margin + i * cell + cell * 0.7, str(label), size=9, anchor="end"))
        parts.append(
            f'<text x="{_fmt(margin + i * cell + cell * 0.7)}" y="{_fmt(margin - 6)}" '
            f'font-family="sans-serif" font-size="9" text-anchor="start" '
            f'transform="rotate(-60 {_fmt(margin + i * cell + cell * 0.7)} {_fmt(margin - 6)})">{label}</text>\n'
        )
    legend_x = margin + m * cell + 18
    steps = 24
    for s in range(steps):
        frac = 1.0 - s / (steps - 1)
        parts.append(
            f'<rect x="{legend_x}" y="{margin + s * 6}" width="14" height="6" '
            f'fill="{_heat_color(frac)}"/>\n'
        )
    parts.append(_text(legend_x + 20, margin + 8, float_text(top), size=9, anchor="start"))
    parts.append(_text(legend_x + 20, margin + steps * 6, "0", size=9, anchor="start"))
    parts.append(_text(width / 2, height - 8, "pairwise divergence (row vs column)", size=11))
    parts.append("</svg>\n")
    return "".join(parts)


def kl_matrix_csv(matrix) -> str:
    """CSV twin of the heatmap: labels in the header row and column."""
    labels = [str(label) for label in matrix.labels]
    lines = ["," + ",".join(labels)]
    for label, row in zip(labels, np.asarray(matrix.values, dtype=float)):
        lines.append(label + "," + ",".join(float_text(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_kl_matrix_csv(text: str):
    """Inverse of kl_matrix_csv; returns (labels, values array)."""
    lines = [line for line in text.strip().split("\n")]
    labels = lines[0].split(",")[1:]
    values = np.array([[float(v) for v in line.split(",")[1:]] for line in lines[1:]])
    return labels, values


def plot_char_segments(segments, chars) -> str:
    """2-D panels (first two trajectory dimensions), one polyline per
    segment, colored by character."""
    if not segments:
        raise ValueError("no segments to plot")
    chars = list(chars)
    side, margin = 420, 56
    width = side + 2 * margin + 110
    height = side + 2 * margin
    pts = np.vstack([s.values[:, :2] for s in segments if s.values.shape[0] > 0])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.where(hi - lo < 1e-12, 1.0, hi - lo)
    parts = [_svg_header(width, height)]
    parts.append(_axis_box(margin, margin, side, side))
    for seg in segments:
        if seg.values.shape[0] == 0:
            continue
        color = CHAR_PALETTE[chars.index(seg.character) % len(CHAR_PALETTE)] if seg.character in chars else "#333333"
        xs = margin + (seg.values[:, 0] - lo[0]) / span[0] * side
        ys = margin + side - (seg.values[:, 1] - lo[1]) / span[1] * side
        if seg.values.shape[0] == 1:
            xs = np.repeat(xs, 2)
            ys = np.repeat(ys, 2)
        parts.append(_polyline(zip(xs, ys), color, width=1.0))
    for idx, ch in enumerate(chars):
        color = CHAR_PALETTE[idx % len(CHAR_PALETTE)]
        y = margin + 16 + idx * 18
        parts.append(f'<rect x="{side + margin + 24}" y="{y - 9}" width="10" height="10" fill="{color}"/>\n')
        parts.append(_text(side + margin + 40, y, f"'{ch}'", size=11, anchor="start"))
    parts.append(_text(margin + side / 2, height - 12, "dim 1", size=11))
    parts.append(_text(margin - 28, margin + side / 2, "dim 2", size=11))
    parts.append("</svg>\n")
    return "".join(parts)


def plot_strokes(stroke_sets, labels=None, title="") -> str:
    """Render pen stroke sequences (T x 3 offsets) as handwriting lines."""
    if not stroke_sets:
        raise ValueError("no strokes to plot")
    margin, row_h = 30, 90
    width = 760
    height = margin + len(stroke_sets) * row_h + margin
    parts = [_svg_header(width, height)]
    if title:
        parts.append(_text(width / 2, 18, title, size=12))
    for idx, strokes in enumerate(stroke_sets):
        path = np.cumsum(strokes[:, :2], axis=0)
        lo = path.min(axis=0)
        hi = path.max(axis=0)
        span = max(float(np.max(hi - lo)), 1e-9)
        scale = min((width - 2 * margin) / span, (row_h - 16) / span)
        base_y = margin + idx * row_h + row_h / 2
        xy = (path - (lo + hi) / 2) * scale
        xs = margin + (width - 2 * margin) / 2 + xy[:, 0]
        ys = base_y - xy[:, 1]
        pen_down = np.concatenate([[True], strokes[:-1, 2] < 0.5])
        run = []
        color = PALETTE[idx % len(PALETTE)]
        for t in range(strokes.shape[0]):
            if pen_down[t]:
                run.append((xs[t], ys[t]))
            else:
                if len(run) > 1:
                    parts.append(_polyline(run, color, width=1.4))
                run = [(xs[t], ys[t])]
        if len(run) > 1:
            parts.append(_polyline(run, color, width=1.4))
        if labels:
            parts.append(_text(margin, base_y - row_h / 2 + 12, str(labels[idx]), size=10, anchor="start"))
    parts.append("</svg>\n")
    return "".join(parts)
