"""Tiny deterministic SVG renderer for histograms, curve overlays, heatmaps.

Hand-rolled string assembly: identical inputs yield byte-identical files
(no timestamps, no generated ids), which the reproducibility checks rely on.
"""

from __future__ import annotations

import numpy as np

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 60, 20, 36, 46
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="22" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]


def _axes(x0: float, x1: float, y0: float, y1: float) -> list[str]:
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB
    parts = [
        f'<rect x="{_ML}" y="{_MT}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#444"/>'
    ]
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        px = _ML + plot_w * i / 4
        parts.append(
            f'<text x="{_fmt(px)}" y="{_H - _MB + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{_fmt(fx)}</text>'
        )
        fy = y0 + (y1 - y0) * i / 4
        py = _H - _MB - plot_h * i / 4
        parts.append(
            f'<text x="{_ML - 6}" y="{_fmt(py + 3)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{_fmt(fy)}</text>'
        )
    return parts


def histogram_svg(edges: np.ndarray, counts: np.ndarray, title: str, path: str) -> None:
    """Render one histogram; a single bin fills the plot width."""
    edges = np.asarray(edges, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if len(counts) < 1 or len(edges) != len(counts) + 1:
        raise ValueError("need n+1 edges for n bins, n >= 1")
    x0, x1 = float(edges[0]), float(edges[-1])
    if x1 == x0:
        x1 = x0 + 1.0
    ymax = max(float(counts.max()), 1.0)
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB
    parts = _header(title) + _axes(x0, x1, 0.0, ymax)
    for left, right, c in zip(edges[:-1], edges[1:], counts):
        px = _ML + (left - x0) / (x1 - x0) * plot_w
        pw = max((right - left) / (x1 - x0) * plot_w, 1.0)
        ph = c / ymax * plot_h
        parts.append(
            f'<rect x="{_fmt(px)}" y="{_fmt(_H - _MB - ph)}" width="{_fmt(pw)}" '
            f'height="{_fmt(ph)}" fill="#1f77b4" stroke="white" stroke-width="0.5"/>'
        )
    parts.append("</svg>")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def curves_svg(series: dict[str, tuple[np.ndarray, np.ndarray]], title: str,
               path: str) -> None:
    """Overlay labelled (x, y) polylines with a small legend."""
    if not series:
        raise ValueError("need at least one series")
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB
    parts = _header(title) + _axes(x0, x1, y0, y1)
    for k, (label, (x, y)) in enumerate(sorted(series.items(),
                                               key=lambda kv: kv[0])):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        color = _PALETTE[k % len(_PALETTE)]
        pts = []
        for xi, yi in zip(x, y):
            if not np.isfinite(yi):
                continue
            px = _ML + (xi - x0) / (x1 - x0) * plot_w
            py = _H - _MB - (yi - y0) / (y1 - y0) * plot_h
            pts.append(f"{_fmt(px)},{_fmt(py)}")
        parts.append(
            f'<polyline points="{" ".join(pts)}" fill="none" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{_W - _MR - 6}" y="{_MT + 14 + 14 * k}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def heatmap_svg(matrix: np.ndarray, col_names: tuple[str, ...], title: str,
                path: str) -> None:
    """Row-per-step heatmap, linear white-to-blue scale."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    n_rows, n_cols = matrix.shape
    if n_cols != len(col_names):
        raise ValueError("column names must match matrix width")
    vmax = float(matrix.max())
    if vmax <= 0:
        vmax = 1.0
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB
    cw = plot_w / n_cols
    ch = plot_h / n_rows
    parts = _header(title)
    for j, name in enumerate(col_names):
        parts.append(
            f'<text x="{_fmt(_ML + (j + 0.5) * cw)}" y="{_H - _MB + 16}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="10">{name}</text>'
        )
    for i in range(n_rows):
        parts.append(
            f'<text x="{_ML - 6}" y="{_fmt(_MT + (i + 0.7) * ch)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="9">{i}</text>'
        )
        for j in range(n_cols):
            frac = matrix[i, j] / vmax
            # white (255,255,255) -> steel blue (31,119,180)
            r = round(255 - frac * (255 - 31))
            g = round(255 - frac * (255 - 119))
            b = round(255 - frac * (255 - 180))
            parts.append(
                f'<rect x="{_fmt(_ML + j * cw)}" y="{_fmt(_MT + i * ch)}" '
                f'width="{_fmt(cw)}" height="{_fmt(ch)}" fill="rgb({r},{g},{b})"/>'
            )
    parts.append("</svg>")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
