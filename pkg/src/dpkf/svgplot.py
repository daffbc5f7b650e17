"""Tiny deterministic SVG rendering for traces, comparisons, and sweeps.

Hand-rolled on purpose: output is a pure function of the input data, so
re-running an experiment overwrites byte-identical files. Plots carry no
semantic contract beyond mirroring the CSV they sit next to.
"""

from __future__ import annotations

import math

WIDTH, HEIGHT = 640, 420
MARGIN = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _scale(vals: list[float], lo_px: float, hi_px: float):
    lo, hi = min(vals), max(vals)
    if hi == lo:
        hi = lo + 1.0
    span = hi - lo

    def to_px(v: float) -> float:
        return lo_px + (v - lo) / span * (hi_px - lo_px)

    return to_px, lo, hi


def _axes(title: str, xlabel: str, ylabel: str, xlo, xhi, ylo, yhi) -> list[str]:
    return [
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" '
        f'stroke="black"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="16" y="{HEIGHT // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {HEIGHT // 2})">{ylabel}</text>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 16}" font-size="10">{xlo:.4g}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 16}" text-anchor="end" '
        f'font-size="10">{xhi:.4g}</text>',
        f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" text-anchor="end" '
        f'font-size="10">{ylo:.4g}</text>',
        f'<text x="{MARGIN - 4}" y="{MARGIN + 4}" text-anchor="end" '
        f'font-size="10">{yhi:.4g}</text>',
    ]


def _document(parts: list[str]) -> str:
    body = "\n".join(parts)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">\n{body}\n</svg>\n'
    )


def line_plot(
    series: dict[str, tuple[list[float], list[float]]],
    title: str,
    xlabel: str,
    ylabel: str,
    log_y: bool = False,
) -> str:
    """Polyline plot of named (x, y) series."""
    all_x = [v for xs, _ in series.values() for v in xs]
    all_y = [v for _, ys in series.values() for v in ys]
    if log_y:
        floor = min((v for v in all_y if v > 0), default=1e-300)
        all_y = [math.log10(max(v, floor)) for v in all_y]
    x_px, xlo, xhi = _scale(all_x, MARGIN, WIDTH - MARGIN)
    y_px, ylo, yhi = _scale(all_y, HEIGHT - MARGIN, MARGIN)
    parts = _axes(title, xlabel, ylabel, xlo, xhi, ylo, yhi)
    for i, (name, (xs, ys)) in enumerate(series.items()):
        if log_y:
            floor = min((v for v in ys if v > 0), default=1e-300)
            ys = [math.log10(max(v, floor)) for v in ys]
        pts = " ".join(f"{_fmt(x_px(x))},{_fmt(y_px(y))}" for x, y in zip(xs, ys))
        color = PALETTE[i % len(PALETTE)]
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * i + 10}" '
            f'font-size="11" fill="{color}">{name}</text>'
        )
    return _document(parts)


def heatmap(
    row_vals: list[float],
    col_vals: list[float],
    grid: list[list[float]],
    title: str,
    xlabel: str,
    ylabel: str,
) -> str:
    """Colored-cell matrix; rows indexed by row_vals, columns by col_vals."""
    flat = [v for row in grid for v in row if math.isfinite(v)]
    lo, hi = (min(flat), max(flat)) if flat else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    n_r, n_c = len(row_vals), len(col_vals)
    cell_w = (WIDTH - 2 * MARGIN) / n_c
    cell_h = (HEIGHT - 2 * MARGIN) / n_r
    parts = [
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="16" y="{HEIGHT // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {HEIGHT // 2})">{ylabel}</text>',
    ]
    for i, rv in enumerate(row_vals):
        for j, cv in enumerate(col_vals):
            v = grid[i][j]
            frac = (v - lo) / span if math.isfinite(v) else 0.0
            shade = int(round(255 * (1.0 - frac)))
            color = f"rgb({shade},{shade},255)" if math.isfinite(v) else "rgb(200,200,200)"
            x0 = MARGIN + j * cell_w
            y0 = MARGIN + i * cell_h
            parts.append(
                f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(cell_w)}" '
                f'height="{_fmt(cell_h)}" fill="{color}" stroke="black" stroke-width="0.5"/>'
            )
            parts.append(
                f'<text x="{_fmt(x0 + cell_w / 2)}" y="{_fmt(y0 + cell_h / 2 + 3)}" '
                f'text-anchor="middle" font-size="9">{v:.3g}</text>'
            )
    for j, cv in enumerate(col_vals):
        parts.append(
            f'<text x="{_fmt(MARGIN + (j + 0.5) * cell_w)}" y="{HEIGHT - MARGIN + 14}" '
            f'text-anchor="middle" font-size="10">{cv:.3g}</text>'
        )
    for i, rv in enumerate(row_vals):
        parts.append(
            f'<text x="{MARGIN - 4}" y="{_fmt(MARGIN + (i + 0.5) * cell_h + 3)}" '
            f'text-anchor="end" font-size="10">{rv:.3g}</text>'
        )
    return _document(parts)
