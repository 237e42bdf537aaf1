"""Minimal deterministic SVG charts for run reports.

Static result displays only: polyline curves and scatter plots with plain
linear axes. Byte output is deterministic for identical inputs.
"""

from __future__ import annotations

WIDTH, HEIGHT = 640, 400
MARGIN = 54
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _axes(x_range, y_range, title, x_label, y_label) -> list[str]:
    x0, x1 = x_range
    y0, y1 = y_range
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle">{x_label}</text>',
        f'<text x="16" y="{HEIGHT // 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {HEIGHT // 2})">{y_label}</text>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle">{_fmt(x0)}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle">{_fmt(x1)}</text>',
        f'<text x="{MARGIN - 6}" y="{HEIGHT - MARGIN + 4}" text-anchor="end">{_fmt(y0)}</text>',
        f'<text x="{MARGIN - 6}" y="{MARGIN + 4}" text-anchor="end">{_fmt(y1)}</text>',
    ]
    return parts


def _project(x, y, x_range, y_range) -> tuple[float, float]:
    x0, x1 = x_range
    y0, y1 = y_range
    span_x = (x1 - x0) or 1.0
    span_y = (y1 - y0) or 1.0
    px = MARGIN + (x - x0) / span_x * (WIDTH - 2 * MARGIN)
    py = HEIGHT - MARGIN - (y - y0) / span_y * (HEIGHT - 2 * MARGIN)
    return px, py


def _ranges(series):
    xs = [x for _, points in series for x, _ in points]
    ys = [y for _, points in series for _, y in points]
    if not xs:
        return (0.0, 1.0), (0.0, 1.0)
    x_range = (min(xs), max(xs))
    y_range = (min(ys), max(ys))
    if x_range[0] == x_range[1]:
        x_range = (x_range[0] - 0.5, x_range[1] + 0.5)
    if y_range[0] == y_range[1]:
        y_range = (y_range[0] - 0.5, y_range[1] + 0.5)
    return x_range, y_range


def line_chart(series, title: str, x_label: str, y_label: str) -> str:
    """``series``: list of (name, [(x, y), ...]) pairs."""
    x_range, y_range = _ranges(series)
    parts = _axes(x_range, y_range, title, x_label, y_label)
    for i, (name, points) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if points:
            coords = " ".join(
                "{:.2f},{:.2f}".format(*_project(x, y, x_range, y_range)) for x, y in points
            )
            parts.append(
                f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
        if name:
            parts.append(
                f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * i}" fill="{color}" '
                f'font-size="10">{name}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_chart(groups, title: str, x_label: str, y_label: str) -> str:
    """``groups``: list of (name, [(x, y), ...]) pairs, one marker color each."""
    x_range, y_range = _ranges(groups)
    parts = _axes(x_range, y_range, title, x_label, y_label)
    for i, (name, points) in enumerate(groups):
        color = PALETTE[i % len(PALETTE)]
        for x, y in points:
            px, py = _project(x, y, x_range, y_range)
            parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="4" fill="{color}"/>')
        if name:
            parts.append(
                f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * i}" fill="{color}" '
                f'font-size="10">{name}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
