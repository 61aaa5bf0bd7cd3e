"""Text and SVG rendering of a labelled SOM grid.

Glyphs follow the usual legend for these maps: circles for Probe, plus
signs for DoS, triangles for R2L and crosses for U2R.
"""

from __future__ import annotations

from xml.sax.saxutils import quoteattr

from .som import SomModel

TEXT_GLYPHS = {"Probe": "o", "DoS": "+", "R2L": "^", "U2R": "x"}
CELL = 32
MARGIN = 16


def render_text(som: SomModel) -> str:
    if not som.labelled:
        raise ValueError("cannot render an unlabeled model")
    rows = []
    for y in range(som.grid_side):
        row = som.labels[y * som.grid_side : (y + 1) * som.grid_side]
        rows.append(" ".join(TEXT_GLYPHS[lab] for lab in row))
    return "\n".join(rows) + "\n"


def _shape(label: str, cx: float, cy: float, j: int) -> str:
    r = CELL * 0.3
    attrs = f'class="neuron" data-index="{j}" data-label={quoteattr(label)}'
    if label == "Probe":
        return f'<circle {attrs} cx="{cx:g}" cy="{cy:g}" r="{r:g}" fill="none" stroke="black"/>'
    if label == "R2L":
        pts = f"{cx:g},{cy - r:g} {cx + r:g},{cy + r:g} {cx - r:g},{cy + r:g}"
        return f'<polygon {attrs} points="{pts}" fill="none" stroke="black"/>'
    if label == "DoS":
        d = f"M{cx - r:g},{cy:g}H{cx + r:g}M{cx:g},{cy - r:g}V{cy + r:g}"
    else:
        d = f"M{cx - r:g},{cy - r:g}L{cx + r:g},{cy + r:g}M{cx - r:g},{cy + r:g}L{cx + r:g},{cy - r:g}"
    return f'<path {attrs} d="{d}" fill="none" stroke="black" stroke-width="2"/>'


def render_svg(som: SomModel) -> str:
    if not som.labelled:
        raise ValueError("cannot render an unlabeled model")
    size = 2 * MARGIN + CELL * som.grid_side
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
    ]
    for j, label in enumerate(som.labels):
        x, y = som.coords(j)
        cx = MARGIN + CELL * x + CELL / 2
        cy = MARGIN + CELL * y + CELL / 2
        out.append(_shape(label, cx, cy, j))
    out.append("</svg>")
    return "\n".join(out) + "\n"
