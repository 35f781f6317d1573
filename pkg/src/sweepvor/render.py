"""Deterministic SVG rendering of meshes and cellwise scalar fields.

No plotting library: polygons are written directly.  Cell fills use a linear
colormap over [min, max] of the cell values, interpolating componentwise
between five anchor colours (dark violet via teal and green to yellow).
"""

import numpy as np

from .errors import IoError

_ANCHORS = [
    (0.00, (68, 1, 84)),
    (0.25, (59, 82, 139)),
    (0.50, (33, 145, 140)),
    (0.75, (94, 201, 98)),
    (1.00, (253, 231, 37)),
]


def colormap(t):
    """RGB triple for t in [0, 1], linear between the anchor colours."""
    t = min(1.0, max(0.0, float(t)))
    for (t0, c0), (t1, c1) in zip(_ANCHORS, _ANCHORS[1:]):
        if t <= t1:
            s = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            return tuple(round(a + s * (b - a)) for a, b in zip(c0, c1))
    return _ANCHORS[-1][1]


def render_svg(mesh, cell_values=None, width=800):
    """SVG document with one filled polygon per cell (uniform grey if no values)."""
    lo = mesh.domain.vertices.min(axis=0)
    hi = mesh.domain.vertices.max(axis=0)
    span = hi - lo
    scale = width / span.max()
    w = span[0] * scale
    h = span[1] * scale

    def xy(p):
        return (p[0] - lo[0]) * scale, h - (p[1] - lo[1]) * scale

    if cell_values is not None:
        vals = np.asarray(cell_values, dtype=float)
        vmin = float(vals.min())
        vmax = float(vals.max())
        rng = vmax - vmin
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.2f}" height="{h:.2f}" '
        f'viewBox="0 0 {w:.2f} {h:.2f}">',
    ]
    for c in mesh.cells:
        pts = " ".join(f"{x:.4f},{y:.4f}" for x, y in (xy(v) for v in c.vertices))
        if cell_values is None:
            fill = "#d8d8d8"
        else:
            t = 0.5 if rng == 0.0 else (vals[c.id] - vmin) / rng
            r, g, b = colormap(t)
            fill = f"#{r:02x}{g:02x}{b:02x}"
        lines.append(
            f'<polygon points="{pts}" fill="{fill}" stroke="#000000" stroke-width="0.5"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def save_svg(path, text):
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(str(exc)) from exc
