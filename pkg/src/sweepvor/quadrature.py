"""Quadrature rules for convex polygonal cells and straight facets."""

from functools import lru_cache
from math import factorial

import numpy as np

from .errors import UnsupportedOrder

# Grundmann-Moller rules suffer growing cancellation between their positive and
# negative weights; beyond this the rules are not trustworthy in double precision.
MAX_CELL_ORDER = 30


@lru_cache(maxsize=None)
def _gm_triangle_rule(s):
    """Grundmann-Moller rule of index s on the unit triangle, exact for degree 2s+1.

    Returns barycentric coordinates (m, 3) and weights (m,) that integrate over
    the reference triangle {x >= 0, y >= 0, x + y <= 1} (weights sum to 1/2).
    The point set is symmetric under permutations of the barycentric coordinates.
    """
    n = 2
    d = 2 * s + 1
    barys = []
    weights = []
    for i in range(s + 1):
        denom = d + n - 2 * i
        w = (-1.0) ** i * 2.0 ** (-2 * s) * denom ** d / (factorial(i) * factorial(d + n - i))
        for b0 in range(s - i + 1):
            for b1 in range(s - i - b0 + 1):
                b2 = s - i - b0 - b1
                barys.append(((2 * b0 + 1) / denom, (2 * b1 + 1) / denom, (2 * b2 + 1) / denom))
                weights.append(w)
    return np.asarray(barys, dtype=float), np.asarray(weights, dtype=float)


def triangle_quadrature(v0, v1, v2, order):
    """Symmetric rule on the triangle (v0, v1, v2), exact for total degree <= order."""
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    if order > MAX_CELL_ORDER:
        raise UnsupportedOrder(f"cell quadrature order {order} > {MAX_CELL_ORDER}")
    barys, w = _gm_triangle_rule(order // 2)
    corners = np.asarray([v0, v1, v2], dtype=float)
    pts = barys @ corners
    area = 0.5 * abs(
        (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1])
    )
    return pts, w * (2.0 * area)


def cell_quadrature(cell, order):
    """Volume rule on a convex polygonal cell, exact for total degree <= order.

    The cell is fan-triangulated from its centroid and a symmetric triangle rule
    is applied on each triangle.  Weights sum to the cell area.
    """
    verts = cell.vertices
    c = cell.centroid
    pts = []
    wts = []
    m = len(verts)
    for k in range(m):
        p, w = triangle_quadrature(c, verts[k], verts[(k + 1) % m], order)
        pts.append(p)
        wts.append(w)
    return np.vstack(pts), np.concatenate(wts)


def segment_quadrature(a, b, n_points):
    """Gauss-Legendre rule mapped to the segment [a, b].

    Exact for polynomials of degree <= 2 n_points - 1 along the segment;
    weights sum to the segment length.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    x, w = np.polynomial.legendre.leggauss(n_points)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[None, :] + x[:, None] * half[None, :]
    return pts, w * (0.5 * np.hypot(*(b - a)))


def facet_quadrature(facet, n_points):
    """Gauss-Legendre rule on a mesh facet (see segment_quadrature)."""
    return segment_quadrature(facet.endpoints[0], facet.endpoints[1], n_points)
