"""Planar polygon predicates used by the augmentations, label mining and the rasterizer."""

from __future__ import annotations

import numpy as np

BOUNDARY_EPS = 1e-9


def points_in_polygon(points: np.ndarray, polygon: np.ndarray, eps: float = BOUNDARY_EPS) -> np.ndarray:
    """Even-odd containment test for many points; points on an edge count as inside.

    ``points`` is (N, 2), ``polygon`` is (K, 2) with the closing edge implied.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    poly = np.asarray(polygon, dtype=float).reshape(-1, 2)
    if len(pts) == 0 or len(poly) < 3:
        return np.zeros(len(pts), dtype=bool)
    px = pts[:, 0:1]
    py = pts[:, 1:2]
    a = poly
    b = np.roll(poly, -1, axis=0)
    ax, ay = a[:, 0][None, :], a[:, 1][None, :]
    bx, by = b[:, 0][None, :], b[:, 1][None, :]

    # crossing parity of a ray towards +x
    straddle = (ay > py) != (by > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
    crossings = straddle & (px < x_cross)
    inside = (np.count_nonzero(crossings, axis=1) % 2) == 1

    # distance-to-segment for the boundary rule
    ex, ey = bx - ax, by - ay
    len2 = ex * ex + ey * ey
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(len2 > 0, ((px - ax) * ex + (py - ay) * ey) / len2, 0.0)
    u = np.clip(u, 0.0, 1.0)
    dx = px - (ax + u * ex)
    dy = py - (ay + u * ey)
    on_edge = np.any(dx * dx + dy * dy <= eps * eps, axis=1)
    return inside | on_edge


def point_in_polygon(point, polygon: np.ndarray) -> bool:
    return bool(points_in_polygon(np.asarray(point, dtype=float).reshape(1, 2), polygon)[0])


def _orient(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p, q, r) -> bool:
    return min(p[0], r[0]) <= q[0] <= max(p[0], r[0]) and min(p[1], r[1]) <= q[1] <= max(p[1], r[1])


def segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    if d1 == 0 and _on_segment(q1, p1, q2):
        return True
    if d2 == 0 and _on_segment(q1, p2, q2):
        return True
    if d3 == 0 and _on_segment(p1, q1, p2):
        return True
    if d4 == 0 and _on_segment(p1, q2, p2):
        return True
    return False


def polygon_is_simple(polygon: np.ndarray) -> bool:
    """O(n^2) check that no two non-adjacent edges touch and no edge is degenerate."""
    poly = [tuple(p) for p in np.asarray(polygon, dtype=float).reshape(-1, 2)]
    n = len(poly)
    if n < 3:
        return False
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    if any(a == b for a, b in edges):
        return False
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                # adjacent edges may only share their common vertex
                shared = poly[j] if j == i + 1 else poly[0]
                x = edges[i][0] if j == i + 1 else edges[i][1]
                y = edges[j][1] if j == i + 1 else edges[j][0]
                if _orient(shared, x, y) == 0 and (_on_segment(shared, y, x) or _on_segment(shared, x, y)):
                    return False
                continue
            if segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def polygon_area(polygon: np.ndarray) -> float:
    p = np.asarray(polygon, dtype=float).reshape(-1, 2)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def rect_corners(center, heading: float, length: float, width: float) -> np.ndarray:
    """Corners of an oriented rectangle, counter-clockwise."""
    c, s = np.cos(heading), np.sin(heading)
    fwd = np.array([c, s]) * (length / 2.0)
    left = np.array([-s, c]) * (width / 2.0)
    ctr = np.asarray(center, dtype=float)
    return np.array([ctr + fwd + left, ctr - fwd + left, ctr - fwd - left, ctr + fwd - left])
