"""Small planar-geometry helpers shared by repair and tessellation."""

from __future__ import annotations

import numpy as np


def plane_basis(normal: np.ndarray):
    """Right-handed in-plane basis (e1, e2) with e1 x e2 = normal."""
    a = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) <= 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(normal, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2


def project_to_plane(pts: np.ndarray, origin: np.ndarray, normal: np.ndarray) -> np.ndarray:
    e1, e2 = plane_basis(normal)
    rel = np.atleast_2d(pts) - origin
    return np.column_stack([rel @ e1, rel @ e2])


def lift_from_plane(uv: np.ndarray, origin: np.ndarray, normal: np.ndarray) -> np.ndarray:
    e1, e2 = plane_basis(normal)
    uv = np.atleast_2d(uv)
    return origin + uv[:, :1] * e1 + uv[:, 1:2] * e2


def polygon_area(uv: np.ndarray) -> float:
    """Signed area of a 2D polygon (positive for CCW)."""
    x = uv[:, 0]
    y = uv[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def segments_intersect(p, q, r, s) -> bool:
    """Proper intersection of open segments pq and rs."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p, q, r)
    d2 = orient(p, q, s)
    d3 = orient(r, s, p)
    d4 = orient(r, s, q)
    return d1 * d2 < 0 and d3 * d4 < 0


def loop_is_simple(uv: np.ndarray) -> bool:
    """True if no two non-adjacent polygon edges cross."""
    m = len(uv)
    for i in range(m):
        a, b = uv[i], uv[(i + 1) % m]
        for j in range(i + 1, m):
            if j == i or (j + 1) % m == i or (i + 1) % m == j:
                continue
            if segments_intersect(a, b, uv[j], uv[(j + 1) % m]):
                return False
    return True


def interior_angles(uv: np.ndarray) -> np.ndarray:
    """Interior angle (radians) at each vertex of a CCW polygon."""
    prev = np.roll(uv, 1, axis=0)
    nxt = np.roll(uv, -1, axis=0)
    v1 = prev - uv
    v2 = nxt - uv
    ang = np.arctan2(
        v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0],
        (v1 * v2).sum(axis=1),
    )
    # interior angle = CCW sweep from the outgoing to the incoming edge
    return np.mod(-ang, 2.0 * np.pi)


def point_in_polygon(pt, uv: np.ndarray) -> bool:
    """Winding-free even-odd test; boundary points are unspecified."""
    x, y = pt
    inside = False
    m = len(uv)
    for i in range(m):
        x1, y1 = uv[i]
        x2, y2 = uv[(i + 1) % m]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                inside = not inside
    return inside
