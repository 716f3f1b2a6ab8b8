"""Planar geometry kernels underlying blockage verification.

Coordinates are meters in a flat Cartesian frame. A ring is a closed polygon
(first vertex repeated at the end), stored with vertices in clockwise order.
All tolerances are absolute meters unless noted.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .errors import EmptyRing, MalformedRing

Point2 = tuple[float, float]


@dataclass(frozen=True)
class Circle:
    center: Point2
    radius: float


@dataclass(frozen=True)
class Segment3D:
    """Link from a ground point p (z=0) to an elevated point q (z>0)."""

    p: tuple[float, float, float]
    q: tuple[float, float, float]

    def __post_init__(self):
        if self.p[2] != 0.0:
            raise ValueError("segment must start at ground level (z=0)")
        if self.q[2] <= 0.0:
            raise ValueError("segment must end above ground (z>0)")


def _edges(ring):
    return zip(ring[:-1], ring[1:])


def check_closed_ring(ring) -> None:
    if len(ring) < 4:
        raise MalformedRing("ring needs at least 3 distinct vertices plus closure")
    if tuple(ring[0]) != tuple(ring[-1]):
        raise MalformedRing("ring is not closed (first vertex != last)")


def polygon_area(ring) -> float:
    """Shoelace area of a closed ring, independent of orientation."""
    check_closed_ring(ring)
    s = 0.0
    for (x1, y1), (x2, y2) in _edges(ring):
        s += x1 * y2 - x2 * y1
    return abs(s) / 2.0


def signed_ring_area(ring) -> float:
    """Shoelace area with sign: positive for counterclockwise vertex order."""
    check_closed_ring(ring)
    s = 0.0
    for (x1, y1), (x2, y2) in _edges(ring):
        s += x1 * y2 - x2 * y1
    return s / 2.0


def point_in_polygon(point: Point2, ring) -> bool:
    """Rightward ray-casting parity test.

    An edge counts as crossed iff one endpoint is strictly above the
    horizontal ray through `point` and the other is at or below it, and the
    intersection lies strictly to the right of the point. The half-open rule
    makes vertices and horizontal edges unambiguous without perturbation.
    """
    px, py = point
    inside = False
    for (x1, y1), (x2, y2) in _edges(ring):
        if (y1 > py) != (y2 > py):
            xc = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if xc > px:
                inside = not inside
    return inside


# --- smallest enclosing circle (randomized incremental, expected O(n)) ---

_MULT_EPS = 1.0 + 1e-12


def _in_circle(c, p) -> bool:
    return (
        c is not None
        and math.hypot(p[0] - c[0], p[1] - c[1]) <= c[2] * _MULT_EPS + 1e-300
    )


def _circle_diameter(p0, p1):
    cx = (p0[0] + p1[0]) / 2.0
    cy = (p0[1] + p1[1]) / 2.0
    r = max(math.hypot(cx - p0[0], cy - p0[1]), math.hypot(cx - p1[0], cy - p1[1]))
    return (cx, cy, r)


def _circumcircle(p0, p1, p2):
    # translate towards the origin first to limit cancellation
    ox = (min(p0[0], p1[0], p2[0]) + max(p0[0], p1[0], p2[0])) / 2.0
    oy = (min(p0[1], p1[1], p2[1]) + max(p0[1], p1[1], p2[1])) / 2.0
    ax, ay = p0[0] - ox, p0[1] - oy
    bx, by = p1[0] - ox, p1[1] - oy
    cx, cy = p2[0] - ox, p2[1] - oy
    d = (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by)) * 2.0
    if d == 0.0:
        return None
    x = ox + (
        (ax * ax + ay * ay) * (by - cy)
        + (bx * bx + by * by) * (cy - ay)
        + (cx * cx + cy * cy) * (ay - by)
    ) / d
    y = oy + (
        (ax * ax + ay * ay) * (cx - bx)
        + (bx * bx + by * by) * (ax - cx)
        + (cx * cx + cy * cy) * (bx - ax)
    ) / d
    r = max(
        math.hypot(x - p0[0], y - p0[1]),
        math.hypot(x - p1[0], y - p1[1]),
        math.hypot(x - p2[0], y - p2[1]),
    )
    return (x, y, r)


def _cross(x0, y0, x1, y1, x2, y2):
    return (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)


def _circle_two_points(points, p, q):
    circ = _circle_diameter(p, q)
    left = None
    right = None
    px, py = p
    qx, qy = q
    for r in points:
        if _in_circle(circ, r):
            continue
        cross = _cross(px, py, qx, qy, r[0], r[1])
        c = _circumcircle(p, q, r)
        if c is None:
            continue
        if cross > 0.0 and (
            left is None
            or _cross(px, py, qx, qy, c[0], c[1]) > _cross(px, py, qx, qy, left[0], left[1])
        ):
            left = c
        elif cross < 0.0 and (
            right is None
            or _cross(px, py, qx, qy, c[0], c[1]) < _cross(px, py, qx, qy, right[0], right[1])
        ):
            right = c
    if left is None and right is None:
        return circ
    if left is None:
        return right
    if right is None:
        return left
    return left if left[2] <= right[2] else right


def _circle_one_point(points, p):
    c = (p[0], p[1], 0.0)
    for i, q in enumerate(points):
        if not _in_circle(c, q):
            if c[2] == 0.0:
                c = _circle_diameter(p, q)
            else:
                c = _circle_two_points(points[: i + 1], p, q)
    return c


def min_enclosing_circle(points) -> Circle:
    """Smallest circle containing every point.

    Randomized incremental construction; the shuffle is seeded so identical
    inputs always yield the identical circle.
    """
    pts = [(float(x), float(y)) for x, y in points]
    uniq = list(dict.fromkeys(pts))
    if not uniq:
        raise EmptyRing("no vertices")
    rnd = random.Random(0x5EC)
    rnd.shuffle(uniq)
    c = None
    for i, p in enumerate(uniq):
        if c is None or not _in_circle(c, p):
            c = _circle_one_point(uniq[: i + 1], p)
    return Circle((c[0], c[1]), c[2])


# --- 3D link vs building ---


def point_segment_distance(point: Point2, a: Point2, b: Point2) -> float:
    """Distance from a point to the 2D segment a-b."""
    px, py = point
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    if denom == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / denom
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _crossing_parameter(p: Point2, d: Point2, e1: Point2, e2: Point2):
    """Fraction along the ray p + t*d at which it crosses edge e1-e2.

    Uses the same half-open rule as point_in_polygon: the edge counts iff one
    endpoint is strictly left of the ray line and the other is at-or-right.
    Returns None when there is no crossing.
    """
    s1 = d[0] * (e1[1] - p[1]) - d[1] * (e1[0] - p[0])
    s2 = d[0] * (e2[1] - p[1]) - d[1] * (e2[0] - p[0])
    if (s1 > 0.0) == (s2 > 0.0):
        return None
    u = s1 / (s1 - s2)
    xx = e1[0] + u * (e2[0] - e1[0])
    xy = e1[1] + u * (e2[1] - e1[1])
    return ((xx - p[0]) * d[0] + (xy - p[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1])


def segment_blocks_3d(seg: Segment3D, building, counters=None) -> bool:
    """True iff the building occludes the 3D link.

    The horizontal projection of the link must cross a ring edge at a
    parameter t in (0,1) measured from the ground end, with the link height
    q.z * t strictly below the roof. Candidate buildings are prefiltered by
    the distance from the 2D segment to the enclosing circle's center, which
    never rejects a true crossing.

    `building` needs ring, height_m, center_m and radius_m attributes.
    `counters`, when given, accumulates prefilter and edge-test tallies.
    """
    px, py, _ = seg.p
    qx, qy, qz = seg.q
    dx, dy = qx - px, qy - py
    if counters is not None:
        counters.type2_building_prefilters += 1
    if dx == 0.0 and dy == 0.0:
        # vertical link: no horizontal run, cannot cross a wall
        return False
    if point_segment_distance(building.center_m, (px, py), (qx, qy)) > building.radius_m:
        return False
    h = building.height_m
    d = (dx, dy)
    for e1, e2 in _edges(building.ring):
        if counters is not None:
            counters.type2_edge_tests += 1
        t = _crossing_parameter((px, py), d, e1, e2)
        if t is not None and 0.0 < t < 1.0 and qz * t < h:
            return True
    return False


def segments_properly_intersect(a1, a2, b1, b2) -> bool:
    """True iff open segments a1-a2 and b1-b2 cross at a single interior point."""
    d1 = _cross(b1[0], b1[1], b2[0], b2[1], a1[0], a1[1])
    d2 = _cross(b1[0], b1[1], b2[0], b2[1], a2[0], a2[1])
    d3 = _cross(a1[0], a1[1], a2[0], a2[1], b1[0], b1[1])
    d4 = _cross(a1[0], a1[1], a2[0], a2[1], b2[0], b2[1])
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != d2 and d3 != d4


def ring_is_simple(ring) -> bool:
    """Check that no two non-adjacent edges properly cross."""
    edges = list(_edges(ring))
    n = len(edges)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue  # adjacent edges share a vertex
            a1, a2 = edges[i]
            b1, b2 = edges[j]
            if segments_properly_intersect(a1, a2, b1, b2):
                return False
    return True
