"""Convex polygons in the scanner cross-section plane.

Everything here assumes convex input: Sutherland-Hodgman clipping is exact
for a convex clip region, and every region we clip against (beam triangles,
tunnel and cell rectangles, wedges) is convex.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Point = tuple[float, float]


def signed_area(verts: Sequence[Point]) -> float:
    """Shoelace area, positive for counter-clockwise order."""
    n = len(verts)
    if n < 3:
        return 0.0
    acc = 0.0
    x0, y0 = verts[-1]
    for x1, y1 in verts:
        acc += x0 * y1 - x1 * y0
        x0, y0 = x1, y1
    return 0.5 * acc


def _dedup(verts: list[Point], eps: float = 1e-12) -> list[Point]:
    out: list[Point] = []
    for p in verts:
        if not out or abs(p[0] - out[-1][0]) > eps or abs(p[1] - out[-1][1]) > eps:
            out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= eps and abs(out[0][1] - out[-1][1]) <= eps:
        out.pop()
    return out


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise convex polygon; fewer than 3 vertices means empty."""

    vertices: tuple[Point, ...]

    @classmethod
    def from_points(cls, pts: Iterable[Sequence[float]]) -> "ConvexPolygon":
        verts = _dedup([(float(p[0]), float(p[1])) for p in pts])
        if len(verts) < 3:
            return cls(())
        if signed_area(verts) < 0:
            verts.reverse()
        return cls(tuple(verts))

    @classmethod
    def rectangle(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "ConvexPolygon":
        return cls(((xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)))

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) < 3 or self.area <= 0.0

    @property
    def area(self) -> float:
        return abs(signed_area(self.vertices))

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax); raises on an empty polygon."""
        if not self.vertices:
            raise ValueError("empty polygon has no bounds")
        xs = [p[0] for p in self.vertices]
        ys = [p[1] for p in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def contains(self, p: Sequence[float], tol: float = 0.0) -> bool:
        if len(self.vertices) < 3:
            return False
        verts = self.vertices
        x0, y0 = verts[-1]
        for x1, y1 in verts:
            if (x1 - x0) * (p[1] - y0) - (y1 - y0) * (p[0] - x0) < -tol:
                return False
            x0, y0 = x1, y1
        return True

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float).reshape(-1, 2)


def clip_convex(subject: Sequence[Point], clip: Sequence[Point]) -> list[Point]:
    """Clip ``subject`` against the counter-clockwise convex polygon ``clip``."""
    out = list(subject)
    if len(clip) < 3:
        return []
    cx0, cy0 = clip[-1]
    for cx1, cy1 in clip:
        if len(out) < 3:
            return []
        ex, ey = cx1 - cx0, cy1 - cy0
        inp = out
        out = []
        sx, sy = inp[-1]
        ds = ex * (sy - cy0) - ey * (sx - cx0)
        for px, py in inp:
            dp = ex * (py - cy0) - ey * (px - cx0)
            if dp >= 0.0:
                if ds < 0.0:
                    t = ds / (ds - dp)
                    out.append((sx + t * (px - sx), sy + t * (py - sy)))
                out.append((px, py))
            elif ds >= 0.0:
                if ds > 0.0:
                    t = ds / (ds - dp)
                    out.append((sx + t * (px - sx), sy + t * (py - sy)))
            sx, sy, ds = px, py, dp
        cx0, cy0 = cx1, cy1
    out = _dedup(out)
    return out if len(out) >= 3 else []


def _clip_axis(verts: list[Point], axis: int, bound: float, keep_above: bool) -> list[Point]:
    if not verts:
        return verts
    out: list[Point] = []
    s = verts[-1]
    sv = (s[axis] - bound) if keep_above else (bound - s[axis])
    for p in verts:
        pv = (p[axis] - bound) if keep_above else (bound - p[axis])
        if pv >= 0.0:
            if sv < 0.0:
                t = sv / (sv - pv)
                q = (s[0] + t * (p[0] - s[0]), s[1] + t * (p[1] - s[1]))
                out.append(_snap(q, axis, bound))
            out.append(p)
        elif sv > 0.0:
            t = sv / (sv - pv)
            q = (s[0] + t * (p[0] - s[0]), s[1] + t * (p[1] - s[1]))
            out.append(_snap(q, axis, bound))
        s, sv = p, pv
    return out


def _snap(q: Point, axis: int, bound: float) -> Point:
    return (bound, q[1]) if axis == 0 else (q[0], bound)


def clip_to_rect(
    verts: Sequence[Point], xmin: float, ymin: float, xmax: float, ymax: float
) -> list[Point]:
    """Sutherland-Hodgman against an axis-aligned rectangle (four half-planes)."""
    out = list(verts)
    out = _clip_axis(out, 0, xmin, True)
    out = _clip_axis(out, 0, xmax, False)
    out = _clip_axis(out, 1, ymin, True)
    out = _clip_axis(out, 1, ymax, False)
    out = _dedup(out)
    return out if len(out) >= 3 else []


def intersect_convex(polys: Sequence[ConvexPolygon]) -> ConvexPolygon:
    """Sequential convex clipping; each polygon clips the running intersection."""
    if not polys:
        raise ValueError("need at least one polygon")
    acc = list(polys[0].vertices)
    for poly in polys[1:]:
        if len(acc) < 3:
            break
        acc = clip_convex(acc, poly.vertices)
    return ConvexPolygon.from_points(acc)
