"""Lift per-view 2D boxes to one 3D box, and project 3D boxes back to the views.

Each 2D box constrains the object, in the cross-section, to the wedge between
the rays through its x-limits. Intersecting the wedges of all views and taking
the bounding rectangle gives the xy extent; the z extent is the mean of the
per-view y-limits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mxray.boxes import Box2, Box3
from mxray.errors import (
    DegenerateError,
    DomainError,
    InconsistentAnnotationError,
    InsufficientViewsError,
)
from mxray.geometry import ScannerGeometry, ViewGeometry, beam_triangle, project_points
from mxray.polygon import ConvexPolygon, clip_to_rect, intersect_convex


@dataclass(frozen=True)
class ViewAnnotation:
    view_index: int
    box2: Box2
    class_label: str


def wedge_polygon(view: ViewGeometry, tunnel: ConvexPolygon, box2: Box2) -> ConvexPolygon:
    x0, _, x1, _ = box2.corners()
    if not (0.0 <= x0 and x1 <= view.image_width_px):
        raise DomainError(f"box x-limits [{x0}, {x1}] outside [0, {view.image_width_px}]")
    if x1 <= x0:
        raise DegenerateError("zero-width box")
    tri = beam_triangle(view, x0, x1)
    xmin, ymin, xmax, ymax = tunnel.bounds()
    return ConvexPolygon.from_points(clip_to_rect(list(tri.vertices), xmin, ymin, xmax, ymax))


def gen_box3(geom: ScannerGeometry, anns: Sequence[ViewAnnotation]) -> Box3:
    if len({a.class_label for a in anns}) > 1:
        raise InconsistentAnnotationError("annotations of one object carry different classes")
    sources = {geom.views[a.view_index].source for a in anns}
    if len(anns) < 2 or len(sources) < 2:
        raise InsufficientViewsError("need annotations from at least 2 views with distinct sources")
    tunnel = geom.tunnel
    wedges = [wedge_polygon(geom.views[a.view_index], tunnel, a.box2) for a in anns]
    region = intersect_convex(wedges)
    if region.is_empty:
        raise InconsistentAnnotationError("wedges of the annotated views do not intersect")
    xmin, ymin, xmax, ymax = region.bounds()
    y_lo = float(np.mean([a.box2.lo[1] for a in anns]))
    y_hi = float(np.mean([a.box2.hi[1] for a in anns]))
    z_lo, z_hi = geom.px_to_mm(y_lo), geom.px_to_mm(y_hi)
    return Box3.from_corners((xmin, ymin, z_lo), (xmax, ymax, z_hi))


def reproject_box3(geom: ScannerGeometry, box: Box3) -> list[Box2]:
    """One image-space box per view; x from the four cross-section corners."""
    (x0, y0, z0), (x1, y1, z1) = box.lo, box.hi
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    py0, py1 = geom.mm_to_px(z0), geom.mm_to_px(z1)
    out = []
    for view in geom.views:
        px = project_points(view, corners)
        out.append(Box2.from_corners(float(px.min()), py0, float(px.max()), py1))
    return out
