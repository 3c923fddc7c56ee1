"""Fan-beam scanner geometry and projection primitives.

Coordinates: the tunnel cross-section is the (x, y) plane in mm, the belt
moves along z. Each view is a point source and a straight line detector in
the cross-section; detector pixels form the image x-axis and belt travel
forms the image y-axis (``z = y_px * belt_mm_per_px``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from mxray.errors import ConfigError, DegenerateError, DomainError, ProjectionError
from mxray.polygon import ConvexPolygon

Point2 = tuple[float, float]

# relative slack when deciding whether a ray hits the segment end points
_SEG_TOL = 1e-12


def _cross(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


@dataclass(frozen=True)
class ViewGeometry:
    name: str
    source: Point2
    detector_p0: Point2
    detector_p1: Point2
    image_width_px: int

    def __post_init__(self):
        object.__setattr__(self, "source", (float(self.source[0]), float(self.source[1])))
        object.__setattr__(self, "detector_p0", (float(self.detector_p0[0]), float(self.detector_p0[1])))
        object.__setattr__(self, "detector_p1", (float(self.detector_p1[0]), float(self.detector_p1[1])))
        if int(self.image_width_px) != self.image_width_px or self.image_width_px < 1:
            raise ConfigError(f"view {self.name!r}: image_width_px must be a positive integer")
        object.__setattr__(self, "image_width_px", int(self.image_width_px))
        (x0, y0), (x1, y1) = self.detector_p0, self.detector_p1
        if x0 == x1 and y0 == y1:
            raise ConfigError(f"view {self.name!r}: detector end points coincide")
        sx, sy = self.source
        if _cross(x1 - x0, y1 - y0, sx - x0, sy - y0) == 0.0:
            # collinear: only an error if the source sits on the segment itself
            # (or the fan degenerates, which is the same thing for a line)
            raise ConfigError(f"view {self.name!r}: source is collinear with the detector")

    @property
    def fan(self) -> ConvexPolygon:
        return ConvexPolygon.from_points([self.source, self.detector_p0, self.detector_p1])


@dataclass(frozen=True)
class ScannerGeometry:
    views: tuple[ViewGeometry, ...]
    tunnel_min: Point2
    tunnel_max: Point2
    belt_mm_per_px: float

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        if not self.views:
            raise ConfigError("scanner geometry needs at least one view")
        if not (self.tunnel_max[0] > self.tunnel_min[0] and self.tunnel_max[1] > self.tunnel_min[1]):
            raise ConfigError("tunnel rectangle must have positive area")
        if not self.belt_mm_per_px > 0:
            raise ConfigError("belt_mm_per_px must be positive")
        for v in self.views:
            if _inside_open_rect(v.source, self.tunnel_min, self.tunnel_max):
                raise ConfigError(f"view {v.name!r}: source lies inside the tunnel")
            if _segment_enters_rect(v.detector_p0, v.detector_p1, self.tunnel_min, self.tunnel_max):
                raise ConfigError(f"view {v.name!r}: detector passes through the tunnel")

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def tunnel(self) -> ConvexPolygon:
        return ConvexPolygon.rectangle(*self.tunnel_min, *self.tunnel_max)

    def px_to_mm(self, y_px: float) -> float:
        return y_px * self.belt_mm_per_px

    def mm_to_px(self, z_mm: float) -> float:
        return z_mm / self.belt_mm_per_px

    def to_dict(self) -> dict[str, Any]:
        return {
            "belt_mm_per_px": self.belt_mm_per_px,
            "tunnel": {"min": list(self.tunnel_min), "max": list(self.tunnel_max)},
            "views": [
                {
                    "name": v.name,
                    "source": list(v.source),
                    "detector": [list(v.detector_p0), list(v.detector_p1)],
                    "image_width_px": v.image_width_px,
                }
                for v in self.views
            ],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScannerGeometry":
        try:
            views = tuple(
                ViewGeometry(
                    name=str(v.get("name", f"view{i}")),
                    source=tuple(v["source"]),
                    detector_p0=tuple(v["detector"][0]),
                    detector_p1=tuple(v["detector"][1]),
                    image_width_px=v["image_width_px"],
                )
                for i, v in enumerate(d["views"])
            )
            return cls(
                views=views,
                tunnel_min=(float(d["tunnel"]["min"][0]), float(d["tunnel"]["min"][1])),
                tunnel_max=(float(d["tunnel"]["max"][0]), float(d["tunnel"]["max"][1])),
                belt_mm_per_px=float(d["belt_mm_per_px"]),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise ConfigError(f"malformed geometry: {exc!r}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ScannerGeometry":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _inside_open_rect(p: Point2, lo: Point2, hi: Point2) -> bool:
    return lo[0] < p[0] < hi[0] and lo[1] < p[1] < hi[1]


def _segment_enters_rect(a: Point2, b: Point2, lo: Point2, hi: Point2) -> bool:
    # Liang-Barsky against the open rectangle
    t0, t1 = 0.0, 1.0
    dx, dy = b[0] - a[0], b[1] - a[1]
    for p, q in ((-dx, a[0] - lo[0]), (dx, hi[0] - a[0]), (-dy, a[1] - lo[1]), (dy, hi[1] - a[1])):
        if p == 0.0:
            if q <= 0.0:
                return False
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 >= t1:
            return False
    return t1 - t0 > 1e-12


@dataclass(frozen=True)
class VoxelGrid:
    """Regular cell lattice; x, y span the cross-section and z is the belt axis."""

    origin: tuple[float, float, float]
    cell_size: tuple[float, float, float]
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "cell_size", tuple(float(v) for v in self.cell_size))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if len(self.origin) != 3 or len(self.cell_size) != 3 or len(self.dims) != 3:
            raise ConfigError("voxel grid needs 3 components per field")
        if min(self.cell_size) <= 0 or min(self.dims) < 1:
            raise ConfigError("voxel grid cell sizes and dims must be positive")

    @property
    def upper(self) -> tuple[float, float, float]:
        return tuple(o + c * n for o, c, n in zip(self.origin, self.cell_size, self.dims))

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def axis_edges(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.cell_size[axis] * np.arange(self.dims[axis] + 1)

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.cell_size[axis] * (np.arange(self.dims[axis]) + 0.5)

    def cell_center(self, ix: int, iy: int, iz: int) -> tuple[float, float, float]:
        return tuple(o + c * (i + 0.5) for o, c, i in zip(self.origin, self.cell_size, (ix, iy, iz)))

    def inside_tunnel(self, geom: ScannerGeometry, tol: float = 1e-9) -> bool:
        (x0, y0, _), (x1, y1, _) = self.origin, self.upper
        return (
            x0 >= geom.tunnel_min[0] - tol
            and y0 >= geom.tunnel_min[1] - tol
            and x1 <= geom.tunnel_max[0] + tol
            and y1 <= geom.tunnel_max[1] + tol
        )

    def to_dict(self) -> dict[str, Any]:
        return {"origin": list(self.origin), "cell_size": list(self.cell_size), "dims": list(self.dims)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "VoxelGrid":
        try:
            return cls(tuple(d["origin"]), tuple(d["cell_size"]), tuple(d["dims"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed grid: {exc!r}") from exc

    @classmethod
    def spanning(cls, lo: Sequence[float], hi: Sequence[float], dims: Sequence[int]) -> "VoxelGrid":
        """Grid with ``dims`` cells covering the box [lo, hi]."""
        size = tuple((h - l) / n for l, h, n in zip(lo, hi, dims))
        return cls(tuple(lo), size, tuple(dims))


def detector_point(view: ViewGeometry, x_px: float) -> Point2:
    if not 0.0 <= x_px <= view.image_width_px:
        raise DomainError(f"x_px={x_px} outside [0, {view.image_width_px}]")
    t = x_px / view.image_width_px
    (x0, y0), (x1, y1) = view.detector_p0, view.detector_p1
    return (x0 + t * (x1 - x0), y0 + t * (y1 - y0))


def beam_triangle(view: ViewGeometry, x_lo_px: float, x_hi_px: float) -> ConvexPolygon:
    """Triangle between the source and the detector span [x_lo_px, x_hi_px]."""
    if not (0.0 <= x_lo_px < x_hi_px <= view.image_width_px):
        raise DomainError(f"invalid pixel bin [{x_lo_px}, {x_hi_px}]")
    s = view.source
    a = detector_point(view, x_lo_px)
    b = detector_point(view, x_hi_px)
    area2 = _cross(a[0] - s[0], a[1] - s[1], b[0] - s[0], b[1] - s[1])
    if area2 == 0.0:
        raise DegenerateError("beam triangle has zero area")
    if area2 > 0:
        return ConvexPolygon((s, a, b))
    return ConvexPolygon((s, b, a))


def project_point(view: ViewGeometry, p: Sequence[float]) -> float:
    """Detector pixel coordinate hit by the ray from the source through ``p``."""
    sx, sy = view.source
    dx, dy = p[0] - sx, p[1] - sy
    if dx == 0.0 and dy == 0.0:
        raise DegenerateError("point coincides with the source")
    (x0, y0), (x1, y1) = view.detector_p0, view.detector_p1
    ex, ey = x1 - x0, y1 - y0
    denom = _cross(dx, dy, ex, ey)
    if denom == 0.0:
        raise ProjectionError("ray is parallel to the detector")
    # source + t*d = p0 + u*e
    wx, wy = x0 - sx, y0 - sy
    t = _cross(wx, wy, ex, ey) / denom
    u = _cross(wx, wy, dx, dy) / denom
    if t <= 0.0 or u < -_SEG_TOL or u > 1.0 + _SEG_TOL:
        raise ProjectionError(f"ray through {tuple(p)} misses the detector of view {view.name!r}")
    u = min(max(u, 0.0), 1.0)
    return u * view.image_width_px


def project_points(view: ViewGeometry, pts: np.ndarray) -> np.ndarray:
    """Vectorised :func:`project_point` for an (n, 2) array."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    sx, sy = view.source
    dx, dy = pts[:, 0] - sx, pts[:, 1] - sy
    (x0, y0), (x1, y1) = view.detector_p0, view.detector_p1
    ex, ey = x1 - x0, y1 - y0
    denom = dx * ey - dy * ex
    wx, wy = x0 - sx, y0 - sy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wx * ey - wy * ex) / denom
        u = (wx * dy - wy * dx) / denom
    bad = ~np.isfinite(u) | (t <= 0) | (u < -_SEG_TOL) | (u > 1 + _SEG_TOL)
    if bad.any():
        raise ProjectionError(f"{int(bad.sum())} ray(s) miss the detector of view {view.name!r}")
    return np.clip(u, 0.0, 1.0) * view.image_width_px


def n_feature_bins(view: ViewGeometry, bin_px: int) -> int:
    return math.ceil(view.image_width_px / bin_px)


def default_geometry() -> ScannerGeometry:
    """Illustrative 4-view layout: bottom-left, bottom-right, right side, bottom-centre.

    Not a real machine. Image widths follow the half-resolution widths of a
    commercial 4-view scanner; detector segments are sized so every fan
    covers the whole 600 x 400 mm tunnel.
    """
    return ScannerGeometry(
        views=(
            ViewGeometry("bottom_left", (-250.0, -450.0), (-380.0, 500.0), (940.0, 500.0), 384),
            ViewGeometry("bottom_right", (250.0, -450.0), (-940.0, 500.0), (380.0, 500.0), 384),
            ViewGeometry("right_side", (850.0, 200.0), (-450.0, -300.0), (-450.0, 700.0), 352),
            ViewGeometry("bottom_center", (0.0, -500.0), (-630.0, 500.0), (630.0, 500.0), 416),
        ),
        tunnel_min=(-300.0, 0.0),
        tunnel_max=(300.0, 400.0),
        belt_mm_per_px=2.0,
    )
