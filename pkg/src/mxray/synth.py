"""Synthetic recordings with known 3D and per-view 2D ground truth.

Objects are axis-aligned boxes of constant density. Each view is rendered as
an additive line integral (density x chord length, no attenuation) along one
ray per pixel, from the source to the centre of the pixel on the detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from mxray.annotate3d import reproject_box3
from mxray.boxes import Box2, Box3
from mxray.errors import GenerationError
from mxray.geometry import ScannerGeometry, ViewGeometry, VoxelGrid


@dataclass(frozen=True)
class SceneSpec:
    n_objects: int = 1
    size_min: tuple[float, float, float] = (40.0, 40.0, 40.0)
    size_max: tuple[float, float, float] = (200.0, 200.0, 200.0)
    classes: tuple[str, ...] = ("weapon", "glassbottle")
    class_probs: Optional[tuple[float, ...]] = None
    density: tuple[float, float] = (0.5, 1.5)
    seed: int = 0
    image_height_px: Optional[int] = None
    max_retries: int = 1000


@dataclass(frozen=True)
class SceneObject:
    box: Box3
    class_label: str
    density: float


@dataclass
class Recording:
    recording_id: str
    geometry: ScannerGeometry
    images: list[np.ndarray]  # per view [1, H, W]
    objects: list[SceneObject]
    boxes2d: list[list[Box2]] = field(default_factory=list)  # [view][object]

    @property
    def boxes3d(self) -> list[Box3]:
        return [o.box for o in self.objects]


def pixel_rays(view: ViewGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Source and (W, 2) detector points through the pixel centres."""
    t = (np.arange(view.image_width_px) + 0.5) / view.image_width_px
    p0 = np.asarray(view.detector_p0)
    p1 = np.asarray(view.detector_p1)
    return np.asarray(view.source), p0 + t[:, None] * (p1 - p0)


def chord_lengths(src: np.ndarray, dst: np.ndarray, lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
    """Length of each segment src -> dst[i] inside the rectangle [lo, hi] (slab method)."""
    d = dst - src
    t0 = np.zeros(len(d))
    t1 = np.ones(len(d))
    for ax in range(2):
        da = d[:, ax]
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[ax] - src[ax]) / da
            tb = (hi[ax] - src[ax]) / da
        par = da == 0
        inside = (src[ax] >= lo[ax]) & (src[ax] <= hi[ax])
        # a ray parallel to the slab is either entirely inside it or misses it
        ta = np.where(par, np.where(inside, -np.inf, np.inf), ta)
        tb = np.where(par, np.inf, tb)
        t0 = np.maximum(t0, np.minimum(ta, tb))
        t1 = np.minimum(t1, np.maximum(ta, tb))
    return np.clip(t1 - t0, 0.0, None) * np.linalg.norm(d, axis=1)


def render_view(geom: ScannerGeometry, v: int, objects: Sequence[SceneObject], height_px: int) -> np.ndarray:
    view = geom.views[v]
    src, dst = pixel_rays(view)
    img = np.zeros((1, height_px, view.image_width_px))
    z_rows = (np.arange(height_px) + 0.5) * geom.belt_mm_per_px
    for obj in objects:
        lo, hi = obj.box.lo, obj.box.hi
        rows = (z_rows >= lo[2]) & (z_rows <= hi[2])
        if not rows.any():
            continue
        chord = chord_lengths(src, dst, lo[:2], hi[:2])
        img[0, rows, :] += obj.density * chord[None, :]
    return img


def _overlaps(a: Box3, b: Box3) -> bool:
    return all(a.lo[k] < b.hi[k] and b.lo[k] < a.hi[k] for k in range(3))


def default_image_height(geom: ScannerGeometry, grid: VoxelGrid) -> int:
    return max(1, math.ceil(grid.upper[2] / geom.belt_mm_per_px - 1e-9))


def gen_recording(
    geom: ScannerGeometry, grid: VoxelGrid, spec: SceneSpec, recording_id: str = "rec0000"
) -> Recording:
    """Sample non-overlapping objects inside the grid and render every view."""
    rng = np.random.default_rng(spec.seed)
    height = spec.image_height_px or default_image_height(geom, grid)
    lo = np.array(grid.origin)
    hi = np.array(grid.upper)
    lo[2] = max(lo[2], 0.0)
    hi[2] = min(hi[2], height * geom.belt_mm_per_px)
    smin = np.asarray(spec.size_min, dtype=float)
    smax = np.asarray(spec.size_max, dtype=float)
    if (smin <= 0).any() or (smax < smin).any():
        raise GenerationError("invalid size range")
    if (smax > hi - lo).any() and spec.n_objects > 0:
        raise GenerationError("objects of the maximal size do not fit in the grid window")
    probs = None
    if spec.class_probs is not None:
        probs = np.asarray(spec.class_probs, dtype=float)
        probs = probs / probs.sum()

    objects: list[SceneObject] = []
    for _ in range(spec.n_objects):
        for _attempt in range(spec.max_retries):
            size = rng.uniform(smin, smax)
            corner = rng.uniform(lo, hi - size)
            box = Box3.from_corners(corner, corner + size)
            if not any(_overlaps(box, o.box) for o in objects):
                break
        else:
            raise GenerationError(f"could not place object {len(objects)} after {spec.max_retries} tries")
        label = str(spec.classes[rng.choice(len(spec.classes), p=probs)])
        density = float(rng.uniform(*spec.density))
        objects.append(SceneObject(box, label, density))

    images = [render_view(geom, v, objects, height) for v in range(geom.n_views)]
    per_object = [reproject_box3(geom, o.box) for o in objects]
    boxes2d = [[boxes[v] for boxes in per_object] for v in range(geom.n_views)]
    return Recording(recording_id, geom, images, objects, boxes2d)


def bin_image(img: np.ndarray, bin_px: int) -> np.ndarray:
    """Block-average a [C, H, W] image into [C, ceil(H/b), ceil(W/b)] feature bins."""
    C, H, W = img.shape
    hb, wb = math.ceil(H / bin_px), math.ceil(W / bin_px)
    padded = np.zeros((C, hb * bin_px, wb * bin_px))
    padded[:, :H, :W] = img
    counts = np.zeros((hb * bin_px, wb * bin_px))
    counts[:H, :W] = 1.0
    sums = padded.reshape(C, hb, bin_px, wb, bin_px).sum(axis=(2, 4))
    n = counts.reshape(hb, bin_px, wb, bin_px).sum(axis=(1, 3))
    return sums / n
