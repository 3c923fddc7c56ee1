"""Axis-aligned 2D/3D boxes in centre-size form."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from mxray.errors import DomainError


@dataclass(frozen=True)
class Box2:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DomainError(f"box sizes must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "Box2":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    @property
    def size(self) -> tuple[float, float]:
        return (self.w, self.h)

    @property
    def lo(self) -> tuple[float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2)

    @property
    def hi(self) -> tuple[float, float]:
        return (self.cx + self.w / 2, self.cy + self.h / 2)

    def corners(self) -> tuple[float, float, float, float]:
        return (*self.lo, *self.hi)

    @property
    def volume(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Box3:
    x: float
    y: float
    z: float
    w: float
    h: float
    d: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0 and self.d > 0):
            raise DomainError(f"box sizes must be positive, got {(self.w, self.h, self.d)}")

    @classmethod
    def from_corners(cls, lo: Sequence[float], hi: Sequence[float]) -> "Box3":
        return cls(
            (lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2,
            hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2],
        )

    @property
    def center(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    @property
    def size(self) -> tuple[float, float, float]:
        return (self.w, self.h, self.d)

    @property
    def lo(self) -> tuple[float, float, float]:
        return (self.x - self.w / 2, self.y - self.h / 2, self.z - self.d / 2)

    @property
    def hi(self) -> tuple[float, float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2, self.z + self.d / 2)

    @property
    def volume(self) -> float:
        return self.w * self.h * self.d


AnyBox = Union[Box2, Box3]


def iou(a: AnyBox, b: AnyBox) -> float:
    """Intersection over union by per-axis interval overlap."""
    if type(a) is not type(b):
        raise TypeError("iou needs two boxes of the same dimensionality")
    inter = 1.0
    for c0, s0, c1, s1 in zip(a.center, a.size, b.center, b.size):
        overlap = min(c0 + s0 / 2, c1 + s1 / 2) - max(c0 - s0 / 2, c1 - s1 / 2)
        if overlap <= 0:
            return 0.0
        inter *= overlap
    if a == b:
        return 1.0
    return inter / (a.volume + b.volume - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of centre-size rows: a is (n, 2k), b is (m, 2k)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    k = a.shape[1] // 2
    alo, ahi = a[:, None, :k] - a[:, None, k:] / 2, a[:, None, :k] + a[:, None, k:] / 2
    blo, bhi = b[None, :, :k] - b[None, :, k:] / 2, b[None, :, :k] + b[None, :, k:] / 2
    overlap = np.clip(np.minimum(ahi, bhi) - np.maximum(alo, blo), 0.0, None)
    inter = overlap.prod(axis=2)
    union = a[:, None, k:].prod(axis=2) + b[None, :, k:].prod(axis=2) - inter
    return inter / union


@dataclass(frozen=True)
class Regression6:
    tx: float
    ty: float
    tz: float
    tw: float
    th: float
    td: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.tx, self.ty, self.tz, self.tw, self.th, self.td)


def encode_regression(box: Box3, anchor: Box3) -> Regression6:
    return Regression6(
        (box.x - anchor.x) / anchor.w,
        (box.y - anchor.y) / anchor.h,
        (box.z - anchor.z) / anchor.d,
        math.log(box.w / anchor.w),
        math.log(box.h / anchor.h),
        math.log(box.d / anchor.d),
    )


def decode_regression(t: Regression6, anchor: Box3) -> Box3:
    vals = t.as_tuple()
    if not all(math.isfinite(v) for v in vals):
        raise DomainError("regression parameters must be finite")
    return Box3(
        anchor.x + t.tx * anchor.w,
        anchor.y + t.ty * anchor.h,
        anchor.z + t.tz * anchor.d,
        anchor.w * math.exp(t.tw),
        anchor.h * math.exp(t.th),
        anchor.d * math.exp(t.td),
    )


def shift_for_threshold(t2: float) -> float:
    """Relative per-axis shift at which two equal 2D boxes reach IoU ``t2``."""
    if not 0.0 < t2 <= 1.0:
        raise DomainError(f"t2 must lie in (0, 1], got {t2}")
    return 1.0 - math.sqrt(2.0 * t2 / (t2 + 1.0))


def threshold_3d_from_shift(s: float) -> float:
    """3D IoU of two equal boxes shifted by relative ``s`` along every axis."""
    if not 0.0 <= s < 1.0:
        raise DomainError(f"s must lie in [0, 1), got {s}")
    r = (1.0 - s) ** 3
    return r / (2.0 - r)


def convert_threshold_2d_to_3d(t2: float) -> float:
    return threshold_3d_from_shift(shift_for_threshold(t2))


def nms_3d(boxes: Sequence[Box3], scores: Sequence[float], iou_thresh: float) -> list[int]:
    """Greedy NMS; returns kept input indices in descending-score order.

    Equal scores keep input order (stable sort).
    """
    scores = np.asarray(scores, dtype=float)
    if len(boxes) != len(scores):
        raise ValueError("boxes and scores differ in length")
    if not np.all(np.isfinite(scores)):
        raise DomainError("scores must be finite")
    if len(boxes) == 0:
        return []
    arr = np.array([[*b.center, *b.size] for b in boxes], dtype=float)
    order = np.argsort(-scores, kind="stable")
    ious = iou_matrix(arr, arr)
    suppressed = np.zeros(len(boxes), dtype=bool)
    keep: list[int] = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= ious[i] > iou_thresh
    return keep
