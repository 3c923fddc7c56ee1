"""Anchor shapes from k-means on box dimensions under the Jaccard distance."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from mxray.boxes import Box3
from mxray.errors import DomainError
from mxray.geometry import VoxelGrid


@dataclass(frozen=True)
class AnchorSet:
    sizes: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        sizes = tuple(tuple(float(v) for v in s) for s in self.sizes)
        if not sizes:
            raise DomainError("anchor set is empty")
        if any(len(s) != 3 or min(s) <= 0 for s in sizes):
            raise DomainError("anchor sizes must be positive 3-vectors")
        object.__setattr__(self, "sizes", sizes)

    def __len__(self) -> int:
        return len(self.sizes)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.sizes, dtype=float)


@dataclass(frozen=True)
class ClusterConfig:
    k: int
    seed: int = 0
    restarts: int = 10
    max_iters: int = 300
    tol: float = 0.0


@dataclass
class KMeansResult:
    anchors: AnchorSet
    assignment: np.ndarray
    total_distance: float
    history: list[float] = field(default_factory=list)


def centered_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU of co-centred boxes; a is (n, 3), b is (m, 3) -> (n, m)."""
    a = np.asarray(a, dtype=float)[:, None, :]
    b = np.asarray(b, dtype=float)[None, :, :]
    inter = np.minimum(a, b).prod(axis=2)
    return inter / (a.prod(axis=2) + b.prod(axis=2) - inter)


def jaccard_distance(a: Sequence[float], b: Sequence[float]) -> float:
    if min(a) <= 0 or min(b) <= 0:
        raise DomainError("sizes must be positive")
    if tuple(a) == tuple(b):
        return 0.0
    inter = math.prod(min(x, y) for x, y in zip(a, b))
    return 1.0 - inter / (math.prod(a) + math.prod(b) - inter)


def _distances(dims: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return 1.0 - centered_iou(dims, centroids)


def _seed_centroids(dims: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style seeding with the Jaccard distance."""
    n = len(dims)
    chosen = [int(rng.integers(n))]
    closest = _distances(dims, dims[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with a centroid; take unused ones in order
            unused = [i for i in range(n) if i not in chosen]
            chosen.append(unused[0])
        else:
            chosen.append(int(rng.choice(n, p=closest / total)))
        closest = np.minimum(closest, _distances(dims, dims[chosen[-1:]])[:, 0])
    return dims[chosen].copy()


def _means(dims: np.ndarray, assign: np.ndarray, d: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Centroids as member means; an empty cluster takes over the point farthest from its centroid."""
    assign = assign.copy()
    rows = np.arange(len(dims))
    own = d[rows, assign].copy()
    for c in range(k):
        if not (assign == c).any():
            # never strip the last member of another cluster
            counts = np.bincount(assign, minlength=k)
            own_masked = np.where(counts[assign] > 1, own, -1.0)
            far = int(np.argmax(own_masked))
            assign[far] = c
            own[far] = -1.0
    cents = np.stack([dims[assign == c].mean(axis=0) for c in range(k)])
    return cents, assign


def _lloyd(dims: np.ndarray, seeds: np.ndarray, max_iters: int, tol: float):
    """Alternate assignment and mean update; centroids always equal the means of their members.

    The mean does not minimise the Jaccard distance, so an update can raise the
    total. Iteration stops before such a step and keeps the previous state,
    which makes the recorded totals non-increasing.
    """
    k = len(seeds)
    rows = np.arange(len(dims))
    d = _distances(dims, seeds)
    centroids, assign = _means(dims, d.argmin(axis=1), d, k)
    total = float(_distances(dims, centroids)[rows, assign].sum())
    history = [total]
    for _ in range(max_iters):
        d = _distances(dims, centroids)
        new_assign = d.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        new_cents, new_assign = _means(dims, new_assign, d, k)
        new_total = float(_distances(dims, new_cents)[rows, new_assign].sum())
        if new_total > total:
            break
        converged = total - new_total <= tol
        centroids, assign, total = new_cents, new_assign, new_total
        history.append(total)
        if converged:
            break
    return centroids, assign, total, history


def run_kmeans(dims: Sequence[Sequence[float]], cfg: ClusterConfig) -> KMeansResult:
    dims = np.asarray(dims, dtype=float).reshape(-1, 3)
    if cfg.k < 1:
        raise DomainError("k must be positive")
    if len(dims) < cfg.k:
        raise DomainError(f"need at least k={cfg.k} boxes, got {len(dims)}")
    if (dims <= 0).any():
        raise DomainError("box dimensions must be positive")
    best: Optional[tuple] = None
    streams = np.random.SeedSequence(cfg.seed).spawn(max(1, cfg.restarts))
    for r, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        cents, assign, total, hist = _lloyd(dims, _seed_centroids(dims, cfg.k, rng), cfg.max_iters, cfg.tol)
        # ties resolved by restart index: strict improvement only
        if best is None or total < best[2]:
            best = (cents, assign, total, hist)
    cents, assign, total, hist = best
    return KMeansResult(AnchorSet(tuple(map(tuple, cents))), assign, total, hist)


def kmeans_anchors(dims: Sequence[Sequence[float]], cfg: ClusterConfig) -> AnchorSet:
    return run_kmeans(dims, cfg).anchors


def _gt_arrays(gts: Sequence[Box3]) -> tuple[np.ndarray, np.ndarray]:
    if not gts:
        raise DomainError("no ground-truth boxes")
    centers = np.array([g.center for g in gts], dtype=float)
    sizes = np.array([g.size for g in gts], dtype=float)
    return centers, sizes


def avg_best_iou_centered(anchors: AnchorSet, gts: Sequence[Box3]) -> float:
    """Mean over ground truth of the best IoU with an anchor centred on it."""
    _, sizes = _gt_arrays(gts)
    ious = centered_iou(sizes, anchors.as_array())
    return float(ious.max(axis=1).mean())


def snap_to_grid(points: np.ndarray, grid: VoxelGrid, stride: Sequence[float]) -> np.ndarray:
    """Nearest lattice position ``origin + (k + 1/2) * stride`` per dimension."""
    origin = np.asarray(grid.origin)
    stride = np.asarray(stride, dtype=float)
    k = np.floor((np.asarray(points, dtype=float) - origin) / stride)
    return origin + (k + 0.5) * stride


def avg_best_iou_grid(
    anchors: AnchorSet, gts: Sequence[Box3], grid: VoxelGrid, stride: Optional[Sequence[float]] = None
) -> float:
    """As :func:`avg_best_iou_centered`, with anchors at the grid position nearest each gt centre."""
    stride = grid.cell_size if stride is None else tuple(stride)
    if min(stride) <= 0:
        raise DomainError("stride must be positive")
    centers, sizes = _gt_arrays(gts)
    snapped = snap_to_grid(centers, grid, stride)
    a = anchors.as_array()
    g_lo, g_hi = (centers - sizes / 2)[:, None, :], (centers + sizes / 2)[:, None, :]
    a_lo, a_hi = snapped[:, None, :] - a[None, :, :] / 2, snapped[:, None, :] + a[None, :, :] / 2
    inter = np.clip(np.minimum(g_hi, a_hi) - np.maximum(g_lo, a_lo), 0.0, None).prod(axis=2)
    union = sizes.prod(axis=1)[:, None] + a.prod(axis=1)[None, :] - inter
    return float((inter / union).max(axis=1).mean())


def gen_anchor_grid(anchors: AnchorSet, grid: VoxelGrid) -> list[Box3]:
    """One box per (cell, anchor), centred on the cell; cell-major order."""
    cx, cy, cz = (grid.axis_centers(a) for a in range(3))
    out = []
    for x in cx:
        for y in cy:
            for z in cz:
                for w, h, d in anchors.sizes:
                    out.append(Box3(float(x), float(y), float(z), w, h, d))
    return out


def standard_anchors_3d(scales: Sequence[float] = (64.0, 128.0, 256.0)) -> AnchorSet:
    """Hand-picked 2D priors (ratios 1:1, 1:2, 2:1 at 3 scales) expanded to 3D.

    Every pairwise axis ratio is drawn from {1/2, 1, 2}, which gives 7 distinct
    shapes per scale (21 anchors for 3 scales); each shape has volume scale**3.
    """
    shapes = set()
    for sh in itertools.product((1.0, 2.0), repeat=3):
        m = min(sh)
        shapes.add(tuple(v / m for v in sh))
    out = []
    for s in scales:
        for sh in sorted(shapes):
            norm = math.prod(sh) ** (1 / 3)
            out.append(tuple(s * v / norm for v in sh))
    return AnchorSet(tuple(out))
