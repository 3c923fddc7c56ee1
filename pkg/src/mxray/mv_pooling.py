"""Multi-view pooling: per-view 2D feature maps into one 3D feature volume.

A beam is the prism swept by one feature-map pixel: its cross-section is the
triangle between the source and the detector span of the feature x-bin, and
its belt-axis extent is the z-interval of the feature y-bin. The weight of a
beam on a cell is the intersection volume normalised by the cell volume.
Because beams are extrusions along z, that weight factorises as

    w = w_xy(x-bin, cell_xy) * w_z(y-bin, cell_z)

and both factors are stored separately. Beams are indexed row-major over the
feature map, ``beam = y_bin * n_xbins + x_bin``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numba
import numpy as np
import scipy.sparse as sp

from mxray.boxes import Box3
from mxray.defaults import EPSILON_W
from mxray.errors import ConfigError, DomainError, ShapeError
from mxray.geometry import ScannerGeometry, VoxelGrid, beam_triangle, n_feature_bins
from mxray.polygon import clip_to_rect, signed_area


@dataclass
class FeatureMap:
    view_index: int
    data: np.ndarray  # [C, H, W]
    bin_px: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ShapeError(f"feature map must be [C, H, W] with positive dims, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DomainError("feature map contains non-finite values")


@dataclass
class FeatureVolume:
    data: np.ndarray  # [C, nx, ny, nz]
    grid: VoxelGrid

    def __post_init__(self):
        if self.data.ndim != 4 or tuple(self.data.shape[1:]) != self.grid.dims:
            raise ShapeError(f"volume shape {self.data.shape} does not match grid {self.grid.dims}")


@dataclass(frozen=True)
class ViewMask:
    active: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "active", tuple(bool(a) for a in self.active))
        if not any(self.active):
            raise DomainError("view mask disables every view")

    @classmethod
    def all(cls, n_views: int) -> "ViewMask":
        return cls((True,) * n_views)

    @classmethod
    def disabling(cls, n_views: int, disabled: Sequence[int] = ()) -> "ViewMask":
        for v in disabled:
            if not 0 <= v < n_views:
                raise DomainError(f"cannot disable view {v}: only {n_views} views")
        return cls(tuple(i not in set(disabled) for i in range(n_views)))

    @property
    def indices(self) -> list[int]:
        return [i for i, a in enumerate(self.active) if a]

    @property
    def n_active(self) -> int:
        return sum(self.active)


@dataclass
class ViewWeights:
    n_xbins: int
    n_ybins: int
    # cross-section factor, sorted by (cell_xy, x_bin)
    xsec_xbin: np.ndarray
    xsec_ix: np.ndarray
    xsec_iy: np.ndarray
    xsec_w: np.ndarray
    # belt-axis factor, sorted by (iz, y_bin)
    z_ybin: np.ndarray
    z_iz: np.ndarray
    z_w: np.ndarray

    @property
    def feature_shape(self) -> tuple[int, int]:
        return (self.n_ybins, self.n_xbins)


@dataclass
class SparseWeights:
    grid: VoxelGrid
    bin_px: int
    views: list[ViewWeights]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_views(self) -> int:
        return len(self.views)

    def xsec_matrix(self, v: int) -> sp.csr_matrix:
        """Cross-section factor as a (nx*ny, n_xbins) CSR matrix."""
        key = ("xsec", v)
        if key not in self._cache:
            vw = self.views[v]
            ny = self.grid.dims[1]
            rows = vw.xsec_ix.astype(np.int64) * ny + vw.xsec_iy
            self._cache[key] = sp.csr_matrix(
                (vw.xsec_w, (rows, vw.xsec_xbin)),
                shape=(self.grid.dims[0] * ny, vw.n_xbins),
            )
        return self._cache[key]

    def z_matrix(self, v: int) -> np.ndarray:
        """Belt-axis factor as a dense (nz, n_ybins) matrix."""
        key = ("z", v)
        if key not in self._cache:
            vw = self.views[v]
            z = np.zeros((self.grid.dims[2], vw.n_ybins))
            z[vw.z_iz, vw.z_ybin] = vw.z_w
            self._cache[key] = z
        return self._cache[key]

    def densify(self, v: int) -> np.ndarray:
        """Full weight matrix of view ``v``: (n_cells, n_ybins * n_xbins)."""
        vw = self.views[v]
        nx, ny, nz = self.grid.dims
        dense = np.zeros((nx * ny * nz, vw.n_ybins * vw.n_xbins))
        for xb, ix, iy, wxy in zip(vw.xsec_xbin, vw.xsec_ix, vw.xsec_iy, vw.xsec_w):
            for j, iz, wz in zip(vw.z_ybin, vw.z_iz, vw.z_w):
                dense[(ix * ny + iy) * nz + iz, j * vw.n_xbins + xb] = wxy * wz
        return dense

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "wb") as fh:
            fh.write(to_bytes(self))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SparseWeights":
        with open(path, "rb") as fh:
            return from_bytes(fh.read())


# ---------------------------------------------------------------------------
# weight construction


def _edge_values(tri: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Edge functions of a ccw triangle at points; shape (3, *px.shape)."""
    out = []
    for k in range(3):
        ax, ay = tri[k]
        bx, by = tri[(k + 1) % 3]
        out.append((bx - ax) * (py - ay) - (by - ay) * (px - ax))
    return np.stack(out)


def _xsec_weights_for_view(view, grid: VoxelGrid, bin_px: int, eps: float):
    nx, ny, _ = grid.dims
    ox, oy, _ = grid.origin
    dx, dy, _ = grid.cell_size
    cell_area = dx * dy
    ex = grid.axis_edges(0)
    ey = grid.axis_edges(1)
    xb_out, ix_out, iy_out, w_out = [], [], [], []
    n_bins = n_feature_bins(view, bin_px)
    for xb in range(n_bins):
        tri_poly = beam_triangle(view, xb * bin_px, min((xb + 1) * bin_px, view.image_width_px))
        tri = np.asarray(tri_poly.vertices)
        xmin, ymin = tri.min(axis=0)
        xmax, ymax = tri.max(axis=0)
        i0 = max(0, int(math.floor((xmin - ox) / dx)))
        i1 = min(nx - 1, int(math.floor((xmax - ox) / dx)))
        j0 = max(0, int(math.floor((ymin - oy) / dy)))
        j1 = min(ny - 1, int(math.floor((ymax - oy) / dy)))
        if i0 > i1 or j0 > j1:
            continue
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
        ii = ii.ravel()
        jj = jj.ravel()
        cx = np.stack([ex[ii], ex[ii + 1], ex[ii + 1], ex[ii]], axis=1)
        cy = np.stack([ey[jj], ey[jj], ey[jj + 1], ey[jj + 1]], axis=1)
        e = _edge_values(tri, cx, cy)  # (3, n, 4)
        full = (e.min(axis=2) >= 0.0).all(axis=0)
        reject = (e.max(axis=2) <= 0.0).any(axis=0)
        partial = ~full & ~reject
        for k in np.flatnonzero(full):
            xb_out.append(xb)
            ix_out.append(ii[k])
            iy_out.append(jj[k])
            w_out.append(1.0)
        tri_list = [tuple(p) for p in tri_poly.vertices]
        for k in np.flatnonzero(partial):
            i, j = ii[k], jj[k]
            clipped = clip_to_rect(tri_list, ex[i], ey[j], ex[i + 1], ey[j + 1])
            w = min(abs(signed_area(clipped)) / cell_area, 1.0)
            if w >= eps:
                xb_out.append(xb)
                ix_out.append(i)
                iy_out.append(j)
                w_out.append(w)
    return (
        np.asarray(xb_out, dtype=np.int64),
        np.asarray(ix_out, dtype=np.int64),
        np.asarray(iy_out, dtype=np.int64),
        np.asarray(w_out, dtype=float),
        n_bins,
    )


def _z_weights(grid: VoxelGrid, bin_mm: float, n_ybins: int, eps: float):
    nz = grid.dims[2]
    dz = grid.cell_size[2]
    ez = grid.axis_edges(2)
    ybin, izs, ws = [], [], []
    for iz in range(nz):
        z0, z1 = ez[iz], ez[iz + 1]
        j0 = max(0, int(math.floor(z0 / bin_mm)))
        j1 = min(n_ybins - 1, int(math.ceil(z1 / bin_mm)) - 1)
        for j in range(j0, j1 + 1):
            overlap = min(z1, (j + 1) * bin_mm) - max(z0, j * bin_mm)
            w = min(overlap / dz, 1.0)
            if w >= eps:
                ybin.append(j)
                izs.append(iz)
                ws.append(w)
    return np.asarray(ybin, dtype=np.int64), np.asarray(izs, dtype=np.int64), np.asarray(ws, dtype=float)


def default_n_ybins(geom: ScannerGeometry, grid: VoxelGrid, bin_px: int) -> int:
    """Feature rows needed to cover the grid's belt extent (z >= 0)."""
    zmax = grid.upper[2]
    if zmax <= 0:
        raise ConfigError("grid lies entirely before the start of the belt window (z <= 0)")
    return max(1, math.ceil(zmax / (bin_px * geom.belt_mm_per_px) - 1e-9))


def compute_weights(
    geom: ScannerGeometry,
    grid: VoxelGrid,
    bin_px: int,
    n_ybins: Optional[int] = None,
    renormalize_partial: bool = False,
    eps: float = EPSILON_W,
) -> SparseWeights:
    if int(bin_px) != bin_px or bin_px < 1:
        raise DomainError("bin_px must be a positive integer")
    if not grid.inside_tunnel(geom):
        raise ConfigError("voxel grid cross-section extends outside the tunnel")
    bin_px = int(bin_px)
    if n_ybins is None:
        n_ybins = default_n_ybins(geom, grid, bin_px)
    if n_ybins < 1:
        raise DomainError("n_ybins must be positive")
    bin_mm = bin_px * geom.belt_mm_per_px
    ny = grid.dims[1]
    zb, ziz, zw = _z_weights(grid, bin_mm, n_ybins, eps)
    if renormalize_partial:
        zsum = np.bincount(ziz, weights=zw, minlength=grid.dims[2])
        zw = zw / zsum[ziz]
    z_order = np.lexsort((zb, ziz))
    zb, ziz, zw = zb[z_order], ziz[z_order], zw[z_order]

    views = []
    for view in geom.views:
        xb, ix, iy, w, n_xbins = _xsec_weights_for_view(view, grid, bin_px, eps)
        if renormalize_partial and len(w):
            cell = ix * ny + iy
            s = np.bincount(cell, weights=w, minlength=grid.dims[0] * ny)
            w = w / s[cell]
        order = np.lexsort((xb, ix * ny + iy))
        views.append(
            ViewWeights(
                n_xbins=n_xbins,
                n_ybins=n_ybins,
                xsec_xbin=xb[order],
                xsec_ix=ix[order],
                xsec_iy=iy[order],
                xsec_w=w[order],
                z_ybin=zb.copy(),
                z_iz=ziz.copy(),
                z_w=zw.copy(),
            )
        )
    return SparseWeights(grid=grid, bin_px=bin_px, views=views)


# ---------------------------------------------------------------------------
# pooling


def _as_mask(weights: SparseWeights, mask) -> ViewMask:
    if mask is None:
        return ViewMask.all(weights.n_views)
    if not isinstance(mask, ViewMask):
        mask = ViewMask(tuple(mask))
    if len(mask.active) != weights.n_views:
        raise ShapeError(f"mask has {len(mask.active)} entries for {weights.n_views} views")
    return mask


def _map_data(m) -> np.ndarray:
    if isinstance(m, FeatureMap):
        return m.data
    return np.asarray(m, dtype=float)


def _check_maps(weights: SparseWeights, maps, mask: ViewMask) -> tuple[list[np.ndarray], int]:
    if len(maps) != weights.n_views:
        raise ShapeError(f"got {len(maps)} feature maps for {weights.n_views} views")
    out: list[np.ndarray] = [None] * weights.n_views  # type: ignore[list-item]
    channels = None
    for v in mask.indices:
        if maps[v] is None:
            raise ShapeError(f"missing feature map for active view {v}")
        f = _map_data(maps[v])
        vw = weights.views[v]
        if f.ndim != 3 or f.shape[1:] != vw.feature_shape:
            raise ShapeError(f"view {v}: map shape {f.shape} != [C, {vw.n_ybins}, {vw.n_xbins}]")
        if channels is None:
            channels = f.shape[0]
        elif f.shape[0] != channels:
            raise ShapeError("feature maps disagree in channel count")
        if not np.all(np.isfinite(f)):
            raise DomainError(f"view {v}: non-finite feature values")
        out[v] = f
    return out, channels


def pool_avg(weights: SparseWeights, maps, mask=None) -> FeatureVolume:
    """Mean over active views of the weighted beam sum per cell."""
    mask = _as_mask(weights, mask)
    feats, C = _check_maps(weights, maps, mask)
    nx, ny, nz = weights.grid.dims
    out = np.zeros((C, nx * ny, nz))
    for v in mask.indices:
        f = feats[v]
        _, H, W = f.shape
        a = weights.xsec_matrix(v)
        # (C*H, W) x (W, nxy) -> (C, H, nxy)
        t = (a @ f.reshape(C * H, W).T).T.reshape(C, H, nx * ny)
        out += np.einsum("chp,zh->cpz", t, weights.z_matrix(v))
    out /= mask.n_active
    return FeatureVolume(out.reshape(C, nx, ny, nz), weights.grid)


def _grad_array(weights: SparseWeights, grad_out) -> np.ndarray:
    g = grad_out.data if isinstance(grad_out, FeatureVolume) else np.asarray(grad_out, dtype=float)
    if g.ndim != 4 or tuple(g.shape[1:]) != weights.grid.dims:
        raise ShapeError(f"gradient shape {g.shape} does not match grid {weights.grid.dims}")
    return g


def pool_avg_backward(weights: SparseWeights, grad_out, mask=None) -> dict[int, np.ndarray]:
    """Adjoint of :func:`pool_avg`; one [C, H, W] gradient per active view."""
    mask = _as_mask(weights, mask)
    g = _grad_array(weights, grad_out)
    C = g.shape[0]
    nx, ny, nz = weights.grid.dims
    g2 = g.reshape(C, nx * ny, nz)
    grads = {}
    for v in mask.indices:
        vw = weights.views[v]
        u = np.einsum("cpz,zh->chp", g2, weights.z_matrix(v))  # (C, H, nxy)
        a = weights.xsec_matrix(v)
        gv = (a.T @ u.reshape(C * vw.n_ybins, nx * ny).T).T
        grads[v] = gv.reshape(C, vw.n_ybins, vw.n_xbins) / mask.n_active
    return grads


@dataclass
class ArgmaxIndex:
    """Winning candidate per output element; view == -1 marks an uncovered cell."""

    view: np.ndarray  # int32 [C, nx, ny, nz]
    beam: np.ndarray  # int64 [C, nx, ny, nz], y_bin * n_xbins + x_bin
    weight: np.ndarray  # float64 [C, nx, ny, nz]


@numba.njit(cache=True)
def _max_kernel(xs_ptr, xs_bin, xs_w, z_ptr, z_bin, z_w, active, widths, feats, out, av, ab, aw):
    C = feats.shape[1]
    nxy = xs_ptr.shape[1] - 1
    nz = z_ptr.shape[1] - 1
    best = np.empty(C)
    bv = np.empty(C, dtype=np.int32)
    bb = np.empty(C, dtype=np.int64)
    bw = np.empty(C)
    for p in range(nxy):
        for iz in range(nz):
            for ch in range(C):
                best[ch] = 0.0
                bv[ch] = -1
                bb[ch] = -1
                bw[ch] = 0.0
            for v in active:
                for e in range(xs_ptr[v, p], xs_ptr[v, p + 1]):
                    xb = xs_bin[e]
                    wxy = xs_w[e]
                    for q in range(z_ptr[v, iz], z_ptr[v, iz + 1]):
                        j = z_bin[q]
                        w = wxy * z_w[q]
                        key = j * widths[v] + xb
                        for ch in range(C):
                            val = w * feats[v, ch, j, xb]
                            if (
                                bv[ch] < 0
                                or val > best[ch]
                                or (val == best[ch] and (v < bv[ch] or (v == bv[ch] and key < bb[ch])))
                            ):
                                best[ch] = val
                                bv[ch] = v
                                bb[ch] = key
                                bw[ch] = w
            for ch in range(C):
                out[ch, p, iz] = best[ch]
                av[ch, p, iz] = bv[ch]
                ab[ch, p, iz] = bb[ch]
                aw[ch, p, iz] = bw[ch]


def _csr_layout(weights: SparseWeights):
    key = ("csr",)
    if key in weights._cache:
        return weights._cache[key]
    nx, ny, nz = weights.grid.dims
    V = weights.n_views
    xs_ptr = np.zeros((V, nx * ny + 1), dtype=np.int64)
    z_ptr = np.zeros((V, nz + 1), dtype=np.int64)
    xs_bin, xs_w, z_bin, z_w = [], [], [], []
    xs_off = z_off = 0
    for v, vw in enumerate(weights.views):
        cell = vw.xsec_ix * ny + vw.xsec_iy
        xs_ptr[v, 1:] = xs_off + np.cumsum(np.bincount(cell, minlength=nx * ny))
        xs_ptr[v, 0] = xs_off
        z_ptr[v, 1:] = z_off + np.cumsum(np.bincount(vw.z_iz, minlength=nz))
        z_ptr[v, 0] = z_off
        xs_bin.append(vw.xsec_xbin)
        xs_w.append(vw.xsec_w)
        z_bin.append(vw.z_ybin)
        z_w.append(vw.z_w)
        xs_off += len(vw.xsec_w)
        z_off += len(vw.z_w)
    layout = (
        xs_ptr,
        np.concatenate(xs_bin).astype(np.int64),
        np.concatenate(xs_w).astype(float),
        z_ptr,
        np.concatenate(z_bin).astype(np.int64),
        np.concatenate(z_w).astype(float),
    )
    weights._cache[key] = layout
    return layout


def pool_max(weights: SparseWeights, maps, mask=None) -> tuple[FeatureVolume, ArgmaxIndex]:
    """Per cell and channel, the largest weighted candidate over all active beams.

    Ties go to the lowest (view, beam) index; uncovered cells are zero.
    """
    mask = _as_mask(weights, mask)
    feats, C = _check_maps(weights, maps, mask)
    nx, ny, nz = weights.grid.dims
    V = weights.n_views
    hmax = max(vw.n_ybins for vw in weights.views)
    wmax = max(vw.n_xbins for vw in weights.views)
    stacked = np.zeros((V, C, hmax, wmax))
    for v in mask.indices:
        f = feats[v]
        stacked[v, :, : f.shape[1], : f.shape[2]] = f
    widths = np.array([vw.n_xbins for vw in weights.views], dtype=np.int64)
    out = np.zeros((C, nx * ny, nz))
    av = np.full((C, nx * ny, nz), -1, dtype=np.int32)
    ab = np.full((C, nx * ny, nz), -1, dtype=np.int64)
    aw = np.zeros((C, nx * ny, nz))
    _max_kernel(*_csr_layout(weights), np.array(mask.indices, dtype=np.int64), widths, stacked, out, av, ab, aw)
    shape = (C, nx, ny, nz)
    return (
        FeatureVolume(out.reshape(shape), weights.grid),
        ArgmaxIndex(av.reshape(shape), ab.reshape(shape), aw.reshape(shape)),
    )


def pool_max_backward(weights: SparseWeights, argmax: ArgmaxIndex, grad_out, mask=None) -> dict[int, np.ndarray]:
    """Route each output gradient to its winning beam, scaled by the beam weight."""
    mask = _as_mask(weights, mask)
    g = _grad_array(weights, grad_out)
    for name in ("view", "beam", "weight"):
        if getattr(argmax, name).shape != g.shape:
            raise ShapeError(f"argmax.{name} shape {getattr(argmax, name).shape} != gradient shape {g.shape}")
    C = g.shape[0]
    ch_index = np.broadcast_to(np.arange(C).reshape(C, 1, 1, 1), g.shape)
    grads = {}
    for v in mask.indices:
        vw = weights.views[v]
        sel = argmax.view == v
        gv = np.zeros((C, vw.n_ybins * vw.n_xbins))
        beams = argmax.beam[sel]
        if beams.size and (beams.min() < 0 or beams.max() >= vw.n_ybins * vw.n_xbins):
            raise ShapeError(f"argmax beam index out of range for view {v}")
        np.add.at(gv, (ch_index[sel], beams), argmax.weight[sel] * g[sel])
        grads[v] = gv.reshape(C, vw.n_ybins, vw.n_xbins)
    return grads


# ---------------------------------------------------------------------------
# 3D RoI pooling


def roi_bounds(grid: VoxelGrid, box: Box3) -> tuple[tuple[int, int], ...]:
    """Box snapped outward to cell indices, clamped to the grid."""
    out = []
    for axis in range(3):
        o, c, n = grid.origin[axis], grid.cell_size[axis], grid.dims[axis]
        lo = math.floor((box.lo[axis] - o) / c)
        hi = math.ceil((box.hi[axis] - o) / c)
        lo, hi = max(lo, 0), min(hi, n)
        if hi <= lo:
            raise DomainError("RoI box lies outside the voxel grid")
        out.append((lo, hi))
    return tuple(out)


def roi_pool_3d(volume: FeatureVolume, box: Box3, out_dims: Sequence[int] = (7, 7, 7)) -> np.ndarray:
    """Max over a×b×c sub-blocks of the box; sub-block k spans
    [floor(k*n/a), ceil((k+1)*n/a)) so every sub-block has at least one cell."""
    out_dims = tuple(int(d) for d in out_dims)
    if len(out_dims) != 3 or min(out_dims) < 1:
        raise DomainError("out_dims must be three positive integers")
    bounds = roi_bounds(volume.grid, box)
    splits = []
    for (lo, hi), a in zip(bounds, out_dims):
        n = hi - lo
        starts = [lo + (k * n) // a for k in range(a)]
        ends = [lo + -((-(k + 1) * n) // a) for k in range(a)]
        splits.append(list(zip(starts, ends)))
    data = volume.data
    out = np.empty((data.shape[0], *out_dims))
    for i, (x0, x1) in enumerate(splits[0]):
        for j, (y0, y1) in enumerate(splits[1]):
            for k, (z0, z1) in enumerate(splits[2]):
                out[:, i, j, k] = data[:, x0:x1, y0:y1, z0:z1].max(axis=(1, 2, 3))
    return out


# ---------------------------------------------------------------------------
# binary format: "MXW1", then little-endian
#   u32 n_views, u32 bin_px, u32 nx, ny, nz, f64 origin[3], f64 cell_size[3]
#   per view: u32 n_xbins, u32 n_ybins,
#             u32 nnz_xy, u32 x_bin[nnz], u32 ix[nnz], u32 iy[nnz], f64 w_xy[nnz],
#             u32 nnz_z,  u32 y_bin[nnz], u32 iz[nnz], f64 w_z[nnz]

MAGIC_WEIGHTS = b"MXW1"


def to_bytes(weights: SparseWeights) -> bytes:
    g = weights.grid
    parts = [
        MAGIC_WEIGHTS,
        struct.pack("<5I", weights.n_views, weights.bin_px, *g.dims),
        struct.pack("<6d", *g.origin, *g.cell_size),
    ]
    u32 = np.dtype("<u4")
    f64 = np.dtype("<f8")
    for vw in weights.views:
        parts.append(struct.pack("<3I", vw.n_xbins, vw.n_ybins, len(vw.xsec_w)))
        for arr in (vw.xsec_xbin, vw.xsec_ix, vw.xsec_iy):
            parts.append(np.asarray(arr, dtype=u32).tobytes())
        parts.append(np.asarray(vw.xsec_w, dtype=f64).tobytes())
        parts.append(struct.pack("<I", len(vw.z_w)))
        for arr in (vw.z_ybin, vw.z_iz):
            parts.append(np.asarray(arr, dtype=u32).tobytes())
        parts.append(np.asarray(vw.z_w, dtype=f64).tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> SparseWeights:
    if buf[:4] != MAGIC_WEIGHTS:
        raise ShapeError("not an MXW1 weight file")
    pos = 4
    n_views, bin_px, nx, ny, nz = struct.unpack_from("<5I", buf, pos)
    pos += 20
    vals = struct.unpack_from("<6d", buf, pos)
    pos += 48
    grid = VoxelGrid(vals[:3], vals[3:], (nx, ny, nz))

    def take(n, dtype):
        nonlocal pos
        dt = np.dtype(dtype)
        arr = np.frombuffer(buf, dtype=dt, count=n, offset=pos)
        pos += n * dt.itemsize
        return arr

    views = []
    for _ in range(n_views):
        n_xbins, n_ybins, nnz = struct.unpack_from("<3I", buf, pos)
        pos += 12
        xb, ix, iy = (take(nnz, "<u4").astype(np.int64) for _ in range(3))
        wxy = take(nnz, "<f8").astype(float)
        (nnz_z,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        yb, iz = (take(nnz_z, "<u4").astype(np.int64) for _ in range(2))
        wz = take(nnz_z, "<f8").astype(float)
        views.append(ViewWeights(n_xbins, n_ybins, xb, ix, iy, wxy, yb, iz, wz))
    if pos != len(buf):
        raise ShapeError("trailing bytes in MXW1 weight file")
    return SparseWeights(grid=grid, bin_px=bin_px, views=views)
