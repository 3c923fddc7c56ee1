import numpy as np
import pytest

from mxray.boxes import Box3
from mxray.errors import ConfigError, DomainError, ShapeError
from mxray.geometry import ScannerGeometry, ViewGeometry, VoxelGrid
from mxray.mv_pooling import (
    ArgmaxIndex,
    FeatureVolume,
    SparseWeights,
    ViewMask,
    compute_weights,
    from_bytes,
    pool_avg,
    pool_avg_backward,
    pool_max,
    pool_max_backward,
    roi_pool_3d,
    to_bytes,
)
from oracles import dense_from_coo, max_pool_enumeration, monte_carlo_xsec, random_geometry


@pytest.fixture(scope="module")
def small_weights(geom, small_grid):
    return compute_weights(geom, small_grid, 64)


def random_maps(rng, weights, C=3):
    return [rng.standard_normal((C, vw.n_ybins, vw.n_xbins)) for vw in weights.views]


def single_view_geometry():
    # source far below, wide detector above: a narrow tunnel sits well inside the fan
    v = ViewGeometry("v", (0.0, -1000.0), (-400.0, 200.0), (400.0, 200.0), 8)
    return ScannerGeometry((v,), (-50.0, 0.0), (50.0, 100.0), 1.0)


def test_full_containment_gives_unit_weight():
    geom = single_view_geometry()
    # one small cell near the centre ray of bin 3 or 4 (pixel 4 is the centre)
    grid = VoxelGrid((10.0, 40.0, 0.0), (2.0, 2.0, 1.0), (1, 1, 1))
    w = compute_weights(geom, grid, 1, n_ybins=4)
    vw = w.views[0]
    assert list(vw.xsec_w) == [1.0]
    assert list(vw.z_w) == [1.0]


def test_cell_outside_fan_has_no_entries():
    v = ViewGeometry("v", (0.0, -1000.0), (-10.0, 200.0), (10.0, 200.0), 8)
    geom = ScannerGeometry((v,), (-50.0, 0.0), (50.0, 100.0), 1.0)
    grid = VoxelGrid((40.0, 0.0, 0.0), (5.0, 5.0, 4.0), (1, 1, 1))
    assert len(compute_weights(geom, grid, 2).views[0].xsec_w) == 0


def test_bisected_cell_matches_monte_carlo():
    geom = single_view_geometry()
    # cell straddling the ray through pixel 4 (x = 0 on the detector)
    grid = VoxelGrid((-3.0, 40.0, 0.0), (5.0, 5.0, 1.0), (1, 1, 1))
    w = compute_weights(geom, grid, 4)
    vw = w.views[0]
    assert len(vw.xsec_w) == 2
    mc = monte_carlo_xsec(geom.views[0], grid, 4, 20_000, seed=0)[0, 0]
    for xb, wxy in zip(vw.xsec_xbin, vw.xsec_w):
        assert wxy == pytest.approx(mc[xb], abs=0.02)


def test_partition_of_unity_and_bound(rng):
    geom = random_geometry(rng)
    grid = VoxelGrid.spanning((*geom.tunnel_min, 0.0), (*geom.tunnel_max, 40.0), (20, 20, 5))
    w = compute_weights(geom, grid, 8)
    nx, ny, nz = grid.dims
    for view, vw in zip(geom.views, w.views):
        s = np.bincount(vw.xsec_ix * ny + vw.xsec_iy, weights=vw.xsec_w, minlength=nx * ny)
        assert s.max() <= 1 + 1e-9
        fan = view.fan
        ex, ey = grid.axis_edges(0), grid.axis_edges(1)
        for ix in range(nx):
            for iy in range(ny):
                corners = [(ex[ix], ey[iy]), (ex[ix + 1], ey[iy]), (ex[ix + 1], ey[iy + 1]), (ex[ix], ey[iy + 1])]
                if all(fan.contains(c, tol=-1e-9) for c in corners):
                    assert abs(s[ix * ny + iy] - 1) <= 1e-9
        zs = np.bincount(vw.z_iz, weights=vw.z_w, minlength=nz)
        np.testing.assert_allclose(zs, 1.0, atol=1e-12)


def test_grid_outside_tunnel(geom):
    grid = VoxelGrid((-400.0, 0.0, 0.0), (10.0, 10.0, 10.0), (4, 4, 4))
    with pytest.raises(ConfigError):
        compute_weights(geom, grid, 16)


def test_renormalize_partial_sums_to_one(rng):
    geom = random_geometry(rng, coverage=(0.7, 0.8))
    grid = VoxelGrid.spanning((*geom.tunnel_min, 0.0), (*geom.tunnel_max, 10.0), (12, 12, 2))
    w = compute_weights(geom, grid, 8, renormalize_partial=True)
    ny = grid.dims[1]
    for vw in w.views:
        s = np.bincount(vw.xsec_ix * ny + vw.xsec_iy, weights=vw.xsec_w)
        np.testing.assert_allclose(s[s > 0], 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# average pooling


def test_pool_avg_zero_in_zero_out(rng, small_weights):
    maps = [np.zeros_like(m) for m in random_maps(rng, small_weights)]
    assert not pool_avg(small_weights, maps).data.any()


def test_pool_avg_matches_dense_oracle(rng, small_weights):
    grid = small_weights.grid
    dense = [dense_from_coo(vw, grid.dims) for vw in small_weights.views]
    for mask in ([True] * 4, [True, False, True, False], [False, False, False, True]):
        maps = random_maps(rng, small_weights)
        got = pool_avg(small_weights, maps, mask).data
        active = [v for v in range(4) if mask[v]]
        want = sum(dense[v] @ maps[v].reshape(3, -1).T for v in active).T / len(active)
        np.testing.assert_allclose(got.reshape(3, -1), want, atol=1e-12)


def test_pool_avg_linear(rng, small_weights):
    f, g = random_maps(rng, small_weights), random_maps(rng, small_weights)
    a, b = 0.7, -2.3
    combo = [a * x + b * y for x, y in zip(f, g)]
    lhs = pool_avg(small_weights, combo).data
    rhs = a * pool_avg(small_weights, f).data + b * pool_avg(small_weights, g).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_mask_equals_pooling_only_active_views(rng, geom, small_grid):
    full = compute_weights(geom, small_grid, 64)
    maps = random_maps(rng, full)
    sub_geom = ScannerGeometry((geom.views[0], geom.views[3]), geom.tunnel_min, geom.tunnel_max, geom.belt_mm_per_px)
    sub = compute_weights(sub_geom, small_grid, 64)
    masked = pool_avg(full, maps, ViewMask.disabling(4, [1, 2])).data
    direct = pool_avg(sub, [maps[0], maps[3]]).data
    assert np.abs(masked - direct).max() <= 1e-12
    # disabled views may be omitted entirely
    maps[1] = maps[2] = None
    np.testing.assert_array_equal(pool_avg(full, maps, ViewMask.disabling(4, [1, 2])).data, masked)


def test_pool_errors(rng, small_weights):
    maps = random_maps(rng, small_weights)
    with pytest.raises(DomainError):
        pool_avg(small_weights, maps, [False] * 4)
    bad = list(maps)
    bad[0] = bad[0][:, :, :-1]
    with pytest.raises(ShapeError):
        pool_avg(small_weights, bad)
    with pytest.raises(ShapeError):
        pool_max(small_weights, bad)
    with pytest.raises(ShapeError):
        pool_avg(small_weights, maps[:3])
    with pytest.raises(ShapeError):
        pool_avg_backward(small_weights, np.zeros((1, 2, 2, 2)))


def test_avg_backward_zero(small_weights):
    grads = pool_avg_backward(small_weights, np.zeros((2, *small_weights.grid.dims)))
    assert all(not g.any() for g in grads.values())


def test_avg_adjoint(rng, small_weights):
    for mask in ([True] * 4, [False, True, True, False]):
        f = random_maps(rng, small_weights)
        g = rng.standard_normal((3, *small_weights.grid.dims))
        lhs = np.vdot(pool_avg(small_weights, f, mask).data, g)
        back = pool_avg_backward(small_weights, g, mask)
        rhs = sum(np.vdot(f[v], back[v]) for v in back)
        assert lhs == pytest.approx(rhs, abs=1e-9)
        assert sorted(back) == [v for v in range(4) if mask[v]]


def test_avg_backward_finite_differences(rng, small_weights):
    f = random_maps(rng, small_weights, C=2)
    g = rng.standard_normal((2, *small_weights.grid.dims))
    back = pool_avg_backward(small_weights, g)
    h = 1e-3
    for v in range(4):
        fd = np.zeros_like(f[v])
        for idx in np.ndindex(f[v].shape):
            fp = [m.copy() for m in f]
            fm = [m.copy() for m in f]
            fp[v][idx] += h
            fm[v][idx] -= h
            fd[idx] = (np.vdot(pool_avg(small_weights, fp).data, g) - np.vdot(pool_avg(small_weights, fm).data, g)) / (2 * h)
        assert np.linalg.norm(fd - back[v]) <= 1e-5 * np.linalg.norm(back[v])


# ---------------------------------------------------------------------------
# max pooling


def test_pool_max_single_candidate():
    geom = single_view_geometry()
    grid = VoxelGrid((10.0, 40.0, 0.0), (2.0, 2.0, 1.0), (1, 1, 1))
    w = compute_weights(geom, grid, 1, n_ybins=4)
    f = np.arange(2 * 4 * 8, dtype=float).reshape(2, 4, 8) - 20
    out, arg = pool_max(w, [f])
    xb, j = w.views[0].xsec_xbin[0], w.views[0].z_ybin[0]
    np.testing.assert_array_equal(out.data[:, 0, 0, 0], f[:, j, xb])
    assert (arg.beam[:, 0, 0, 0] == j * 8 + xb).all()
    # one candidate: max backward equals avg backward times the number of active views
    g = np.array([1.5, -2.0]).reshape(2, 1, 1, 1)
    np.testing.assert_allclose(pool_max_backward(w, arg, g)[0], pool_avg_backward(w, g)[0] * 1)


def test_pool_max_weighted_negative_example():
    # two candidates with w = 1.0 and 0.5 and value -1 -> max is -0.5
    geom = single_view_geometry()
    grid = VoxelGrid((10.0, 40.0, 0.0), (2.0, 2.0, 1.0), (1, 1, 1))
    w = compute_weights(geom, grid, 1, n_ybins=4)
    vw = w.views[0]
    vw.z_ybin = np.array([0, 1])
    vw.z_iz = np.array([0, 0])
    vw.z_w = np.array([1.0, 0.5])
    w._cache.clear()
    f = -np.ones((1, 4, 8))
    out, arg = pool_max(w, [f])
    assert out.data[0, 0, 0, 0] == -0.5
    assert arg.weight[0, 0, 0, 0] == 0.5


def test_pool_max_matches_enumeration(rng, small_weights):
    grid = small_weights.grid
    dense = [dense_from_coo(vw, grid.dims) for vw in small_weights.views]
    for mask in ([True] * 4, [True, False, False, True]):
        maps = random_maps(rng, small_weights)
        # integer-valued features force many exact ties
        maps[2] = np.round(maps[2])
        out, arg = pool_max(small_weights, maps, mask)
        active = [v for v in range(4) if mask[v]]
        want, wv, wb, ww = max_pool_enumeration(dense, maps, active)
        np.testing.assert_array_equal(out.data.reshape(3, -1), want)
        np.testing.assert_array_equal(arg.view.reshape(3, -1), wv)
        np.testing.assert_array_equal(arg.beam.reshape(3, -1), wb)
        np.testing.assert_array_equal(arg.weight.reshape(3, -1), ww)


def test_pool_max_order_invariant(rng, small_weights):
    maps = random_maps(rng, small_weights)
    out, arg = pool_max(small_weights, maps)
    shuffled = SparseWeights(small_weights.grid, small_weights.bin_px, [])
    for vw in small_weights.views:
        p = rng.permutation(len(vw.xsec_w))
        q = rng.permutation(len(vw.z_w))
        cp = type(vw)(vw.n_xbins, vw.n_ybins, vw.xsec_xbin[p], vw.xsec_ix[p], vw.xsec_iy[p], vw.xsec_w[p],
                      vw.z_ybin[q], vw.z_iz[q], vw.z_w[q])
        # CSR layout needs cell-sorted entries; keep the permutation within cells
        o = np.lexsort((rng.random(len(p)), cp.xsec_ix * small_weights.grid.dims[1] + cp.xsec_iy))
        cp.xsec_xbin, cp.xsec_ix, cp.xsec_iy, cp.xsec_w = cp.xsec_xbin[o], cp.xsec_ix[o], cp.xsec_iy[o], cp.xsec_w[o]
        o = np.lexsort((rng.random(len(q)), cp.z_iz))
        cp.z_ybin, cp.z_iz, cp.z_w = cp.z_ybin[o], cp.z_iz[o], cp.z_w[o]
        shuffled.views.append(cp)
    out2, arg2 = pool_max(shuffled, maps)
    np.testing.assert_array_equal(out.data, out2.data)
    np.testing.assert_array_equal(arg.beam, arg2.beam)


def test_max_backward_routing(rng, small_weights):
    maps = random_maps(rng, small_weights)
    out, arg = pool_max(small_weights, maps)
    g = rng.standard_normal(out.data.shape)
    grads = pool_max_backward(small_weights, arg, g)
    C = g.shape[0]
    for v, vw in enumerate(small_weights.views):
        want = np.zeros((C, vw.n_ybins * vw.n_xbins))
        for idx in np.ndindex(g.shape):
            if arg.view[idx] == v:
                want[idx[0], arg.beam[idx]] += arg.weight[idx] * g[idx]
        np.testing.assert_array_equal(grads[v].reshape(C, -1), want)


def test_max_backward_finite_differences(rng, small_weights):
    maps = random_maps(rng, small_weights, C=2)
    out, arg = pool_max(small_weights, maps)
    g = rng.standard_normal(out.data.shape)
    grads = pool_max_backward(small_weights, arg, g)
    h = 1e-6
    checked = 0
    for v in range(4):
        for idx in list(np.ndindex(maps[v].shape))[::3]:
            fp = [m.copy() for m in maps]
            fm = [m.copy() for m in maps]
            fp[v][idx] += h
            fm[v][idx] -= h
            op, ap = pool_max(small_weights, fp)
            om, am = pool_max(small_weights, fm)
            # only where no argmax flips under the perturbation (strict maxima)
            if not (np.array_equal(ap.beam, arg.beam) and np.array_equal(am.beam, arg.beam)
                    and np.array_equal(ap.view, arg.view) and np.array_equal(am.view, arg.view)):
                continue
            fd = (np.vdot(op.data, g) - np.vdot(om.data, g)) / (2 * h)
            assert fd == pytest.approx(grads[v][idx], rel=1e-5, abs=1e-8)
            checked += 1
    assert checked > 20


def test_max_backward_zero_and_stale_argmax(rng, small_weights):
    maps = random_maps(rng, small_weights)
    out, arg = pool_max(small_weights, maps)
    grads = pool_max_backward(small_weights, arg, np.zeros_like(out.data))
    assert all(not gv.any() for gv in grads.values())
    stale = ArgmaxIndex(arg.view[:1], arg.beam[:1], arg.weight[:1])
    with pytest.raises(ShapeError):
        pool_max_backward(small_weights, stale, out.data)


def test_uncovered_cells_are_zero():
    v = ViewGeometry("v", (0.0, -1000.0), (-10.0, 200.0), (10.0, 200.0), 8)
    geom = ScannerGeometry((v,), (-50.0, 0.0), (50.0, 100.0), 1.0)
    grid = VoxelGrid((-50.0, 0.0, 0.0), (25.0, 25.0, 4.0), (4, 4, 1))
    w = compute_weights(geom, grid, 2)
    f = -np.ones((1, *w.views[0].feature_shape))
    out, arg = pool_max(w, [f])
    # the outer columns lie outside the narrow fan
    assert (out.data[0, 0] == 0).all() and (arg.view[0, 0] == -1).all()
    assert (pool_avg(w, [f]).data[0, 0] == 0).all()


# ---------------------------------------------------------------------------
# RoI pooling


def naive_roi(data, bounds, out_dims):
    C = data.shape[0]
    out = np.full((C, *out_dims), -np.inf)
    (x0, x1), (y0, y1), (z0, z1) = bounds
    for c in range(C):
        for i in range(out_dims[0]):
            for j in range(out_dims[1]):
                for k in range(out_dims[2]):
                    xs = range(x0 + (i * (x1 - x0)) // out_dims[0], x0 + -(-((i + 1) * (x1 - x0)) // out_dims[0]))
                    ys = range(y0 + (j * (y1 - y0)) // out_dims[1], y0 + -(-((j + 1) * (y1 - y0)) // out_dims[1]))
                    zs = range(z0 + (k * (z1 - z0)) // out_dims[2], z0 + -(-((k + 1) * (z1 - z0)) // out_dims[2]))
                    for x in xs:
                        for y in ys:
                            for z in zs:
                                out[c, i, j, k] = max(out[c, i, j, k], data[c, x, y, z])
    return out


def test_roi_identity():
    grid = VoxelGrid((0, 0, 0), (1, 1, 1), (5, 4, 3))
    data = np.random.default_rng(0).standard_normal((2, 5, 4, 3))
    box = Box3.from_corners(grid.origin, grid.upper)
    np.testing.assert_array_equal(roi_pool_3d(FeatureVolume(data, grid), box, grid.dims), data)


def test_roi_constant():
    grid = VoxelGrid((0, 0, 0), (1, 1, 1), (9, 9, 9))
    out = roi_pool_3d(FeatureVolume(np.full((1, 9, 9, 9), 2.5), grid), Box3(4, 4, 4, 5, 6, 3))
    assert out.shape == (1, 7, 7, 7)
    assert (out == 2.5).all()


def test_roi_matches_naive(rng):
    grid = VoxelGrid((-5, 0, 2), (1.5, 2.0, 0.5), (10, 8, 12))
    for _ in range(20):
        data = rng.standard_normal((2, *grid.dims))
        c = rng.uniform(grid.origin, grid.upper)
        box = Box3(*c, *rng.uniform(0.5, 12, 3))
        dims = tuple(int(d) for d in rng.integers(1, 8, 3))
        from mxray.mv_pooling import roi_bounds
        got = roi_pool_3d(FeatureVolume(data, grid), box, dims)
        np.testing.assert_array_equal(got, naive_roi(data, roi_bounds(grid, box), dims))


def test_roi_outside_grid():
    grid = VoxelGrid((0, 0, 0), (1, 1, 1), (4, 4, 4))
    with pytest.raises(DomainError):
        roi_pool_3d(FeatureVolume(np.zeros((1, 4, 4, 4)), grid), Box3(10, 10, 10, 1, 1, 1))


# ---------------------------------------------------------------------------
# binary format


def test_weights_round_trip(small_weights, tmp_path):
    path = tmp_path / "w.mxw"
    small_weights.save(path)
    raw = path.read_bytes()
    assert raw[:4] == b"MXW1"
    assert int.from_bytes(raw[4:8], "little") == 4
    back = SparseWeights.load(path)
    assert back.grid == small_weights.grid and back.bin_px == small_weights.bin_px
    for a, b in zip(back.views, small_weights.views):
        for name in ("xsec_xbin", "xsec_ix", "xsec_iy", "xsec_w", "z_ybin", "z_iz", "z_w"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert to_bytes(back) == raw


def test_weights_bad_magic():
    with pytest.raises(ShapeError):
        from_bytes(b"XXXX" + bytes(100))
