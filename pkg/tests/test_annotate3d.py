import numpy as np
import pytest

from mxray.annotate3d import ViewAnnotation, gen_box3, reproject_box3, wedge_polygon
from mxray.boxes import Box2, Box3
from mxray.errors import DegenerateError, DomainError, InconsistentAnnotationError, InsufficientViewsError, ProjectionError
from mxray.geometry import project_point
from mxray.polygon import clip_to_rect
from oracles import lifting_round_trip, point_in_convex, random_tunnel_box


def test_full_width_wedge_is_clipped_fan(geom):
    view = geom.views[0]
    wedge = wedge_polygon(view, geom.tunnel, Box2(view.image_width_px / 2, 50, view.image_width_px, 20))
    fan = view.fan
    want = clip_to_rect(list(fan.vertices), *geom.tunnel.bounds())
    from mxray.polygon import signed_area
    assert wedge.area == pytest.approx(abs(signed_area(want)), abs=1e-9)


def test_nested_boxes_nested_wedges(geom):
    view = geom.views[1]
    inner = wedge_polygon(view, geom.tunnel, Box2(200, 10, 40, 5))
    outer = wedge_polygon(view, geom.tunnel, Box2(200, 10, 80, 5))
    assert inner.area < outer.area
    assert all(outer.contains(p, tol=1e-9) for p in inner.vertices)


def test_wedge_area_matches_sampling(geom, rng):
    xmin, ymin, xmax, ymax = geom.tunnel.bounds()
    pts = rng.uniform((xmin, ymin), (xmax, ymax), (200_000, 2))
    for v, view in enumerate(geom.views):
        box = Box2(view.image_width_px * 0.4, 30, view.image_width_px * 0.3, 10)
        wedge = wedge_polygon(view, geom.tunnel, box)
        x0, _, x1, _ = box.corners()
        # membership test by projecting each sample, independent of the clipping code
        px = np.array([project_point(view, p) for p in pts[:20_000]])
        frac = np.mean((px >= x0) & (px <= x1))
        est = frac * (xmax - xmin) * (ymax - ymin)
        assert wedge.area == pytest.approx(est, rel=0.03)
        frac2 = point_in_convex(wedge.as_array(), pts).mean()
        assert wedge.area == pytest.approx(frac2 * (xmax - xmin) * (ymax - ymin), rel=0.01)


def test_wedge_errors(geom):
    view = geom.views[0]
    with pytest.raises(DomainError):
        wedge_polygon(view, geom.tunnel, Box2(5, 10, 20, 5))
    with pytest.raises(DomainError):
        wedge_polygon(view, geom.tunnel, Box2(view.image_width_px, 10, 20, 5))


def test_lift_contains_true_box(geom, rng):
    for _ in range(30):
        true = random_tunnel_box(rng, geom)
        anns = [ViewAnnotation(v, b, "weapon") for v, b in enumerate(reproject_box3(geom, true))]
        got = gen_box3(geom, anns)
        for k in range(2):
            assert got.lo[k] <= true.lo[k] + 1e-9 and got.hi[k] >= true.hi[k] - 1e-9
        assert got.z == pytest.approx(true.z, abs=1e-9) and got.d == pytest.approx(true.d, abs=1e-9)


def test_lift_median_iou(geom):
    violations, ious = lifting_round_trip(geom, 100, seed=0)
    assert violations == 0
    assert np.median(ious) >= 0.7


def test_lift_z_is_mean_of_views(geom):
    anns = [
        ViewAnnotation(0, Box2.from_corners(150, 10, 200, 30), "a"),
        ViewAnnotation(1, Box2.from_corners(180, 20, 230, 50), "a"),
    ]
    b = gen_box3(geom, anns)
    assert b.lo[2] == pytest.approx(15 * geom.belt_mm_per_px)
    assert b.hi[2] == pytest.approx(40 * geom.belt_mm_per_px)


def test_lift_errors(geom):
    box = Box3(0, 200, 100, 80, 80, 80)
    b2 = reproject_box3(geom, box)
    with pytest.raises(InsufficientViewsError):
        gen_box3(geom, [ViewAnnotation(0, b2[0], "a")])
    with pytest.raises(InsufficientViewsError):
        gen_box3(geom, [ViewAnnotation(0, b2[0], "a"), ViewAnnotation(0, b2[0], "a")])
    with pytest.raises(InconsistentAnnotationError):
        gen_box3(geom, [ViewAnnotation(0, b2[0], "a"), ViewAnnotation(1, b2[1], "b")])
    # left edge in one view, right edge in another: the wedges miss each other
    w0 = geom.views[0].image_width_px
    w2 = geom.views[2].image_width_px
    far = [ViewAnnotation(0, Box2(5, 10, 8, 4), "a"), ViewAnnotation(2, Box2(w2 - 5, 10, 8, 4), "a"),
           ViewAnnotation(1, Box2(geom.views[1].image_width_px - 5, 10, 8, 4), "a")]
    assert w0 > 0
    with pytest.raises(InconsistentAnnotationError):
        gen_box3(geom, far)


def test_reproject_matches_dense_sampling(geom, rng):
    for _ in range(10):
        box = random_tunnel_box(rng, geom)
        (x0, y0, _), (x1, y1, _) = box.lo, box.hi
        t = np.linspace(0, 1, 401)
        edge = np.concatenate([
            np.stack([x0 + t * (x1 - x0), np.full_like(t, y0)], 1),
            np.stack([x0 + t * (x1 - x0), np.full_like(t, y1)], 1),
            np.stack([np.full_like(t, x0), y0 + t * (y1 - y0)], 1),
            np.stack([np.full_like(t, x1), y0 + t * (y1 - y0)], 1),
        ])
        for view, b2 in zip(geom.views, reproject_box3(geom, box)):
            px = [project_point(view, p) for p in edge]
            assert b2.lo[0] == pytest.approx(min(px), abs=1e-6)
            assert b2.hi[0] == pytest.approx(max(px), abs=1e-6)
            assert b2.lo[1] == pytest.approx(box.lo[2] / geom.belt_mm_per_px)


def lift_and_reproject(geom, boxes2d):
    return reproject_box3(geom, gen_box3(geom, [ViewAnnotation(v, b, "a") for v, b in enumerate(boxes2d)]))


def test_reproject_round_trip_is_extensive(geom, rng):
    # every pass contains the previous one; with point sources it keeps growing until the tunnel walls
    for _ in range(10):
        prev = reproject_box3(geom, random_tunnel_box(rng, geom))
        for _ in range(3):
            cur = lift_and_reproject(geom, prev)
            for a, b in zip(prev, cur):
                assert b.lo[0] <= a.lo[0] + 1e-9 and b.hi[0] >= a.hi[0] - 1e-9
                assert b.lo[1] == pytest.approx(a.lo[1]) and b.hi[1] == pytest.approx(a.hi[1])
            prev = cur


def test_tunnel_filling_box_is_fixed_point(geom):
    (x0, y0), (x1, y1) = geom.tunnel_min, geom.tunnel_max
    once = reproject_box3(geom, Box3.from_corners((x0, y0, 20.0), (x1, y1, 120.0)))
    twice = lift_and_reproject(geom, once)
    for a, b in zip(once, twice):
        np.testing.assert_allclose(a.corners(), b.corners(), atol=1e-6)


def test_reproject_outside_fan(geom):
    with pytest.raises((ProjectionError, DegenerateError)):
        reproject_box3(geom, Box3(0, -600, 10, 10, 10, 10))
