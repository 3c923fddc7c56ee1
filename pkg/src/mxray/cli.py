"""``mxray`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from mxray import defaults
from mxray.anchors import (
    AnchorSet,
    ClusterConfig,
    avg_best_iou_centered,
    avg_best_iou_grid,
    run_kmeans,
    standard_anchors_3d,
)
from mxray.annotate3d import ViewAnnotation, gen_box3, reproject_box3
from mxray.boxes import Box3, convert_threshold_2d_to_3d, nms_3d, shift_for_threshold
from mxray.errors import ConfigError, MXError
from mxray.evaluation import Detection, EvalConfig, GroundTruth, evaluate_run, pr_curves_csv
from mxray.formats import (
    Ann2,
    Ann3,
    RecordingAnnotations,
    load_annotations,
    load_json,
    load_tensor,
    save_annotations,
    save_tensor,
)
from mxray.geometry import ScannerGeometry, VoxelGrid, default_geometry
from mxray.mv_pooling import (
    FeatureVolume,
    SparseWeights,
    ViewMask,
    compute_weights,
    pool_avg,
    pool_max,
    roi_pool_3d,
)
from mxray.synth import SceneSpec, bin_image, gen_recording

log = logging.getLogger("mxray")


class UsageError(Exception):
    pass


def _apply_thread_cap() -> None:
    cap = os.environ.get("MX_THREADS")
    if not cap:
        return
    import numba

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip the TBB probe; the kernels here are serial, the cap is for any parallel backend
        numba.config.THREADING_LAYER = "workqueue"
    try:
        n = int(cap)
    except ValueError as exc:
        raise UsageError(f"MX_THREADS must be an integer, got {cap!r}") from exc
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def _geometry(path: Optional[str]) -> ScannerGeometry:
    return ScannerGeometry.load(path) if path else default_geometry()


def _grid(path: Optional[str], geom: ScannerGeometry) -> VoxelGrid:
    return VoxelGrid.from_dict(load_json(path)) if path else defaults.default_grid(geom)


def _write_json(obj, path: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_gen(args) -> int:
    geom = _geometry(args.geometry)
    grid = _grid(args.grid, geom)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    geom.save(out / "geometry.json")
    (out / "grid.json").write_text(json.dumps(grid.to_dict(), indent=2) + "\n")
    seeds = np.random.SeedSequence(args.seed).generate_state(args.n_recordings)
    records = []
    for r in range(args.n_recordings):
        rid = f"rec{r:04d}"
        spec = SceneSpec(n_objects=args.n_objects, seed=int(seeds[r]))
        rec = gen_recording(geom, grid, spec, recording_id=rid)
        rdir = out / rid
        rdir.mkdir(exist_ok=True)
        ann = RecordingAnnotations(rid)
        for v, img in enumerate(rec.images):
            save_tensor(rdir / f"view{v}.mxt", img)
            save_tensor(rdir / f"feat{v}.mxt", bin_image(img, args.bin_px))
            ann.views[v] = [
                Ann2(b, o.class_label, object_id=i) for i, (b, o) in enumerate(zip(rec.boxes2d[v], rec.objects))
            ]
        ann.boxes3d = [Ann3(o.box, o.class_label, object_id=i) for i, o in enumerate(rec.objects)]
        records.append(ann)
    save_annotations(out / "annotations.json", records)
    print(json.dumps({"recordings": len(records), "out": str(out)}))
    return 0


def cmd_compute_weights(args) -> int:
    geom = _geometry(args.geometry)
    grid = _grid(args.grid, geom)
    w = compute_weights(geom, grid, args.bin_px, n_ybins=args.n_ybins, renormalize_partial=args.renormalize_partial)
    w.save(args.out)
    print(json.dumps({
        "out": args.out,
        "views": [{"n_xbins": vw.n_xbins, "n_ybins": vw.n_ybins, "nnz_xsec": len(vw.xsec_w), "nnz_z": len(vw.z_w)}
                  for vw in w.views],
    }))
    return 0


def cmd_pool(args) -> int:
    weights = SparseWeights.load(args.weights)
    if len(args.features) != weights.n_views:
        raise UsageError(f"--features needs {weights.n_views} paths (use '-' for a disabled view)")
    mask = ViewMask.disabling(weights.n_views, args.disable_view or ())
    maps = [None if (p == "-" or not mask.active[v]) else load_tensor(p) for v, p in enumerate(args.features)]
    if args.variant == "avg":
        vol = pool_avg(weights, maps, mask)
    else:
        vol, _ = pool_max(weights, maps, mask)
    save_tensor(args.out, vol.data)
    print(json.dumps({"out": args.out, "shape": list(vol.data.shape), "active_views": mask.indices}))
    return 0


def cmd_roi_pool(args) -> int:
    data = load_tensor(args.volume)
    grid = VoxelGrid.from_dict(load_json(args.grid))
    out = roi_pool_3d(FeatureVolume(data, grid), Box3(*args.box), args.out_dims)
    save_tensor(args.out, out)
    print(json.dumps({"out": args.out, "shape": list(out.shape)}))
    return 0


def _read_boxes(path: str) -> tuple[np.ndarray, list[Box3]]:
    """Dims and (when centres are known) full boxes from a dims list, box list or annotation file."""
    data = load_json(path)
    if isinstance(data, dict) and "anchors" in data:
        data = data["anchors"]
    if isinstance(data, list) and data and isinstance(data[0], (list, tuple)):
        return np.asarray(data, dtype=float).reshape(-1, 3), []
    if isinstance(data, list) and data and "center" in data[0]:
        boxes = [Box3(*b["center"], *b["size"]) for b in data]
    else:
        boxes = [a.box for rec in load_annotations(path) for a in rec.boxes3d]
    return np.array([b.size for b in boxes], dtype=float).reshape(-1, 3), boxes


def cmd_cluster_anchors(args) -> int:
    dims, boxes = _read_boxes(args.dims)
    cfg = ClusterConfig(k=args.k, seed=args.seed, restarts=args.restarts, max_iters=args.max_iters)
    res = run_kmeans(dims, cfg)
    gts = boxes or [Box3(0.0, 0.0, 0.0, *d) for d in dims]
    report = {
        "anchors": [list(s) for s in res.anchors.sizes],
        "k": args.k,
        "seed": args.seed,
        "total_distance": res.total_distance,
        "avg_iou_centered": avg_best_iou_centered(res.anchors, gts),
        "avg_iou_grid": None,
    }
    if boxes:
        geom = _geometry(args.geometry)
        report["avg_iou_grid"] = avg_best_iou_grid(res.anchors, boxes, _grid(args.grid, geom), args.stride)
    _write_json(report, args.out)
    return 0


def cmd_anchor_quality(args) -> int:
    if args.standard:
        anchors = standard_anchors_3d()
    elif args.anchors:
        dims, _ = _read_boxes(args.anchors)
        anchors = AnchorSet(tuple(map(tuple, dims)))
    else:
        raise UsageError("give --anchors or --standard")
    _, boxes = _read_boxes(args.gts)
    if not boxes:
        raise UsageError("--gts must contain boxes with centres")
    geom = _geometry(args.geometry)
    grid = _grid(args.grid, geom)
    _write_json({
        "n_anchors": len(anchors),
        "n_gts": len(boxes),
        "avg_iou_centered": avg_best_iou_centered(anchors, boxes),
        "avg_iou_grid": avg_best_iou_grid(anchors, boxes, grid, args.stride),
    }, args.out)
    return 0


def cmd_gen3d(args) -> int:
    geom = _geometry(args.geometry)
    records = load_annotations(args.annotations)
    for rec in records:
        lifted = []
        for oid, members in sorted(rec.object_groups().items()):
            anns = [ViewAnnotation(v, a.box, a.class_label) for v, a in members]
            box = gen_box3(geom, anns)
            scores = [a.score for _, a in members if a.score is not None]
            score = float(np.mean(scores)) if scores else None
            lifted.append(Ann3(box, members[0][1].class_label, score, oid))
        rec.boxes3d = lifted
    save_annotations(args.out, records)
    print(json.dumps({"out": args.out, "recordings": len(records)}))
    return 0


def cmd_reproject(args) -> int:
    geom = _geometry(args.geometry)
    records = load_annotations(args.annotations)
    for rec in records:
        rec.views = {v: [] for v in range(geom.n_views)}
        for i, a in enumerate(rec.boxes3d):
            oid = a.object_id if a.object_id is not None else i
            for v, b in enumerate(reproject_box3(geom, a.box)):
                rec.views[v].append(Ann2(b, a.class_label, a.score, oid))
    save_annotations(args.out, records)
    print(json.dumps({"out": args.out, "recordings": len(records)}))
    return 0


def _eval_items(records: list[RecordingAnnotations], dim: str, with_scores: bool):
    items = []
    for rec in records:
        if dim == "3d":
            for a in rec.boxes3d:
                items.append((a, rec.recording_id))
        else:
            for v, boxes in sorted(rec.views.items()):
                for a in boxes:
                    items.append((a, f"{rec.recording_id}/view{v}"))
    if with_scores:
        return [Detection(a.box, a.class_label, 1.0 if a.score is None else a.score, u) for a, u in items]
    return [GroundTruth(a.box, a.class_label, u) for a, u in items]


def cmd_eval(args) -> int:
    cfg = EvalConfig.for_dim(args.dim, args.iou)
    gts = _eval_items(load_annotations(args.gt), cfg.dimensionality, False)
    dets = _eval_items(load_annotations(args.det), cfg.dimensionality, True)
    report = evaluate_run(dets, gts, cfg)
    curves = report.pop("pr_curves")
    if args.pr_csv:
        Path(args.pr_csv).write_text(pr_curves_csv(curves))
    if args.output_format == "csv":
        lines = ["class,ap,n_gt,n_det"]
        lines += [f"{c},{v['ap']!r},{v['n_gt']},{v['n_det']}" for c, v in report["classes"].items()]
        lines.append(f"mAP,{report['mAP']!r},,")
        text = "\n".join(lines) + "\n"
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    else:
        _write_json(report, args.out)
    return 0


def cmd_iou_convert(args) -> int:
    t3 = convert_threshold_2d_to_3d(args.t2)
    if args.output_format == "json":
        print(json.dumps({"t2": args.t2, "shift": shift_for_threshold(args.t2), "t3": t3}))
    else:
        print(f"{t3:.6f}")
    return 0


def cmd_nms3d(args) -> int:
    records = load_annotations(args.det)
    kept_total = 0
    for rec in records:
        boxes = [a.box for a in rec.boxes3d]
        scores = [1.0 if a.score is None else a.score for a in rec.boxes3d]
        keep = nms_3d(boxes, scores, args.iou)
        rec.boxes3d = [rec.boxes3d[i] for i in keep]
        kept_total += len(keep)
    if args.out:
        save_annotations(args.out, records)
    print(json.dumps({"kept": kept_total}))
    return 0


def cmd_bench(args) -> int:
    geom = _geometry(args.geometry)
    grid = defaults.default_grid(geom, tuple(args.grid_dims))
    rng = np.random.default_rng(args.seed)
    timings = {}
    t0 = time.perf_counter()
    w = compute_weights(geom, grid, args.bin_px)
    timings["compute_weights_s"] = time.perf_counter() - t0
    maps = [rng.standard_normal((args.channels, vw.n_ybins, vw.n_xbins)) for vw in w.views]
    pool_max(w, maps)  # JIT warm-up
    for name, fn in (("pool_avg_s", lambda: pool_avg(w, maps)), ("pool_max_s", lambda: pool_max(w, maps))):
        best = float("inf")
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        timings[name] = best
    timings.update(grid_dims=list(grid.dims), bin_px=args.bin_px, channels=args.channels,
                   nnz_xsec=[len(vw.xsec_w) for vw in w.views])
    _write_json(timings, None)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mxray", description="Multi-view X-ray detection geometry toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--output-format", choices=("json", "csv"), help="report format (default: json; plain number for iou-convert)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def geometry_opts(sp, grid=True):
        sp.add_argument("--geometry", help="geometry JSON (default: built-in illustrative layout)")
        if grid:
            sp.add_argument("--grid", help="voxel grid JSON (default: 96^3 over the tunnel)")

    s = sub.add_parser("synth-gen", help="generate synthetic recordings")
    geometry_opts(s)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=defaults.SEED)
    s.add_argument("--n-objects", type=int, default=1)
    s.add_argument("--n-recordings", type=int, default=1)
    s.add_argument("--bin-px", type=int, default=defaults.BIN_PX)
    s.set_defaults(func=cmd_synth_gen)

    s = sub.add_parser("compute-weights", help="build the beam-to-cell weight file")
    geometry_opts(s)
    s.add_argument("--bin-px", type=int, default=defaults.BIN_PX)
    s.add_argument("--n-ybins", type=int)
    s.add_argument("--renormalize-partial", action="store_true", default=defaults.RENORMALIZE_PARTIAL)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compute_weights)

    s = sub.add_parser("pool", help="multi-view pooling of per-view feature maps")
    s.add_argument("--weights", required=True)
    s.add_argument("--features", nargs="+", required=True, help="one MXT1 map per view, '-' to skip")
    s.add_argument("--variant", choices=("avg", "max"), default="avg")
    s.add_argument("--disable-view", type=int, action="append")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pool)

    s = sub.add_parser("roi-pool", help="3D RoI max pooling of a feature volume")
    s.add_argument("--volume", required=True)
    s.add_argument("--grid", required=True)
    s.add_argument("--box", type=float, nargs=6, required=True, metavar=("X", "Y", "Z", "W", "H", "D"))
    s.add_argument("--out-dims", type=int, nargs=3, default=list(defaults.ROI_OUT_DIMS))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_roi_pool)

    s = sub.add_parser("cluster-anchors", help="k-means anchors under the Jaccard distance")
    geometry_opts(s)
    s.add_argument("--dims", required=True, help="dims list, box list or annotation file")
    s.add_argument("--k", type=int, default=defaults.KMEANS_K)
    s.add_argument("--seed", type=int, default=defaults.SEED)
    s.add_argument("--restarts", type=int, default=defaults.KMEANS_RESTARTS)
    s.add_argument("--max-iters", type=int, default=defaults.KMEANS_MAX_ITERS)
    s.add_argument("--stride", type=float, nargs=3)
    s.add_argument("--out")
    s.set_defaults(func=cmd_cluster_anchors)

    s = sub.add_parser("anchor-quality", help="average best IoU, centred and grid-shifted")
    geometry_opts(s)
    s.add_argument("--anchors")
    s.add_argument("--standard", action="store_true", help="use the 21 hand-picked 3D anchors")
    s.add_argument("--gts", required=True)
    s.add_argument("--stride", type=float, nargs=3)
    s.add_argument("--out")
    s.set_defaults(func=cmd_anchor_quality)

    s = sub.add_parser("gen3d", help="lift per-view 2D annotations to 3D boxes")
    geometry_opts(s, grid=False)
    s.add_argument("--annotations", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen3d)

    s = sub.add_parser("reproject", help="project 3D boxes back to 2D views")
    geometry_opts(s, grid=False)
    s.add_argument("--annotations", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reproject)

    s = sub.add_parser("eval", help="VOC-2010 AP evaluation")
    s.add_argument("--dim", choices=("2d", "3d"), default="3d")
    s.add_argument("--gt", required=True)
    s.add_argument("--det", required=True)
    s.add_argument("--iou", type=float, help="IoU threshold (default 0.5 in 2D, 0.374 in 3D)")
    s.add_argument("--out")
    s.add_argument("--pr-csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("iou-convert", help="2D IoU threshold to the equally strict 3D threshold")
    s.add_argument("--t2", type=float, required=True)
    s.set_defaults(func=cmd_iou_convert)

    s = sub.add_parser("nms3d", help="greedy 3D non-maximum suppression per recording")
    s.add_argument("--det", required=True)
    s.add_argument("--iou", type=float, default=defaults.NMS_IOU)
    s.add_argument("--out")
    s.set_defaults(func=cmd_nms3d)

    s = sub.add_parser("bench", help="time weight construction and pooling")
    s.add_argument("--geometry")
    s.add_argument("--grid-dims", type=int, nargs=3, default=list(defaults.GRID_DIMS))
    s.add_argument("--bin-px", type=int, default=defaults.BIN_PX)
    s.add_argument("--channels", type=int, default=16)
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--seed", type=int, default=defaults.SEED)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        _apply_thread_cap()
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"mxray {args.command}: {exc}", file=sys.stderr)
        return 2
    except (MXError, OSError, ValueError, KeyError) as exc:
        print(f"mxray {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
