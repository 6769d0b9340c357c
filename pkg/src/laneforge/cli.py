"""Command-line front end: scene generation, annotation, BEV dumps,
evaluation, and dataset statistics."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import laneio, metrics, rasterize
from .annotate import run_pipeline
from .errors import LaneForgeError
from .scene import generate_scene

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


def _echo_config(cfg_dict):
    print(json.dumps({"resolved_config": cfg_dict}, indent=1))


def _workers(args):
    env = os.environ.get("LANEFORGE_THREADS")
    if env is not None:
        return max(1, int(env))
    if args.workers is not None:
        return max(1, args.workers)
    return os.cpu_count() or 1


def _cmd_gen(args):
    cfg = laneio.read_run_config(args.config) if args.config else laneio.RunConfig()
    _echo_config(cfg.to_dict())
    scene = generate_scene(cfg.scene)
    laneio.write_cloud(scene.cloud, args.out_cloud)
    sparse = laneio.lane_file_from_polylines(scene.cloud.frame_id, scene.gt_sparse_lanes,
                                             source="manual")
    laneio.write_lanes(sparse, args.out_lanes)
    if args.out_dense_lanes:
        dense = laneio.lane_file_from_polylines(scene.cloud.frame_id, scene.gt_dense_lanes,
                                                source="manual")
        laneio.write_lanes(dense, args.out_dense_lanes)
    return EXIT_OK


def _cmd_annotate(args):
    cfg = laneio.read_run_config(args.config) if args.config else laneio.RunConfig()
    _echo_config(cfg.to_dict())
    cloud = laneio.read_cloud(args.cloud)
    lane_file = laneio.read_lanes(args.lanes)
    lanes = [rec.to_polyline() for rec in lane_file.lanes]
    out_lanes, report = run_pipeline(cloud, lanes, cfg.pipeline)
    out = laneio.lane_file_from_polylines(lane_file.frame_id, out_lanes, source="auto")
    laneio.write_lanes(out, args.out)
    if args.report:
        laneio.write_json_report(report, args.report)
    return EXIT_OK


def _cmd_bev(args):
    roi = tuple(args.roi)
    _echo_config({"roi": list(roi), "res": args.res})
    cloud = laneio.read_cloud(args.cloud)
    grid = rasterize.pillarize(cloud, roi=roi, resolution=args.res)
    laneio.write_bev_pgm(grid, args.out)
    if args.stats:
        laneio.write_json_report(laneio.bev_stats_payload(grid), args.stats)
    return EXIT_OK


def _cmd_eval(args):
    _echo_config({"pred": args.pred, "gt": args.gt, "tau": args.tau,
                  "resample_spacing": args.resample_spacing,
                  "cd_spacing": args.cd_spacing})
    pred_file = laneio.read_lanes(args.pred)
    gt_file = laneio.read_lanes(args.gt)
    pred = [rec.to_polyline() for rec in pred_file.lanes]
    gt = [rec.to_polyline() for rec in gt_file.lanes]
    report = metrics.evaluate_lanes(pred, gt, resample_spacing=args.resample_spacing,
                                    match_threshold=args.tau, cd_spacing=args.cd_spacing)
    report.per_frame.append({"frame_id": gt_file.frame_id,
                             "pred_lanes": len(pred), "gt_lanes": len(gt)})
    laneio.write_json_report(report.to_dict(), args.out)
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def _cmd_stats(args):
    _echo_config({"lanes": args.lanes})
    with ThreadPoolExecutor(max_workers=_workers(args)) as pool:
        files = list(pool.map(laneio.read_lanes, args.lanes))
    lanes = [rec.to_polyline() for f in files for rec in f.lanes]
    report = metrics.dataset_stats(lanes)
    base, _ = os.path.splitext(args.out)
    payload = {
        "lane_count": len(lanes),
        "point_count": int(report.xy_hist.sum()),
        "skipped_short_lanes": report.skipped_short_lanes,
        "curvature_a": report.curvatures.tolist(),
        "slope_deg": report.slopes_deg.tolist(),
        "histograms": {
            "height_csv": base + "_height.csv",
            "curvature_csv": base + "_curvature.csv",
            "slope_csv": base + "_slope.csv",
        },
    }
    laneio.write_json_report(payload, args.out)
    laneio.write_histogram_csv(report.height_hist, report.height_edges, base + "_height.csv")
    laneio.write_histogram_csv(report.curvature_hist, report.curvature_edges,
                               base + "_curvature.csv")
    laneio.write_histogram_csv(report.slope_hist, report.slope_edges, base + "_slope.csv")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    parser = _Parser(prog="laneforge",
                     description="LiDAR lane-geometry toolkit command line")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker threads (default: cpu count; "
                             "LANEFORGE_THREADS overrides)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene")
    p.add_argument("--config", help="run-config JSON")
    p.add_argument("--out-cloud", required=True)
    p.add_argument("--out-lanes", required=True, help="sparse manual-style lanes")
    p.add_argument("--out-dense-lanes", help="dense ground-truth lanes")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("annotate", help="run the automatic annotation pipeline")
    p.add_argument("--cloud", required=True)
    p.add_argument("--lanes", required=True)
    p.add_argument("--config", help="run-config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="per-stage pipeline report JSON")
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("bev", help="pillarize a cloud and dump the grid")
    p.add_argument("--cloud", required=True)
    p.add_argument("--roi", type=float, nargs=4, default=list(rasterize.DEFAULT_ROI),
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--res", type=float, default=rasterize.BEV_RESOLUTION)
    p.add_argument("--out", required=True, help="portable-graymap text dump")
    p.add_argument("--stats", help="JSON stats payload")
    p.set_defaults(func=_cmd_bev)

    p = sub.add_parser("eval", help="evaluate predicted lanes against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tau", type=float, default=metrics.DEFAULT_MATCH_THRESHOLD,
                   help="lane match threshold in meters")
    p.add_argument("--resample-spacing", type=float,
                   default=metrics.DEFAULT_RESAMPLE_SPACING)
    p.add_argument("--cd-spacing", type=float, default=metrics.DEFAULT_CD_SPACING)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("stats", help="dataset statistics over lane files")
    p.add_argument("--lanes", required=True, nargs="+")
    p.add_argument("--out", required=True, help="JSON report; CSVs written alongside")
    p.set_defaults(func=_cmd_stats)
    return parser


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0,) else EXIT_OK
    try:
        return args.func(args)
    except LaneForgeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
