"""Automatic lane annotation: plane validation, skeletonization, ball-query
expansion, and cubic smoothing, composed into a per-lane pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (DegenerateLane, DegenerateNeighborhood, EmptyLane,
                     InsufficientPoints, LaneForgeError, RankDeficient)
from .geometry import (CubicCurve, LanePolyline, PointCloud, eval_cubic,
                       fit_cubic, order_lane_points, ordering_axis,
                       polyline_resample)

FLAG_ACCEPTED = "accepted"
FLAG_RECALIBRATED = "recalibrated"
FLAG_UNVALIDATED = "unvalidated"


# neighborhood size above which RANSAC consensus ranking subsamples
_CONSENSUS_CAP = 512


@dataclass(frozen=True)
class Plane:
    """Plane n.p = offset with unit, upward-facing normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        if n[2] <= 0:
            raise ValueError("plane normal must point upward")
        object.__setattr__(self, "normal", n)

    def distance(self, pts):
        """Absolute perpendicular distance of points to the plane."""
        pts = np.asarray(pts, dtype=np.float64)
        return np.abs(pts @ self.normal - self.offset)

    def solve_z(self, x, y):
        """Height on the plane at fixed (x, y)."""
        n = self.normal
        return (self.offset - n[0] * x - n[1] * y) / n[2]


@dataclass
class PipelineConfig:
    ransac_validate_threshold: float = 0.01
    ransac_inlier_threshold: float = 0.02
    ransac_iterations: int = 200
    neighborhood_radius: float = 2.0
    skeleton_spacing: float = 0.5
    ball_radius: float = 0.3
    intensity_percentile: float = 90.0
    coplanarity_tol: float = 0.03
    interp_spacing: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("ransac_validate_threshold", "ransac_inlier_threshold",
                     "neighborhood_radius", "skeleton_spacing", "ball_radius",
                     "coplanarity_tol", "interp_spacing"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 <= self.intensity_percentile <= 100.0:
            raise ValueError("intensity_percentile must be in [0, 100]")


def _plane_from_points(pts):
    """Least-squares plane through a point set, oriented upward."""
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    evals, evecs = np.linalg.eigh(centered.T @ centered)
    if evals[1] < 1e-24 * max(1.0, evals[2]):
        raise DegenerateNeighborhood("neighborhood points are collinear")
    normal = evecs[:, 0]
    if normal[2] < 0:
        normal = -normal
    if abs(normal[2]) < 1e-12:
        raise DegenerateNeighborhood("neighborhood plane is vertical")
    return Plane(normal / np.linalg.norm(normal), float(normal @ centroid))


def fit_local_ground_plane(cloud: PointCloud, center, radius: float,
                           cfg: PipelineConfig, stream_key: int = 0,
                           xy_tree=None) -> Plane:
    """RANSAC consensus plane over the cylindrical xy-neighborhood of center.

    The random stream is counter-based on (cfg.seed, stream_key) so
    per-point fits are reproducible regardless of execution order.
    ``xy_tree`` may carry a prebuilt cKDTree over cloud.xyz[:, :2].
    """
    center = np.asarray(center, dtype=np.float64).reshape(3)
    if xy_tree is not None:
        idx = np.sort(xy_tree.query_ball_point(center[:2], radius))
        nbhd = cloud.xyz[idx.astype(int)] if len(idx) else cloud.xyz[:0]
    else:
        d_xy = np.linalg.norm(cloud.xyz[:, :2] - center[:2], axis=1)
        nbhd = cloud.xyz[d_xy <= radius]
    n = nbhd.shape[0]
    if n < 3:
        raise InsufficientPoints(f"plane fit needs >= 3 points, got {n}")

    rng = np.random.Generator(np.random.Philox(key=[cfg.seed, stream_key]))
    its = cfg.ransac_iterations
    idx = rng.integers(0, n, (its, 3))
    p0, p1, p2 = nbhd[idx[:, 0]], nbhd[idx[:, 1]], nbhd[idx[:, 2]]
    u, v = p1 - p0, p2 - p0
    normals = np.column_stack([u[:, 1] * v[:, 2] - u[:, 2] * v[:, 1],
                               u[:, 2] * v[:, 0] - u[:, 0] * v[:, 2],
                               u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]])
    norms = np.sqrt((normals * normals).sum(axis=1))
    ok = norms > 1e-12
    if not ok.any():
        # all samples degenerate; fall back to a direct least-squares fit
        return _plane_from_points(nbhd)
    if not ok.all():
        normals, norms, p0 = normals[ok], norms[ok], p0[ok]
    normals /= norms[:, None]
    # rank hypotheses on a fixed-stride subsample when the neighborhood is
    # large; only the winning plane is scored against every point
    if n > _CONSENSUS_CAP:
        sample = nbhd[np.linspace(0, n - 1, _CONSENSUS_CAP).astype(int)]
    else:
        sample = nbhd
    d = normals @ sample.T
    d -= np.einsum("ij,ij->i", p0, normals)[:, None]
    np.abs(d, out=d)
    thr = cfg.ransac_inlier_threshold
    counts = np.count_nonzero(d <= thr, axis=1)
    best = int(np.argmax(counts))
    d_best = np.abs(nbhd @ normals[best] - p0[best] @ normals[best])
    inliers = nbhd[d_best <= thr]
    if inliers.shape[0] < 3:
        raise InsufficientPoints("consensus set too small")
    return _plane_from_points(inliers)


def validate_and_recalibrate(lane: LanePolyline, cloud: PointCloud,
                             cfg: PipelineConfig, stream_base: int = 0,
                             xy_tree=None):
    """Check each lane point against its local ground plane.

    Points within the validate threshold are accepted unchanged; others get
    their z replaced by the plane height at their fixed (x, y). Points whose
    plane fit fails are flagged unvalidated and left untouched.
    """
    pts = lane.points.copy()
    flags = []
    for i, p in enumerate(lane.points):
        try:
            plane = fit_local_ground_plane(cloud, p, cfg.neighborhood_radius, cfg,
                                           stream_key=stream_base + i, xy_tree=xy_tree)
        except (InsufficientPoints, DegenerateNeighborhood):
            flags.append(FLAG_UNVALIDATED)
            continue
        if plane.distance(p[None, :])[0] <= cfg.ransac_validate_threshold:
            flags.append(FLAG_ACCEPTED)
        else:
            pts[i, 2] = plane.solve_z(p[0], p[1])
            flags.append(FLAG_RECALIBRATED)
    return LanePolyline(pts, instance_id=lane.instance_id), flags


def skeletonize_lane(lane: LanePolyline, cfg: PipelineConfig) -> LanePolyline:
    """Order lane points along the lane axis and resample equidistantly."""
    if len(lane) < 2:
        raise DegenerateLane("skeletonization needs at least two points")
    ordered = order_lane_points(lane.points)
    # drop coincident neighbors introduced by ordering
    seps = np.linalg.norm(np.diff(ordered, axis=0), axis=1)
    keep = np.concatenate([[True], seps > 1e-9])
    ordered = ordered[keep]
    if ordered.shape[0] < 2:
        raise DegenerateLane("lane collapses to a single point")
    return polyline_resample(LanePolyline(ordered, instance_id=lane.instance_id),
                             cfg.skeleton_spacing)


def ball_query_expand(skeleton: LanePolyline, cloud: PointCloud, planes,
                      cfg: PipelineConfig, trees=None) -> np.ndarray:
    """Collect cloud point indices that look like lane paint near the skeleton.

    A point qualifies if, for some skeletal point s: it lies within
    ball_radius of s, its intensity reaches the configured percentile of the
    ground (plane-inlier) intensities around s, and it is coplanar with the
    ground plane at s. Returns ascending unique indices into the cloud.
    """
    if len(skeleton) == 0:
        raise EmptyLane("empty skeleton")
    if len(planes) != len(skeleton):
        raise ValueError("one plane per skeletal point required")
    tree3, tree2 = trees if trees is not None else (cKDTree(cloud.xyz),
                                                    cKDTree(cloud.xyz[:, :2]))
    selected = set()
    for s, plane in zip(skeleton.points, planes):
        if plane is None:
            continue
        ball = tree3.query_ball_point(s, cfg.ball_radius)
        if not ball:
            continue
        nbhd = tree2.query_ball_point(s[:2], cfg.neighborhood_radius)
        nbhd = np.asarray(nbhd, dtype=int)
        ground = nbhd[plane.distance(cloud.xyz[nbhd]) <= cfg.ransac_inlier_threshold]
        if ground.size == 0:
            continue
        thresh = np.percentile(cloud.intensity[ground], cfg.intensity_percentile)
        ball = np.asarray(ball, dtype=int)
        good = ball[(cloud.intensity[ball] >= thresh)
                    & (plane.distance(cloud.xyz[ball]) <= cfg.coplanarity_tol)]
        selected.update(good.tolist())
    return np.array(sorted(selected), dtype=int)


def interpolate_lane(points, cfg: PipelineConfig, instance_id: int = 0):
    """Fit lateral and vertical cubics over the lane axis and resample.

    Returns the smoothed polyline plus the two fitted curves.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 4:
        raise RankDeficient("cubic smoothing needs >= 4 points")
    axis = ordering_axis(pts)
    perp = np.array([-axis[1], axis[0]])
    u = pts[:, :2] @ axis
    lat = pts[:, :2] @ perp
    curve_lat = fit_cubic(np.column_stack([u, lat]), axis="principal-xy", dimension="lateral")
    curve_vert = fit_cubic(np.column_stack([u, pts[:, 2]]), axis="principal-xy", dimension="z")
    u_min, u_max = float(u.min()), float(u.max())
    grid = np.arange(u_min, u_max + 1e-9, cfg.interp_spacing)
    if u_max - grid[-1] > 1e-9:
        grid = np.append(grid, u_max)
    xy = np.outer(grid, axis) + np.outer(eval_cubic(curve_lat, grid), perp)
    out = np.column_stack([xy, eval_cubic(curve_vert, grid)])
    return LanePolyline(out, instance_id=instance_id), (curve_lat, curve_vert)


def run_pipeline(cloud: PointCloud, manual_lanes, cfg: PipelineConfig):
    """Run the full annotation pipeline over every manual lane.

    Per-lane failures are recorded in the report and do not stop the run.
    Returns (auto_lanes, report).
    """
    out_lanes = []
    report = {"lanes": [], "failed": []}
    tree3 = cKDTree(cloud.xyz)
    tree2 = cKDTree(cloud.xyz[:, :2])
    for lane_no, lane in enumerate(manual_lanes):
        entry = {"instance_id": lane.instance_id, "input_points": len(lane)}
        stream_base = (lane.instance_id + 1) * 1_000_000
        try:
            validated, flags = validate_and_recalibrate(lane, cloud, cfg,
                                                        stream_base=stream_base,
                                                        xy_tree=tree2)
            entry["recalibrated"] = flags.count(FLAG_RECALIBRATED)
            entry["unvalidated"] = flags.count(FLAG_UNVALIDATED)
            skeleton = skeletonize_lane(validated, cfg)
            planes = []
            for j, s in enumerate(skeleton.points):
                try:
                    planes.append(fit_local_ground_plane(
                        cloud, s, cfg.neighborhood_radius, cfg,
                        stream_key=stream_base + 500_000 + j, xy_tree=tree2))
                except (InsufficientPoints, DegenerateNeighborhood):
                    planes.append(None)
            idx = ball_query_expand(skeleton, cloud, planes, cfg, trees=(tree3, tree2))
            entry["expanded_points"] = int(idx.size)
            smooth, (curve_lat, curve_vert) = interpolate_lane(
                cloud.xyz[idx], cfg, instance_id=lane.instance_id)
            entry["lateral_curve"] = [curve_lat.a, curve_lat.b, curve_lat.c, curve_lat.d]
            entry["vertical_curve"] = [curve_vert.a, curve_vert.b, curve_vert.c, curve_vert.d]
            entry["output_points"] = len(smooth)
            out_lanes.append(smooth)
            report["lanes"].append(entry)
        except LaneForgeError as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
            report["failed"].append(entry)
    return out_lanes, report
