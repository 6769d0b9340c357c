"""Lane evaluation: unilateral Chamfer distance, bipartite lane matching,
precision/recall/F1, and dataset geometry statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .errors import EmptySet, RankDeficient
from .geometry import LanePolyline, fit_cubic, ordering_axis, polyline_resample

DEFAULT_RESAMPLE_SPACING = 0.5
DEFAULT_MATCH_THRESHOLD = 1.5
DEFAULT_CD_SPACING = 0.5


@dataclass
class MatchResult:
    pairs: list          # (pred index, gt index, mean pairwise distance)
    unmatched_pred: list
    unmatched_gt: list


@dataclass
class EvalReport:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    cd_3d: float = None
    cd_bev: float = None
    per_frame: list = field(default_factory=list)

    def to_dict(self):
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "cd_3d": self.cd_3d, "cd_bev": self.cd_bev, "per_frame": self.per_frame}


@dataclass
class StatsReport:
    xy_hist: np.ndarray
    xy_edges: tuple
    height_hist: np.ndarray
    height_edges: np.ndarray
    curvature_hist: np.ndarray
    curvature_edges: np.ndarray
    slope_hist: np.ndarray
    slope_edges: np.ndarray
    curvatures: np.ndarray
    slopes_deg: np.ndarray
    skipped_short_lanes: int = 0


def chamfer_unilateral(a, b, bev=False):
    """Mean distance from each point of a to its nearest neighbor in b.

    Asymmetric by construction; ``bev`` drops z before measuring.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptySet("chamfer distance needs two non-empty sets")
    if bev:
        a, b = a[:, :2], b[:, :2]
    d, _ = cKDTree(b).query(a)
    return float(d.mean())


def _resampled(lane, spacing):
    if len(lane) < 2:
        return lane.points
    return polyline_resample(lane, spacing).points


def _arc_interp(points, s_targets):
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return np.column_stack([np.interp(s_targets, s, points[:, k]) for k in range(3)]), s[-1]


def _aligned_cost(short, long_pts, spacing):
    # slide the shorter lane onto the longer one: anchor at the arc position
    # of the longer lane closest to the shorter lane's start
    fine = _resampled(LanePolyline(long_pts), spacing / 4) if long_pts.shape[0] >= 2 else long_pts
    seg = np.linalg.norm(np.diff(fine, axis=0), axis=1)
    s_fine = np.concatenate([[0.0], np.cumsum(seg)])
    s0 = s_fine[np.argmin(np.linalg.norm(fine - short[0], axis=1))]
    t = spacing * np.arange(short.shape[0])
    ref, total = _arc_interp(long_pts, s0 + t)
    keep = s0 + t <= total + 1e-9
    if not keep.any():
        return float("inf")
    return float(np.linalg.norm(short[keep] - ref[keep], axis=1).mean())


def lane_pair_cost(pred: LanePolyline, gt: LanePolyline, spacing=DEFAULT_RESAMPLE_SPACING):
    """Mean pointwise distance after arc-length alignment.

    The shorter lane is compared over its own extent, anchored at the nearest
    arc position on the longer lane; the better of the two directions is used
    so orientation conventions do not penalize.
    """
    p = _resampled(pred, spacing)
    g = _resampled(gt, spacing)
    short, long_pts = (p, g) if p.shape[0] <= g.shape[0] else (g, p)
    if short.shape[0] == 1 or long_pts.shape[0] == 1:
        d = np.linalg.norm(long_pts - short[0], axis=1) if short.shape[0] == 1 \
            else np.linalg.norm(short - long_pts[0], axis=1)
        return float(d.min()) if short.shape[0] == 1 else float(d.mean())
    fwd = _aligned_cost(short, long_pts, spacing)
    rev = _aligned_cost(short[::-1], long_pts, spacing)
    return min(fwd, rev)


def match_lanes(pred, gt, resample_spacing=DEFAULT_RESAMPLE_SPACING,
                match_threshold=DEFAULT_MATCH_THRESHOLD) -> MatchResult:
    """One-to-one minimum-cost assignment between predicted and gt lanes.

    Pairs whose mean distance exceeds the threshold are dissolved into the
    unmatched lists.
    """
    if resample_spacing <= 0:
        raise ValueError("resample_spacing must be > 0")
    if not pred or not gt:
        return MatchResult([], list(range(len(pred))), list(range(len(gt))))
    cost = np.zeros((len(pred), len(gt)))
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            cost[i, j] = lane_pair_cost(p, g, resample_spacing)
    rows, cols = linear_sum_assignment(cost)
    pairs, used_p, used_g = [], set(), set()
    for i, j in zip(rows, cols):
        if cost[i, j] <= match_threshold:
            pairs.append((int(i), int(j), float(cost[i, j])))
            used_p.add(int(i))
            used_g.add(int(j))
    return MatchResult(pairs=pairs,
                       unmatched_pred=[i for i in range(len(pred)) if i not in used_p],
                       unmatched_gt=[j for j in range(len(gt)) if j not in used_g])


def prf1(match: MatchResult) -> EvalReport:
    """Precision/recall/F1 from a match result; zero denominators give 0."""
    tp = len(match.pairs)
    fp = len(match.unmatched_pred)
    fn = len(match.unmatched_gt)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return EvalReport(precision=p, recall=r, f1=f1)


def evaluate_lanes(pred, gt, resample_spacing=DEFAULT_RESAMPLE_SPACING,
                   match_threshold=DEFAULT_MATCH_THRESHOLD,
                   cd_spacing=DEFAULT_CD_SPACING) -> EvalReport:
    """Match lanes, score P/R/F1, and average unilateral CD over matched pairs."""
    match = match_lanes(pred, gt, resample_spacing, match_threshold)
    report = prf1(match)
    if match.pairs:
        cd3, cdb = [], []
        for i, j, _ in match.pairs:
            # measure from resampled prediction points to the gt lane's own
            # (typically dense) points, keeping the CD unilateral
            p = _resampled(pred[i], cd_spacing)
            g = gt[j].points
            cd3.append(chamfer_unilateral(p, g))
            cdb.append(chamfer_unilateral(p, g, bev=True))
        report.cd_3d = float(np.mean(cd3))
        report.cd_bev = float(np.mean(cdb))
    return report


def _lane_curvature(lane: LanePolyline):
    axis = ordering_axis(lane.points)
    perp = np.array([-axis[1], axis[0]])
    u = lane.points[:, :2] @ axis
    lat = lane.points[:, :2] @ perp
    return fit_cubic(np.column_stack([u, lat])).a


def _lane_slope_deg(lane: LanePolyline):
    first, last = lane.points[0], lane.points[-1]
    run = float(np.linalg.norm(np.diff(lane.points[:, :2], axis=0), axis=1).sum())
    if run < 1e-12:
        return 0.0
    return float(np.degrees(np.arctan2(last[2] - first[2], run)))


def _histogram(values, bins):
    """np.histogram with a widened range when the data is (near-)constant."""
    if values.size == 0:
        return np.zeros(bins, int), np.linspace(0, 1, bins + 1)
    lo, hi = float(values.min()), float(values.max())
    if not hi - lo > bins * np.spacing(max(abs(lo), abs(hi))):
        pad = 0.5 if hi == lo == 0 else max(abs(lo), abs(hi)) * 0.5
        return np.histogram(values, bins=bins, range=(lo - pad, hi + pad))
    return np.histogram(values, bins=bins)


def dataset_stats(lanes, xy_bins=(96, 40), xy_range=((-48, 48), (-20, 20)),
                  height_bins=40, curvature_bins=40, slope_bins=40) -> StatsReport:
    """Histograms of lane point positions, heights, curvatures, and slopes.

    Lanes with fewer than four points are skipped for curvature and counted.
    """
    if not lanes:
        raise EmptySet("dataset_stats needs at least one lane")
    pts = np.vstack([lane.points for lane in lanes])
    xy_hist, xe, ye = np.histogram2d(pts[:, 0], pts[:, 1], bins=xy_bins, range=xy_range)
    height_hist, h_edges = _histogram(pts[:, 2], height_bins)

    curvatures, skipped = [], 0
    for lane in lanes:
        try:
            curvatures.append(_lane_curvature(lane))
        except RankDeficient:
            skipped += 1
    curvatures = np.array(curvatures)
    slopes = np.array([_lane_slope_deg(lane) for lane in lanes])
    c_hist, c_edges = _histogram(curvatures, curvature_bins)
    s_hist, s_edges = _histogram(slopes, slope_bins)
    return StatsReport(xy_hist=xy_hist, xy_edges=(xe, ye),
                       height_hist=height_hist, height_edges=h_edges,
                       curvature_hist=c_hist, curvature_edges=c_edges,
                       slope_hist=s_hist, slope_edges=s_edges,
                       curvatures=curvatures, slopes_deg=slopes,
                       skipped_short_lanes=skipped)
