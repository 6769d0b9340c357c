"""Core lane geometry: point containers, ordering, resampling, cubic fits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLane, EmptyLane, RankDeficient

# Consecutive polyline points closer than this are considered coincident.
MIN_POINT_SEPARATION = 1e-9


@dataclass(frozen=True)
class Point3I:
    """Single LiDAR return: position in meters, reflectance in [0, 1]."""

    x: float
    y: float
    z: float
    intensity: float = 0.0


@dataclass
class PointCloud:
    """Unordered point set backed by dense arrays.

    ``xyz`` is (N, 3) float64, ``intensity`` is (N,) float64 in [0, 1].
    """

    xyz: np.ndarray
    intensity: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if self.intensity.shape[0] != self.xyz.shape[0]:
            raise ValueError("intensity length must match point count")
        if self.xyz.size and not np.all(np.isfinite(self.xyz)):
            raise ValueError("point coordinates must be finite")

    def __len__(self):
        return self.xyz.shape[0]

    @property
    def points(self):
        return [Point3I(*p, i) for p, i in zip(self.xyz, self.intensity)]

    @classmethod
    def from_points(cls, points, frame_id=""):
        pts = list(points)
        if not pts:
            return cls(np.zeros((0, 3)), np.zeros(0), frame_id)
        xyz = np.array([[p.x, p.y, p.z] for p in pts], dtype=np.float64)
        inten = np.array([p.intensity for p in pts], dtype=np.float64)
        return cls(xyz, inten, frame_id)


@dataclass
class LanePolyline:
    """Ordered 3D lane points with an instance id."""

    points: np.ndarray
    instance_id: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.points.shape[0] < 1:
            raise ValueError("a lane needs at least one point")
        if self.instance_id < 0:
            raise ValueError("instance_id must be non-negative")
        seps = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        if seps.size and seps.min() <= MIN_POINT_SEPARATION:
            raise ValueError("consecutive lane points must be distinct")

    def __len__(self):
        return self.points.shape[0]

    def arc_length(self):
        if len(self) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass(frozen=True)
class CubicCurve:
    """Coefficients of v = a*u^3 + b*u^2 + c*u + d.

    ``axis`` records the parametrization (e.g. "x" or "principal-xy"),
    ``dimension`` the coordinate the curve predicts.
    """

    a: float
    b: float
    c: float
    d: float
    axis: str = "x"
    dimension: str = "y"

    def __post_init__(self):
        if not all(np.isfinite([self.a, self.b, self.c, self.d])):
            raise ValueError("cubic coefficients must be finite")


def ordering_axis(points):
    """Unit xy direction along which a lane is ordered.

    +x when the x-extent is at least the y-extent, otherwise the first
    principal component of the xy coordinates, flipped so its x-projection
    (or y-projection for near-vertical axes) is positive.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise EmptyLane("cannot derive an ordering axis from zero points")
    ext = pts[:, :2].max(axis=0) - pts[:, :2].min(axis=0) if pts.shape[0] > 1 else np.zeros(2)
    if ext[0] >= ext[1]:
        return np.array([1.0, 0.0])
    xy = pts[:, :2] - pts[:, :2].mean(axis=0)
    _, _, vt = np.linalg.svd(xy, full_matrices=False)
    axis = vt[0]
    # orient deterministically: positive x-projection, falling back to +y
    if abs(axis[0]) > 1e-12:
        axis = axis * np.sign(axis[0])
    else:
        axis = axis * np.sign(axis[1])
    return axis / np.linalg.norm(axis)


def order_lane_points(points):
    """Sort lane points monotonically along the lane's ordering axis.

    Ties on the ordering key break by y then z so the result is a
    deterministic permutation of the input.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise EmptyLane("no points to order")
    if not np.all(np.isfinite(pts)):
        raise ValueError("lane points must be finite")
    axis = ordering_axis(pts)
    key = pts[:, :2] @ axis
    order = np.lexsort((pts[:, 2], pts[:, 1], key))
    return pts[order]


def polyline_resample(lane: LanePolyline, spacing: float) -> LanePolyline:
    """Resample a polyline at fixed arc-length steps along its links.

    Output points lie on the input polyline; the first and last input
    points are always kept, so the final step may be shorter.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if len(lane) < 2:
        raise DegenerateLane("resampling needs at least two points")
    pts = lane.points
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    targets = np.arange(0.0, total, spacing)
    if total - targets[-1] > MIN_POINT_SEPARATION:
        targets = np.append(targets, total)
    else:
        targets[-1] = total
    out = np.column_stack([np.interp(targets, s, pts[:, k]) for k in range(3)])
    return LanePolyline(out, instance_id=lane.instance_id)


def fit_cubic(samples, axis="x", dimension="y") -> CubicCurve:
    """Least-squares cubic through (u, v) samples.

    Needs at least four distinct abscissae; raises RankDeficient otherwise.
    """
    arr = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    u, v = arr[:, 0], arr[:, 1]
    if np.unique(u).size < 4:
        raise RankDeficient("cubic fit needs >= 4 distinct abscissae")
    # center u for conditioning, then shift coefficients back
    u0 = u.mean()
    vand = np.vander(u - u0, 4)
    coef, *_ = np.linalg.lstsq(vand, v, rcond=None)
    a, b, c, d = coef
    # expand a(u-u0)^3 + b(u-u0)^2 + c(u-u0) + d into powers of u
    aa = a
    bb = -3 * a * u0 + b
    cc = 3 * a * u0**2 - 2 * b * u0 + c
    dd = -a * u0**3 + b * u0**2 - c * u0 + d
    return CubicCurve(float(aa), float(bb), float(cc), float(dd), axis=axis, dimension=dimension)


def eval_cubic(curve: CubicCurve, u):
    """Evaluate a*u^3 + b*u^2 + c*u + d (vectorized over u)."""
    u = np.asarray(u, dtype=np.float64)
    return ((curve.a * u + curve.b) * u + curve.c) * u + curve.d
