"""Seeded synthetic surround-view LiDAR scene generator.

Stands in for a real recorded dataset: produces a ground surface, painted
lane stripes with elevated intensity, and curb/shrub distractor clusters,
together with dense and sparse lane ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig
from .geometry import LanePolyline, PointCloud, polyline_resample

CLASS_GROUND = 0
CLASS_LANE_PAINT = 1
CLASS_DISTRACTOR = 2

_INTENSITY_STD = 0.05
_DENSE_SPACING = 0.1
_LANE_PITCH = 3.5  # lateral separation between adjacent lanes, meters


@dataclass
class SceneConfig:
    seed: int = 0
    sensor_height: float = 2.0
    ground_slope: float = 0.0
    lane_count: int = 4
    lane_curvature_a: float = 2e-5
    lane_width: float = 0.15
    point_density: float = 4.0
    noise_sigma: float = 0.01
    lane_intensity_mean: float = 0.8
    ground_intensity_mean: float = 0.2
    distractor_intensity_mean: float = 0.7
    roi: tuple = (-48.0, 48.0, -20.0, 20.0)
    annotation_spacing: float = 8.0
    annotation_jitter: float = 0.01
    distractor_clusters: int = None  # None picks a count from lane_count

    def __post_init__(self):
        x_min, x_max, y_min, y_max = self.roi
        if x_max <= x_min or y_max <= y_min:
            raise InvalidConfig("roi must have positive extent")
        if self.point_density <= 0:
            raise InvalidConfig("point_density must be > 0")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise_sigma must be >= 0")
        for name in ("lane_intensity_mean", "ground_intensity_mean", "distractor_intensity_mean"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must be in [0, 1]")
        if self.lane_count < 0:
            raise InvalidConfig("lane_count must be >= 0")
        if self.annotation_spacing <= 0:
            raise InvalidConfig("annotation_spacing must be > 0")
        if self.distractor_clusters is not None and self.distractor_clusters < 0:
            raise InvalidConfig("distractor_clusters must be >= 0")


@dataclass
class SyntheticScene:
    cloud: PointCloud
    gt_dense_lanes: list
    gt_sparse_lanes: list
    point_class: np.ndarray
    annotation_z_offsets: list = field(default_factory=list)
    config: SceneConfig = None

    def ground_z(self, x):
        """True ground surface height at abscissa x."""
        return self.config.ground_slope * np.asarray(x) - self.config.sensor_height


def _clamped_normal(rng, mean, std, n, lo=0.0, hi=1.0):
    return np.clip(rng.normal(mean, std, n), lo, hi)


def _lane_lateral_offsets(count):
    return (np.arange(count) - (count - 1) / 2.0) * _LANE_PITCH


def _surface_z(cfg, x):
    return cfg.ground_slope * x - cfg.sensor_height


def _sample_ground(cfg, rng, n):
    """Ring-style sampling: azimuth uniform, range log-uniform (~1/r density)."""
    x_min, x_max, y_min, y_max = cfg.roi
    r_min = 0.5
    r_max = float(np.hypot(max(abs(x_min), abs(x_max)), max(abs(y_min), abs(y_max))))
    xs, ys = [], []
    remaining = n
    for _ in range(1000):
        if remaining <= 0:
            break
        m = max(64, 2 * remaining)
        theta = rng.uniform(0.0, 2 * np.pi, m)
        r = r_min * (r_max / r_min) ** rng.uniform(0.0, 1.0, m)
        x, y = r * np.cos(theta), r * np.sin(theta)
        keep = (x >= x_min) & (x <= x_max) & (y >= y_min) & (y <= y_max)
        x, y = x[keep][:remaining], y[keep][:remaining]
        xs.append(x)
        ys.append(y)
        remaining -= x.size
    x = np.concatenate(xs) if xs else np.zeros(0)
    y = np.concatenate(ys) if ys else np.zeros(0)
    z = _surface_z(cfg, x)
    if cfg.noise_sigma > 0:
        z = z + rng.normal(0.0, cfg.noise_sigma, x.size)
    return np.column_stack([x, y, z])


def _lane_y(cfg, offset, x):
    return cfg.lane_curvature_a * x**3 + offset


def _dense_lane(cfg, offset, instance_id):
    x_min, x_max, y_min, y_max = cfg.roi
    x = np.arange(x_min, x_max + 1e-9, 0.02)
    y = _lane_y(cfg, offset, x)
    keep = (y >= y_min) & (y <= y_max)
    x, y = x[keep], y[keep]
    pts = np.column_stack([x, y, _surface_z(cfg, x)])
    lane = LanePolyline(pts, instance_id=instance_id)
    return polyline_resample(lane, _DENSE_SPACING)


def _sample_lane_paint(cfg, rng, offset):
    x_min, x_max, y_min, y_max = cfg.roi
    length = x_max - x_min
    n = int(round(length * cfg.point_density * 2.0))
    x = rng.uniform(x_min, x_max, n)
    y = _lane_y(cfg, offset, x) + rng.uniform(-cfg.lane_width / 2, cfg.lane_width / 2, n)
    keep = (y >= y_min) & (y <= y_max)
    x, y = x[keep], y[keep]
    z = _surface_z(cfg, x)
    if cfg.noise_sigma > 0:
        dz = np.clip(rng.normal(0.0, cfg.noise_sigma, x.size),
                     -3 * cfg.noise_sigma, 3 * cfg.noise_sigma)
        z = z + dz
    return np.column_stack([x, y, z])


def _sample_distractors(cfg, rng):
    """Curb-like line clusters and shrub-like blobs, 0.1-0.3 m above ground."""
    x_min, x_max, y_min, y_max = cfg.roi
    if cfg.distractor_clusters is not None:
        clusters = cfg.distractor_clusters
    else:
        clusters = max(2, 3 * cfg.lane_count)
    pts = []
    for c in range(clusters):
        cx = rng.uniform(x_min, x_max)
        cy = rng.uniform(y_min, y_max)
        if c % 2 == 0:  # curb: points along a short line, constant lift
            n = 40
            x = cx + rng.uniform(-2.5, 2.5, n)
            y = np.full(n, cy) + rng.normal(0.0, 0.02, n)
            lift = rng.uniform(0.1, 0.3)
            z = _surface_z(cfg, x) + lift
        else:  # shrub: volumetric blob
            n = 30
            x = cx + rng.normal(0.0, 0.3, n)
            y = cy + rng.normal(0.0, 0.3, n)
            z = _surface_z(cfg, x) + rng.uniform(0.1, 0.3, n)
        keep = (x >= x_min) & (x <= x_max) & (y >= y_min) & (y <= y_max)
        pts.append(np.column_stack([x[keep], y[keep], z[keep]]))
    return np.vstack(pts) if pts else np.zeros((0, 3))


def sparsify_annotation(dense: LanePolyline, spacing: float, jitter: float, seed: int,
                        return_offsets: bool = False):
    """Subsample a dense lane into a manual-annotation surrogate.

    Resamples at ``spacing`` and jitters z only, clamped at three sigma.
    With ``return_offsets`` the applied z offsets are returned alongside.
    """
    if spacing <= 0:
        raise ValueError("spacing must be > 0")
    sparse = polyline_resample(dense, spacing)
    rng = np.random.default_rng(seed)
    if jitter > 0:
        dz = np.clip(rng.normal(0.0, jitter, len(sparse)), -3 * jitter, 3 * jitter)
    else:
        dz = np.zeros(len(sparse))
    pts = sparse.points.copy()
    pts[:, 2] += dz
    out = LanePolyline(pts, instance_id=dense.instance_id)
    if return_offsets:
        return out, dz
    return out


def generate_scene(config: SceneConfig) -> SyntheticScene:
    """Build a deterministic synthetic scene from its config."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    x_min, x_max, y_min, y_max = cfg.roi
    area = (x_max - x_min) * (y_max - y_min)

    ground = _sample_ground(cfg, rng, int(round(cfg.point_density * area)))

    offsets = _lane_lateral_offsets(cfg.lane_count)
    dense_lanes, paint_blocks = [], []
    for i, off in enumerate(offsets):
        dense_lanes.append(_dense_lane(cfg, off, instance_id=i))
        paint_blocks.append(_sample_lane_paint(cfg, rng, off))
    paint = np.vstack(paint_blocks) if paint_blocks else np.zeros((0, 3))

    distract = _sample_distractors(cfg, rng)

    xyz = np.vstack([ground, paint, distract])
    intensity = np.concatenate([
        _clamped_normal(rng, cfg.ground_intensity_mean, _INTENSITY_STD, ground.shape[0]),
        _clamped_normal(rng, cfg.lane_intensity_mean, _INTENSITY_STD, paint.shape[0]),
        _clamped_normal(rng, cfg.distractor_intensity_mean, _INTENSITY_STD, distract.shape[0]),
    ])
    point_class = np.concatenate([
        np.full(ground.shape[0], CLASS_GROUND, dtype=np.int8),
        np.full(paint.shape[0], CLASS_LANE_PAINT, dtype=np.int8),
        np.full(distract.shape[0], CLASS_DISTRACTOR, dtype=np.int8),
    ])

    sparse_lanes, z_offsets = [], []
    for i, lane in enumerate(dense_lanes):
        sparse, dz = sparsify_annotation(lane, cfg.annotation_spacing, cfg.annotation_jitter,
                                         seed=cfg.seed * 1_000_003 + i, return_offsets=True)
        sparse_lanes.append(sparse)
        z_offsets.append(dz)

    cloud = PointCloud(xyz, intensity, frame_id=f"synthetic-{cfg.seed}")
    return SyntheticScene(cloud=cloud, gt_dense_lanes=dense_lanes,
                          gt_sparse_lanes=sparse_lanes, point_class=point_class,
                          annotation_z_offsets=z_offsets, config=cfg)
