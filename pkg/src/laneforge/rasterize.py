"""Scene discretization: BEV pillarization, lane-label rasterization,
voxelization with caps, BEV-to-3D lifting, and instance clustering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import DBSCAN

from .geometry import LanePolyline, PointCloud, polyline_resample

# arc-length step used to sample polylines onto label grids
RASTER_SAMPLE_STEP = 0.01

DEFAULT_ROI = (-48.0, 48.0, -20.0, 20.0)
BEV_RESOLUTION = 0.04
LABEL_RESOLUTION = 0.32
VOXEL_SIZE = (0.1, 0.1, 0.2)
MAX_POINTS_PER_VOXEL = 32
MAX_VOXELS = 12000
CLUSTER_EPS = 0.96
CLUSTER_MIN_PTS = 5


def grid_shape(roi, resolution):
    x_min, x_max, y_min, y_max = roi
    return (int(round((x_max - x_min) / resolution)),
            int(round((y_max - y_min) / resolution)))


def _cell_indices(coords, roi, resolution, shape):
    """Half-open binning; the roi upper edge clamps into the last cell."""
    x_min, x_max, y_min, y_max = roi
    ix = np.floor((coords[:, 0] - x_min) / resolution).astype(np.int64)
    iy = np.floor((coords[:, 1] - y_min) / resolution).astype(np.int64)
    ix = np.minimum(ix, shape[0] - 1)
    iy = np.minimum(iy, shape[1] - 1)
    return ix, iy


@dataclass
class BevGrid:
    roi: tuple
    resolution: float
    count: np.ndarray
    mean_intensity: np.ndarray
    max_z: np.ndarray
    dropped: int = 0

    @property
    def shape(self):
        return self.count.shape


@dataclass
class LaneMask:
    roi: tuple
    resolution: float
    flag: np.ndarray
    height: np.ndarray

    @property
    def shape(self):
        return self.flag.shape


@dataclass
class VoxelGrid:
    voxel_size: tuple
    voxels: dict  # (ix, iy, iz) -> np.ndarray of point indices
    stored: int
    dropped_full_voxel: int
    dropped_voxel_cap: int
    max_points_per_voxel: int = MAX_POINTS_PER_VOXEL
    max_voxels: int = MAX_VOXELS

    @property
    def dropped(self):
        return self.dropped_full_voxel + self.dropped_voxel_cap


def pillarize(cloud: PointCloud, roi=DEFAULT_ROI, resolution=BEV_RESOLUTION) -> BevGrid:
    """Bin points into vertical pillars over the xy roi.

    Cell payload: occupancy count, mean intensity, max z. Out-of-roi points
    are dropped and counted.
    """
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    shape = grid_shape(roi, resolution)
    x_min, x_max, y_min, y_max = roi
    xyz = cloud.xyz
    inside = ((xyz[:, 0] >= x_min) & (xyz[:, 0] <= x_max)
              & (xyz[:, 1] >= y_min) & (xyz[:, 1] <= y_max))
    pts, inten = xyz[inside], cloud.intensity[inside]
    ix, iy = _cell_indices(pts, roi, resolution, shape)
    count = np.zeros(shape, dtype=np.int64)
    np.add.at(count, (ix, iy), 1)
    isum = np.zeros(shape, dtype=np.float64)
    np.add.at(isum, (ix, iy), inten)
    with np.errstate(invalid="ignore"):
        mean_intensity = np.where(count > 0, isum / np.maximum(count, 1), 0.0)
    max_z = np.full(shape, -np.inf)
    np.maximum.at(max_z, (ix, iy), pts[:, 2])
    return BevGrid(roi=roi, resolution=resolution, count=count,
                   mean_intensity=mean_intensity, max_z=max_z,
                   dropped=int((~inside).sum()))


def rasterize_lanes(lanes, roi=DEFAULT_ROI, resolution=LABEL_RESOLUTION) -> LaneMask:
    """Flag label cells touched by lane polylines.

    Polylines are sampled densely along their arc length; a cell's height is
    the mean z of the samples that fall in it.
    """
    shape = grid_shape(roi, resolution)
    flag = np.zeros(shape, dtype=bool)
    zsum = np.zeros(shape, dtype=np.float64)
    nsum = np.zeros(shape, dtype=np.int64)
    x_min, x_max, y_min, y_max = roi
    for lane in lanes:
        if len(lane) >= 2:
            samples = polyline_resample(lane, RASTER_SAMPLE_STEP).points
        else:
            samples = lane.points
        inside = ((samples[:, 0] >= x_min) & (samples[:, 0] <= x_max)
                  & (samples[:, 1] >= y_min) & (samples[:, 1] <= y_max))
        samples = samples[inside]
        if samples.shape[0] == 0:
            continue
        ix, iy = _cell_indices(samples, roi, resolution, shape)
        flag[ix, iy] = True
        np.add.at(zsum, (ix, iy), samples[:, 2])
        np.add.at(nsum, (ix, iy), 1)
    height = np.where(nsum > 0, zsum / np.maximum(nsum, 1), 0.0)
    return LaneMask(roi=roi, resolution=resolution, flag=flag, height=height)


def lift_mask_to_3d(mask: LaneMask) -> np.ndarray:
    """One 3D proposal per flagged cell: cell xy center, stored height as z."""
    ix, iy = np.nonzero(mask.flag)
    x_min, _, y_min, _ = mask.roi
    x = x_min + (ix + 0.5) * mask.resolution
    y = y_min + (iy + 0.5) * mask.resolution
    return np.column_stack([x, y, mask.height[ix, iy]])


def voxelize(cloud: PointCloud, voxel_size=VOXEL_SIZE,
             max_points_per_voxel=MAX_POINTS_PER_VOXEL,
             max_voxels=MAX_VOXELS) -> VoxelGrid:
    """Bin points into fixed-size voxels with per-voxel and global caps.

    Points are scanned in ascending index order; a full voxel drops further
    points, and no new voxel is admitted past the voxel cap.
    """
    dx, dy, dz = voxel_size
    if min(dx, dy, dz) <= 0:
        raise ValueError("voxel dimensions must be > 0")
    ids = np.floor(cloud.xyz / np.array([dx, dy, dz])).astype(np.int64)
    voxels = {}
    dropped_full = dropped_cap = 0
    for i, key in enumerate(map(tuple, ids)):
        slot = voxels.get(key)
        if slot is None:
            if len(voxels) >= max_voxels:
                dropped_cap += 1
                continue
            voxels[key] = [i]
        elif len(slot) < max_points_per_voxel:
            slot.append(i)
        else:
            dropped_full += 1
    voxels = {k: np.array(v, dtype=int) for k, v in voxels.items()}
    stored = sum(v.size for v in voxels.values())
    return VoxelGrid(voxel_size=tuple(voxel_size), voxels=voxels, stored=stored,
                     dropped_full_voxel=dropped_full, dropped_voxel_cap=dropped_cap,
                     max_points_per_voxel=max_points_per_voxel, max_voxels=max_voxels)


def voxel_centers(grid: VoxelGrid) -> np.ndarray:
    """Geometric center of every occupied voxel, in grid iteration order."""
    size = np.array(grid.voxel_size)
    keys = np.array(list(grid.voxels.keys()), dtype=np.float64).reshape(-1, 3)
    return (keys + 0.5) * size


def cluster_instances(proposals, eps=CLUSTER_EPS, min_pts=CLUSTER_MIN_PTS) -> np.ndarray:
    """Density-based clustering of proposals over xy; noise labeled -1."""
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be > 0 and min_pts >= 1")
    pts = np.asarray(proposals, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return np.zeros(0, dtype=int)
    return DBSCAN(eps=eps, min_samples=min_pts).fit(pts[:, :2]).labels_
