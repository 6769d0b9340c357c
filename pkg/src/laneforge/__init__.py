"""LiDAR lane-geometry toolkit: synthetic scenes, automatic lane
annotation, BEV/voxel discretization, fusion kernels, and evaluation."""

from .geometry import (CubicCurve, LanePolyline, Point3I, PointCloud,
                       eval_cubic, fit_cubic, order_lane_points,
                       polyline_resample)
from .scene import SceneConfig, SyntheticScene, generate_scene, sparsify_annotation
from .annotate import (PipelineConfig, Plane, ball_query_expand,
                       fit_local_ground_plane, interpolate_lane, run_pipeline,
                       skeletonize_lane, validate_and_recalibrate)
from .rasterize import (BevGrid, LaneMask, VoxelGrid, cluster_instances,
                        lift_mask_to_3d, pillarize, rasterize_lanes, voxelize)
from .kernels import (AttentionParams, BvatParams, FfnParams, SfwaParams,
                      bce_loss, bvat_fuse, confidence_labels, cross_attention,
                      knn_gather, layer_norm, sfwa_aggregate, smooth_l1,
                      softmax)
from .metrics import (EvalReport, MatchResult, StatsReport, chamfer_unilateral,
                      dataset_stats, evaluate_lanes, match_lanes, prf1)
from .laneio import (LaneFile, LaneRecord, RunConfig, read_cloud, read_lanes,
                     read_run_config, write_cloud, write_lanes)

__version__ = "0.1.0"
