"""Score degraded predictions and summarize a small synthetic dataset.

Ground-truth lanes are perturbed (offset, truncated, dropped, plus a
spurious extra lane) and evaluated with bipartite matching, P/R/F1, and
unilateral Chamfer distances. Dataset statistics then recover the cubic
curvature coefficients and slope/height distributions over many scenes.
"""

import numpy as np

from laneforge import SceneConfig, generate_scene
from laneforge.geometry import LanePolyline
from laneforge.metrics import dataset_stats, evaluate_lanes


def degrade(lanes, rng):
    out = []
    for i, lane in enumerate(lanes):
        pts = lane.points.copy()
        pts[:, 2] += rng.normal(0, 0.02)           # vertical bias
        pts[:, 1] += rng.normal(0, 0.05)           # lateral bias
        if i == 1:
            pts = pts[: len(pts) // 2]             # truncate one lane
        if i == 2:
            continue                               # drop one lane entirely
        out.append(LanePolyline(pts, instance_id=lane.instance_id))
    spurious = LanePolyline(rng.uniform(-5, 5, (5, 3)) + [0, 15, 0],
                            instance_id=99)
    return out + [spurious]


def main():
    rng = np.random.default_rng(3)
    scene = generate_scene(SceneConfig(seed=3))
    pred = degrade(scene.gt_dense_lanes, rng)
    report = evaluate_lanes(pred, scene.gt_dense_lanes)
    print("degraded predictions vs ground truth:")
    print(f"  precision {report.precision:.3f}  recall {report.recall:.3f}  "
          f"F1 {report.f1:.3f}")
    print(f"  CD_3D {report.cd_3d:.3f} m  CD_BEV {report.cd_bev:.3f} m")

    lanes = []
    for seed in range(8):
        lanes.extend(generate_scene(SceneConfig(seed=seed)).gt_dense_lanes)
    stats = dataset_stats(lanes)
    print(f"\ndataset statistics over {len(lanes)} lanes:")
    print(f"  curvature a: mean {stats.curvatures.mean():.2e}, "
          f"range [{stats.curvatures.min():.2e}, {stats.curvatures.max():.2e}]")
    print(f"  slope: mean {stats.slopes_deg.mean():.2f} deg")
    print(f"  heights: all negative: {bool((stats.height_edges[-1] < 0))} "
          f"(sensor sits above the road)")
    print(f"  xy histogram {stats.xy_hist.shape}, "
          f"{int(stats.xy_hist.sum())} points binned")


if __name__ == "__main__":
    main()
