"""Exercise the numeric fusion kernels and verify a gradient by hand.

Voxel features are gathered around a query point at three neighborhood
scales, aggregated into one spatial feature, fused with a BEV feature row
through bidirectional cross attention, and scored with the training losses.
Every kernel ships an analytic gradient; one is checked against central
finite differences at the end.
"""

import numpy as np

from laneforge import SceneConfig, generate_scene
from laneforge.kernels import (BvatParams, SfwaParams, bce_loss, bvat_fuse,
                               bvat_fuse_grads, confidence_labels, knn_gather,
                               sfwa_aggregate, smooth_l1)
from laneforge.rasterize import voxel_centers, voxelize

K, C_V, C_SP, C_BEV = 12, 8, 16, 16


def main():
    rng = np.random.default_rng(0)
    scene = generate_scene(SceneConfig(seed=1, roi=(-12, 12, -8, 8)))
    query = np.array([2.0, 0.0, -2.0])
    blocks = []
    for factor in (1.0, 2.0, 4.0):  # three voxel resolutions = three scales
        size = (0.1 * factor, 0.1 * factor, 0.2 * factor)
        vg = voxelize(scene.cloud, voxel_size=size)
        centers = voxel_centers(vg)
        feats = rng.normal(0, 1, (len(centers), C_V))
        block, idx = knn_gather(query, centers, feats, K)
        blocks.append(block)
        print(f"  voxel size {size[0]:.1f} m: {len(centers)} voxels, "
              f"gathered k={K} nearest centers {idx[:4]}...")

    sfwa = SfwaParams.random(rng, K, C_V, C_SP)
    f_sp, weights = sfwa_aggregate(blocks, sfwa)
    print(f"\nSFWA scale weights: {np.round(weights, 3)} (sum "
          f"{weights.sum():.3f}); spatial feature shape {f_sp.shape}")

    f_bev = rng.normal(0, 1, (1, C_BEV))
    bvat = BvatParams.random(rng, C_BEV, C_SP, d_h=8, d_out=C_SP)
    fused = bvat_fuse(f_bev, f_sp, bvat)
    print(f"BVAT fused feature shape {fused.shape}")

    proposals = rng.uniform(-5, 5, (6, 3))
    gt = np.vstack([l.points for l in scene.gt_dense_lanes])
    labels = confidence_labels(proposals, gt)
    probs = rng.uniform(0.1, 0.9, 6)
    print(f"\nconfidence labels {labels.astype(int)}, "
          f"BCE loss {bce_loss(probs, labels.astype(float)).mean():.3f}, "
          f"smooth-L1 of residuals {smooth_l1(probs - 0.5).mean():.3f}")

    # spot-check one analytic gradient against central finite differences
    g = np.ones_like(fused)
    analytic = bvat_fuse_grads(f_bev, f_sp, bvat, grad_out=g)["f_bev"]
    step = 1e-5
    numeric = np.zeros_like(f_bev)
    for j in range(C_BEV):
        up, down = f_bev.copy(), f_bev.copy()
        up[0, j] += step
        down[0, j] -= step
        numeric[0, j] = (bvat_fuse(up, f_sp, bvat).sum()
                         - bvat_fuse(down, f_sp, bvat).sum()) / (2 * step)
    err = np.abs(analytic - numeric).max()
    print(f"max |analytic - finite difference| for dZ/dF_bev: {err:.2e}")


if __name__ == "__main__":
    main()
