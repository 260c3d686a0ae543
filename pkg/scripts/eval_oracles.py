"""Sanity numbers for the evaluation path.

Ground truth through rasterize -> back-project should score mIoU 1.0 at k=1
on single-occupancy clouds. A uniform random predictor on balanced two-class
data should score about 1/3 (IoU of a coin flip against a fair split).
"""
import numpy as np

from rangesam.config import RunConfig
from rangesam.engine import evaluate_points, gt_predictor, random_predictor
from rangesam.kitti import PointCloud
from rangesam.synthetic import SyntheticDataset, pixel_rays


class Balanced:
    def __init__(self, cfg, n=8):
        self.cfg, self.n = cfg, n

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        d = pixel_rays(self.cfg)
        r = np.random.default_rng(i).uniform(5, 40, len(d))
        return PointCloud(d * r[:, None], np.full(len(d), 0.5), (np.arange(len(d)) % 2).astype(np.uint8))


if __name__ == "__main__":
    cfg = RunConfig.toy()
    ds = SyntheticDataset(16, cfg.projection, seed=3)
    for k in (1, 3, 7):
        print(f"ground truth, k={k}: mIoU {evaluate_points(ds, cfg, gt_predictor, k=k).miou().mean:.4f}")
    cm = evaluate_points(Balanced(cfg.projection), cfg, random_predictor([0, 1]), k=1, num_classes=2)
    print(f"random 2-class: mIoU {cm.miou().mean:.4f} (expected 1/3)")
