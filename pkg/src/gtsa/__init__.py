"""Self-supervised pretraining with crop- and rotation-sensitive targets.

The teacher sees unrotated global views; the student sees every view with a
random quarter turn. Targets are the teacher's features pooled over the
overlap of the two crops and rotated into the student's frame.
"""

from gtsa.config import TrainConfig
from gtsa.geometry import OverlapRegion, Rect, intersect, overlap_region, roi_align, rotate_map
from gtsa.losses import LossWeights, overlap_loss, patch_corr_loss, rotation_loss, total_loss

__version__ = "0.1.0"

__all__ = [
    "TrainConfig", "Rect", "OverlapRegion", "intersect", "overlap_region", "roi_align",
    "rotate_map", "LossWeights", "overlap_loss", "patch_corr_loss", "rotation_loss", "total_loss",
]
