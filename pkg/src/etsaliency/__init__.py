"""Center-bias-aware comparison of saliency maps with eye-tracking heatmaps."""

from .heatmap import EtMapConfig, FixationRecord, Heatmap, mean_heatmaps, normalize_to_distribution, render_et_map
from .metrics import MetricScores, NegativeSource, SamplerSpec, auc, evaluate_image, ncc, sauc, sncc
from .registration import (
    DiagonalAffine2D,
    NamedBox,
    compute_center_bias,
    fit_transform,
    mean_boxes,
    project_center_bias,
    warp_heatmap,
)

__version__ = "0.1.0"
