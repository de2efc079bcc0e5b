# transients/metrics.py
"""Depth, mask and reconstruction metrics, plus the depth loss terms
evaluated as diagnostics."""
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scipy.ndimage import binary_dilation, uniform_filter

from .carving import CellState
from .exceptions import MetricInputError

logger = logging.getLogger(__name__)

SSIM_K1 = 0.01
SSIM_K2 = 0.03

REPORT_KEYS = ('depth_mae', 'boundary_f1', 'mask_pixel_mae', 'mask_iou', 'l_data', 'l_smooth', 'voxel_iou')


@dataclass(frozen=True)
class MetricConfig:
    alpha: float = 0.15
    beta: float = 1e-3
    ssim_window: int = 7
    edge_threshold: float = 0.05
    boundary_tolerance: int = 1

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValidationError('alpha must lie in [0, 1]')
        if self.beta < 0:
            raise ValidationError('beta must be non-negative')
        if self.ssim_window < 1 or self.boundary_tolerance < 0:
            raise ValidationError('SSIM window must be positive and boundary tolerance non-negative')

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'alpha': settings.LIDARSIM_SSIM_ALPHA,
            'beta': settings.LIDARSIM_SMOOTHNESS_BETA,
            'ssim_window': settings.LIDARSIM_SSIM_WINDOW,
            'edge_threshold': settings.LIDARSIM_EDGE_THRESHOLD,
            'boundary_tolerance': settings.LIDARSIM_BOUNDARY_TOLERANCE,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class MetricsReport:
    depth_mae: float = None
    boundary_f1: float = None
    mask_pixel_mae: float = None
    mask_iou: float = None
    l_data: float = None
    l_smooth: float = None
    voxel_iou: float = None

    def __post_init__(self):
        for key in ('boundary_f1', 'mask_pixel_mae', 'mask_iou', 'voxel_iou'):
            value = getattr(self, key)
            if value is not None and not (0.0 <= value <= 1.0):
                raise MetricInputError(f'{key} = {value} is outside [0, 1]')
        for key in ('depth_mae', 'l_data', 'l_smooth'):
            value = getattr(self, key)
            if value is not None and value < 0:
                raise MetricInputError(f'{key} = {value} is negative')

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def merge(self, other):
        values = asdict(self)
        values.update({k: v for k, v in asdict(other).items() if v is not None})
        return MetricsReport(**values)


def _aligned(pred, gt):
    if pred.shape != gt.shape:
        raise MetricInputError(f'shape mismatch: {pred.shape} vs {gt.shape}')


# ====================
# DEPTH
# ====================
def depth_edges(depth, valid, threshold):
    """Pixels whose +x or +y neighbour differs by more than ``threshold`` of the map's range."""
    values = depth[valid]
    edges = np.zeros(depth.shape, dtype=bool)
    if values.size == 0:
        return edges
    span = float(values.max() - values.min())
    if span <= 0:
        return edges
    filled = np.where(valid, depth, 0.0)
    step_x = np.abs(np.diff(filled, axis=1)) / span > threshold
    step_x &= valid[:, 1:] & valid[:, :-1]
    step_y = np.abs(np.diff(filled, axis=0)) / span > threshold
    step_y &= valid[1:, :] & valid[:-1, :]
    edges[:, :-1] |= step_x
    edges[:-1, :] |= step_y
    return edges


def boundary_f1(pred_edges, gt_edges, tolerance):
    if not pred_edges.any() and not gt_edges.any():
        return 1.0
    if not pred_edges.any() or not gt_edges.any():
        return 0.0
    if tolerance > 0:
        window = np.ones((2 * tolerance + 1,) * 2, dtype=bool)
        near_gt = binary_dilation(gt_edges, structure=window)
        near_pred = binary_dilation(pred_edges, structure=window)
    else:
        near_gt, near_pred = gt_edges, pred_edges
    precision = (pred_edges & near_gt).sum() / pred_edges.sum()
    recall = (gt_edges & near_pred).sum() / gt_edges.sum()
    if precision + recall == 0:
        return 0.0
    return float(2.0 * precision * recall / (precision + recall))


def depth_metrics(pred, gt, cfg=None):
    """(MAE over mutually valid pixels, depth-edge boundary F1)."""
    cfg = cfg or MetricConfig()
    _aligned(pred, gt)
    both = pred.valid & gt.valid
    if not both.any():
        raise MetricInputError('predicted and ground-truth depth share no valid pixel')
    mae = float(np.mean(np.abs(pred.depth[both] - gt.depth[both])))
    f1 = boundary_f1(depth_edges(pred.depth, pred.valid, cfg.edge_threshold),
                     depth_edges(gt.depth, gt.valid, cfg.edge_threshold),
                     cfg.boundary_tolerance)
    return mae, f1


# ====================
# MASKS
# ====================
def mask_metrics(pred, gt):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    _aligned(pred, gt)
    pixel_mae = float(np.mean(pred != gt))
    union = (pred | gt).sum()
    iou = 1.0 if union == 0 else float((pred & gt).sum() / union)
    return pixel_mae, iou


# ====================
# LOSS DIAGNOSTICS
# ====================
def ssim(a, b, window=7, dynamic_range=None):
    """Mean structural similarity with a uniform ``window`` x ``window`` filter."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    _aligned(a, b)
    dynamic_range = dynamic_range or float(max(np.abs(b).max(), 1e-12))
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    mu_a = uniform_filter(a, window)
    mu_b = uniform_filter(b, window)
    var_a = uniform_filter(a * a, window) - mu_a ** 2
    var_b = uniform_filter(b * b, window) - mu_b ** 2
    cov = uniform_filter(a * b, window) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(score.mean())


def loss_diagnostics(pred_depth, gt_depth, intensity, cfg=None):
    """(l_data, l_smooth): SSIM + L1 data term and edge-aware smoothness."""
    cfg = cfg or MetricConfig()
    _aligned(pred_depth, gt_depth)
    intensity = np.asarray(intensity, float)
    _aligned(pred_depth.depth, intensity)
    both = pred_depth.valid & gt_depth.valid
    if not both.any():
        raise MetricInputError('predicted and ground-truth depth share no valid pixel')

    gt = np.where(both, gt_depth.depth, 0.0)
    pred = np.where(both, pred_depth.depth, 0.0)
    structure = ssim(pred, gt, cfg.ssim_window, float(gt.max()) or None)
    l1 = float(np.mean(np.abs(pred_depth.depth[both] - gt_depth.depth[both])))
    l_data = max(cfg.alpha * (1.0 - structure) + (1.0 - cfg.alpha) * l1, 0.0)

    d = pred_depth.depth
    grad_x = np.abs(np.diff(d, axis=1)) * np.exp(-np.abs(np.diff(intensity, axis=1)))
    grad_y = np.abs(np.diff(d, axis=0)) * np.exp(-np.abs(np.diff(intensity, axis=0)))
    terms = [g[np.isfinite(g)] for g in (grad_x, grad_y)]
    l_smooth = cfg.beta * sum(float(t.mean()) if t.size else 0.0 for t in terms)
    return l_data, l_smooth


# ====================
# RECONSTRUCTION
# ====================
def voxel_iou(pred_grid, gt_grid, exclude_boundary=True):
    """IoU of the cells both grids mark OCCUPIED; unknown cells count as free.

    The outer layer (room walls) is skipped by default.
    """
    if not pred_grid.same_layout(gt_grid):
        raise MetricInputError(f'grid layouts differ: {pred_grid.resolution} vs {gt_grid.resolution}')
    pred = pred_grid.states == CellState.OCCUPIED
    gt = gt_grid.states == CellState.OCCUPIED
    if exclude_boundary:
        pred = pred[1:-1, 1:-1, 1:-1]
        gt = gt[1:-1, 1:-1, 1:-1]
    union = (pred | gt).sum()
    return 1.0 if union == 0 else float((pred & gt).sum() / union)


def reconstruction_metrics(pred_grid, gt_grid, novel_depths=(), gt_depths=(), cfg=None, exclude_boundary=True):
    cfg = cfg or MetricConfig()
    if len(novel_depths) != len(gt_depths):
        raise MetricInputError(f'{len(novel_depths)} novel views for {len(gt_depths)} ground-truth views')
    report = MetricsReport(voxel_iou=voxel_iou(pred_grid, gt_grid, exclude_boundary))
    scores = []
    for pred, gt in zip(novel_depths, gt_depths):
        try:
            scores.append(depth_metrics(pred, gt, cfg))
        except MetricInputError:
            logger.warning('novel view has no valid overlap with ground truth, skipped')
    if scores:
        report.depth_mae = float(np.mean([s[0] for s in scores]))
        report.boundary_f1 = float(np.mean([s[1] for s in scores]))
    return report
