"""Segmentation quality metrics: Gaussian-level IoU and projected 2D mIoU."""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from .._b3seg_exception import MissingLabelsError, ShapeMismatchError
from ..render import Camera, RenderOutput, render
from ..scene import Scene

logger = logging.getLogger(__name__)


def _as_foreground(labels: np.ndarray, target_class: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype == bool:
        return labels
    return labels == target_class


def _iou(pred: np.ndarray, gt: np.ndarray, what: str) -> float:
    union = np.count_nonzero(pred | gt)
    if union == 0:
        logger.warning("%s: prediction and ground truth are both empty; IoU taken as 1.0", what)
        return 1.0
    return np.count_nonzero(pred & gt) / union


def evaluate_3d_iou(labels: np.ndarray, scene: Scene, target_class: int = 1) -> float:
    """IoU over Gaussian indices. ``labels`` is a bool foreground vector or class ids."""
    if not scene.has_labels:
        raise MissingLabelsError(f"scene {scene.id!r} has no labels")
    pred = _as_foreground(labels, target_class)
    if pred.shape != (len(scene),):
        raise ShapeMismatchError(f"labels {pred.shape} do not match {len(scene)} gaussians")
    gt = scene.labels == target_class
    return float(_iou(pred, gt, "3d iou"))


def projected_mask(out: RenderOutput, foreground: np.ndarray) -> np.ndarray:
    """(H,W) bool mask: the dominant contributor of the pixel is foreground."""
    dom = out.dominant_contributor()
    mask = np.zeros(dom.shape, dtype=bool)
    hit = dom >= 0
    mask[hit] = foreground[dom[hit]]
    return mask


def evaluate_2d_miou(
    labels: np.ndarray,
    scene: Scene,
    holdout_cameras: Sequence[Camera],
    target_class: int = 1,
    *,
    renders: Optional[Sequence[RenderOutput]] = None,
) -> float:
    """Mean over holdout views of the IoU between projected predicted and true masks."""
    if not holdout_cameras:
        raise ShapeMismatchError("evaluate_2d_miou needs at least one holdout camera")
    if not scene.has_labels:
        raise MissingLabelsError(f"scene {scene.id!r} has no labels")
    pred = _as_foreground(labels, target_class)
    if pred.shape != (len(scene),):
        raise ShapeMismatchError(f"labels {pred.shape} do not match {len(scene)} gaussians")
    gt = scene.labels == target_class
    if renders is None:
        renders = [render(scene, cam) for cam in holdout_cameras]
    ious = [
        _iou(projected_mask(out, pred), projected_mask(out, gt), f"holdout view {i}")
        for i, out in enumerate(renders)
    ]
    return float(np.mean(ious))
