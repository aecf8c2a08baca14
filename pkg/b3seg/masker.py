"""masker.py - 2D mask providers.

Only the ground-truth oracle ships. It labels each pixel by the true class of
the pixel's dominant contributor, then corrupts that clean mask in a fixed
order: boundary erosion, independent pixel flips, whole-view failure. Random
draws come from ``default_rng([seed, iteration])`` and are always taken in
the same order, so changing one noise knob leaves the other stages alone.
"""
from __future__ import annotations

import abc
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage, special

from ._b3seg_exception import (
    InvalidNoiseError,
    MissingLabelsError,
    ProbabilityDomainError,
    ShapeMismatchError,
    UnsupportedBackendError,
)
from .render import Camera, Mask, RenderOutput
from .scene import Scene

logger = logging.getLogger(__name__)

FAILURE_MODES = ("empty", "wrong_object")


@dataclass(frozen=True)
class NoiseSpec:
    pixel_flip_prob: float = 0.0
    boundary_erode_px: int = 0
    view_failure_prob: float = 0.0
    seed: int = 0
    failure_mode: str = "empty"

    def __post_init__(self):
        for name in ("pixel_flip_prob", "view_failure_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InvalidNoiseError(f"{name} must lie in [0, 1], got {p}")
        if int(self.boundary_erode_px) != self.boundary_erode_px or self.boundary_erode_px < 0:
            raise InvalidNoiseError(f"boundary_erode_px must be an integer >= 0, got {self.boundary_erode_px}")
        if self.failure_mode not in FAILURE_MODES:
            raise InvalidNoiseError(f"failure_mode must be one of {FAILURE_MODES}, got {self.failure_mode!r}")

    @property
    def is_clean(self) -> bool:
        return self.pixel_flip_prob == 0.0 and self.boundary_erode_px == 0 and self.view_failure_prob == 0.0


@dataclass(frozen=True, eq=False)
class MaskRequest:
    render: RenderOutput
    camera: Camera
    target_class: int = 1
    prior_logit: Optional[np.ndarray] = None
    num_classes: int = 2

    def __post_init__(self):
        if (self.render.width, self.render.height) != (self.camera.width, self.camera.height):
            raise ShapeMismatchError("render and camera resolutions differ")
        if self.prior_logit is not None and np.shape(self.prior_logit) != (self.render.height, self.render.width):
            raise ShapeMismatchError(
                f"prior logit {np.shape(self.prior_logit)} does not match render {(self.render.height, self.render.width)}"
            )
        # binary masks mark one scene label as 1; multi-class ids index posterior columns
        if self.target_class < 0 or (self.num_classes > 2 and self.target_class >= self.num_classes):
            raise ShapeMismatchError(f"target_class {self.target_class} invalid for {self.num_classes} classes")


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------

def dominant_label_image(render: RenderOutput, labels: np.ndarray) -> np.ndarray:
    """(H,W) ground-truth label of each pixel's dominant contributor, ``-1`` where empty."""
    dom = render.dominant_contributor()
    img = np.full(dom.shape, -1, dtype=np.int64)
    hit = dom >= 0
    img[hit] = np.asarray(labels, dtype=np.int64)[dom[hit]]
    return img


def clean_mask(req: MaskRequest, scene: Scene) -> np.ndarray:
    """Uncorrupted class-id image for ``req``."""
    if not scene.has_labels:
        raise MissingLabelsError(f"scene {scene.id!r} has no labels")
    img = dominant_label_image(req.render, scene.labels)
    if req.num_classes == 2:
        return (img == req.target_class).astype(np.int64)
    return np.clip(img, 0, req.num_classes - 1)


def _erode(labels: np.ndarray, px: int) -> np.ndarray:
    if px == 0:
        return labels
    out = np.zeros_like(labels)
    for c in np.unique(labels):
        if c == 0:
            continue
        keep = ndimage.binary_erosion(labels == c, iterations=px)
        out[keep] = c
    return out


def _wrong_object(req: MaskRequest, scene: Scene) -> np.ndarray:
    """Mask of the most visible labelled object other than the target."""
    img = dominant_label_image(req.render, scene.labels)
    others = img[(img > 0) & (img != req.target_class)]
    if others.size == 0:
        return np.zeros_like(img)
    wrong = int(np.bincount(others).argmax())
    if req.num_classes == 2:
        return (img == wrong).astype(np.int64)
    return np.where(img == wrong, min(wrong, req.num_classes - 1), 0)


def oracle_mask(req: MaskRequest, scene: Scene, noise: NoiseSpec, iteration: int = 0) -> Mask:
    labels = clean_mask(req, scene)
    K = req.num_classes
    rng = np.random.default_rng([int(noise.seed), int(iteration)])
    flip_draw = rng.random(labels.shape)
    flip_offset = rng.integers(1, K, size=labels.shape)
    fail_draw = rng.random()

    labels = _erode(labels, int(noise.boundary_erode_px))
    flip = flip_draw < noise.pixel_flip_prob
    labels = np.where(flip, (labels + flip_offset) % K, labels)
    if fail_draw < noise.view_failure_prob:
        logger.info("mask view failure (%s) at iteration %d", noise.failure_mode, iteration)
        if noise.failure_mode == "wrong_object":
            labels = _wrong_object(req, scene)
        else:
            labels = np.zeros_like(labels)
    return Mask(labels, K)


def prior_blend(mask: Mask, prior_logit: np.ndarray, blend_weight: float) -> Mask:
    """Pixel is 1 iff ``w * sigmoid(logit) + (1 - w) * mask >= 0.5``."""
    if not 0.0 <= blend_weight <= 1.0:
        raise ProbabilityDomainError(f"blend_weight must lie in [0, 1], got {blend_weight}")
    if mask.num_classes != 2:
        raise ShapeMismatchError("prior_blend needs a binary mask")
    prior_logit = np.asarray(prior_logit, dtype=np.float64)
    if prior_logit.shape != mask.shape:
        raise ShapeMismatchError(f"prior logit {prior_logit.shape} does not match mask {mask.shape}")
    if blend_weight == 0.0:
        return mask
    soft = blend_weight * special.expit(prior_logit) + (1.0 - blend_weight) * mask.labels
    return Mask(soft >= 0.5)


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------

class MaskProvider(abc.ABC):
    """Source of one mask per pipeline iteration."""

    @abc.abstractmethod
    def mask(self, req: MaskRequest, scene: Scene, iteration: int) -> Mask:
        ...


class OracleMasker(MaskProvider):
    def __init__(self, noise: Optional[NoiseSpec] = None, blend_weight: float = 0.0):
        if not 0.0 <= blend_weight <= 1.0:
            raise InvalidNoiseError(f"prior_blend_weight must lie in [0, 1], got {blend_weight}")
        self.noise = noise or NoiseSpec()
        self.blend_weight = float(blend_weight)

    def mask(self, req: MaskRequest, scene: Scene, iteration: int) -> Mask:
        out = oracle_mask(req, scene, self.noise, iteration)
        if self.blend_weight > 0.0 and req.prior_logit is not None and req.num_classes == 2:
            out = prior_blend(out, req.prior_logit, self.blend_weight)
        return out


class ExternalMasker(MaskProvider):
    """Process backend: PNG render on stdin, PNG mask on stdout. Not shipped."""

    def __init__(self, command: str):
        self.command = command

    def mask(self, req: MaskRequest, scene: Scene, iteration: int) -> Mask:
        raise UnsupportedBackendError(f"external backend {self.command!r} is not available")


def make_masker(backend: str = "oracle", noise: Optional[NoiseSpec] = None,
                blend_weight: float = 0.0) -> MaskProvider:
    """``oracle`` or ``external:<command>``."""
    if backend == "oracle":
        return OracleMasker(noise, blend_weight)
    if backend.startswith("external:") and backend[len("external:"):].strip():
        return ExternalMasker(backend[len("external:"):].strip())
    raise UnsupportedBackendError(f"unknown mask backend {backend!r}")
