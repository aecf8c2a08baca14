"""render.py - CPU pinhole rasteriser for Gaussian splat scenes.

Rendering follows the usual splatting recipe:

1. Transform means into camera space (x right, y down, z forward) and drop
   Gaussians whose mean is within ``NEAR`` of the camera plane or behind it.
2. Project each world covariance with the local affine (Jacobian) approximation
   ``J W Sigma W^T J^T`` and add a ``LOWPASS`` px^2 isotropic term.
3. Sort by camera-space depth of the means, once, globally.
4. Composite front to back per pixel with ``w_i = alpha_i' T_i`` where
   ``alpha_i' = min(opacity_i * exp(-d^T Sigma2D^-1 d / 2), ALPHA_MAX)``
   inside the 3-sigma footprint and ``T_i`` is the running transmittance.
   A pixel stops accepting contributions once ``T < T_MIN``.

Every contribution is kept (pixel, gaussian, weight) so masks can later split
the per-Gaussian responsibilities ``tau_i`` into in-mask and out-of-mask parts.
Pixel ``(x, y)`` has its centre at ``(x + 0.5, y + 0.5)``; the principal point
is the image centre.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import special

from ._b3seg_exception import InvalidCameraError, ShapeMismatchError
from .posterior import EvidenceMap, PosteriorState
from .scene import Scene

logger = logging.getLogger(__name__)

NEAR = 0.01
ALPHA_MAX = 0.999
T_MIN = 1e-4
LOWPASS = 0.3
SIGMA_CUTOFF = 3.0
LOGIT_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera looking from ``position`` at ``look_at``."""
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray = (0.0, 0.0, 1.0)
    vertical_fov: float = np.pi / 3.0
    width: int = 128
    height: int = 128

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        if not 0.0 < self.vertical_fov < np.pi:
            raise InvalidCameraError(f"vertical_fov must be in (0, pi), got {self.vertical_fov}")
        if int(self.width) < 1 or int(self.height) < 1:
            raise InvalidCameraError(f"resolution must be >= 1x1, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        view = self.look_at - self.position
        dist = np.linalg.norm(view)
        if dist == 0.0:
            raise InvalidCameraError("position equals look_at")
        up_norm = np.linalg.norm(self.up)
        if up_norm == 0.0:
            raise InvalidCameraError("up vector is zero")
        cos = abs(float(np.dot(view / dist, self.up / up_norm)))
        if np.arccos(min(cos, 1.0)) <= 1e-4:
            raise InvalidCameraError("up vector is parallel to the view direction")

    @property
    def focal(self) -> float:
        return 0.5 * self.height / np.tan(0.5 * self.vertical_fov)

    def rotation(self) -> np.ndarray:
        """World → camera rotation; rows are right, down, forward."""
        forward = self.look_at - self.position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, self.up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, forward)
        return np.stack([right, -true_up, forward])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation().T

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates ``(N,2)`` and camera depth ``(N,)`` of world points."""
        pc = self.to_camera(points)
        z = pc[:, 2]
        f = self.focal
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.column_stack([
                f * pc[:, 0] / z + 0.5 * self.width,
                f * pc[:, 1] / z + 0.5 * self.height,
            ])
        return uv, z


@dataclass(frozen=True, eq=False)
class Mask:
    """Per-pixel class ids in ``[0, num_classes)``."""
    labels: np.ndarray
    num_classes: int = 2

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.dtype == bool:
            labels = labels.astype(np.int64)
        labels = labels.astype(np.int64)
        if labels.ndim != 2:
            raise ShapeMismatchError(f"mask must be HxW, got {labels.shape}")
        if self.num_classes < 2:
            raise ShapeMismatchError(f"num_classes must be >= 2, got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ShapeMismatchError(f"mask labels must lie in [0, {self.num_classes})")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True, eq=False)
class RenderOutput:
    """Result of one render.

    ``contrib_pixel``, ``contrib_gaussian`` and ``contrib_weight`` are parallel
    arrays; for any pixel its entries appear in front-to-back order.
    """
    rgb: np.ndarray
    contrib_pixel: np.ndarray
    contrib_gaussian: np.ndarray
    contrib_weight: np.ndarray
    responsibilities: np.ndarray
    width: int
    height: int

    @property
    def num_gaussians(self) -> int:
        return int(self.responsibilities.shape[0])

    def pixel_contribs(self, x: int, y: int) -> List[Tuple[int, float]]:
        """Depth-ordered ``(gaussian_index, weight)`` list of one pixel."""
        sel = self.contrib_pixel == (y * self.width + x)
        return list(zip(self.contrib_gaussian[sel].tolist(), self.contrib_weight[sel].tolist()))

    def coverage(self) -> np.ndarray:
        """(H,W) sum of weights per pixel (``1 - T_final``)."""
        cov = np.bincount(self.contrib_pixel, weights=self.contrib_weight,
                          minlength=self.width * self.height)
        return cov.reshape(self.height, self.width)

    def dominant_contributor(self) -> np.ndarray:
        """(H,W) index of the largest-weight Gaussian per pixel, ``-1`` where empty.

        Ties go to the front-most Gaussian.
        """
        out = np.full(self.width * self.height, -1, dtype=np.int64)
        n = self.contrib_pixel.shape[0]
        if n:
            order = np.lexsort((np.arange(n), -self.contrib_weight, self.contrib_pixel))
            pix = self.contrib_pixel[order]
            first = np.ones(n, dtype=bool)
            first[1:] = pix[1:] != pix[:-1]
            out[pix[first]] = self.contrib_gaussian[order][first]
        return out.reshape(self.height, self.width)

    def pixel_sum(self, per_gaussian: np.ndarray) -> np.ndarray:
        """(H,W) image of ``sum_i v_i w_i`` for a per-Gaussian value vector."""
        vals = np.asarray(per_gaussian, dtype=np.float64)[self.contrib_gaussian] * self.contrib_weight
        img = np.bincount(self.contrib_pixel, weights=vals, minlength=self.width * self.height)
        return img.reshape(self.height, self.width)


def _project_covariances(scene: Scene, camera: Camera, pc: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Screen-space covariances of the Gaussians ``idx`` whose camera-frame means are ``pc``."""
    W = camera.rotation()
    cov_cam = W[None] @ scene.covariances()[idx] @ W.T[None]
    f = camera.focal
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    J = np.zeros((pc.shape[0], 2, 3))
    J[:, 0, 0] = f / z
    J[:, 0, 2] = -f * x / (z * z)
    J[:, 1, 1] = f / z
    J[:, 1, 2] = -f * y / (z * z)
    cov2d = J @ cov_cam @ np.transpose(J, (0, 2, 1))
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS
    return cov2d


def render(scene: Scene, camera: Camera) -> RenderOutput:
    """Front-to-back alpha compositing of every visible Gaussian."""
    n = len(scene)
    W, H = camera.width, camera.height
    pc = camera.to_camera(scene.means)
    visible = np.flatnonzero(pc[:, 2] > NEAR)

    pix_parts: List[np.ndarray] = []
    gid_parts: List[np.ndarray] = []
    w_parts: List[np.ndarray] = []
    T = np.ones(W * H, dtype=np.float64)

    if visible.size:
        pcv = pc[visible]
        f = camera.focal
        u = f * pcv[:, 0] / pcv[:, 2] + 0.5 * W
        v = f * pcv[:, 1] / pcv[:, 2] + 0.5 * H
        cov2d = _project_covariances(scene, camera, pcv, visible)
        det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
        conic_a = cov2d[:, 1, 1] / det
        conic_b = -cov2d[:, 0, 1] / det
        conic_c = cov2d[:, 0, 0] / det
        mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
        lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
        radius = SIGMA_CUTOFF * np.sqrt(lam)
        cutoff = -0.5 * SIGMA_CUTOFF ** 2

        order = np.argsort(pcv[:, 2], kind="stable")
        for k in order:
            x0 = max(int(np.ceil(u[k] - radius[k] - 0.5)), 0)
            x1 = min(int(np.floor(u[k] + radius[k] - 0.5)), W - 1)
            y0 = max(int(np.ceil(v[k] - radius[k] - 0.5)), 0)
            y1 = min(int(np.floor(v[k] + radius[k] - 0.5)), H - 1)
            if x0 > x1 or y0 > y1:
                continue
            xs = np.arange(x0, x1 + 1)
            ys = np.arange(y0, y1 + 1)
            dx = (xs + 0.5 - u[k])[None, :]
            dy = (ys + 0.5 - v[k])[:, None]
            power = -0.5 * (conic_a[k] * dx * dx + conic_c[k] * dy * dy) - conic_b[k] * dx * dy
            inside = power >= cutoff
            if not inside.any():
                continue
            gi = visible[k]
            alpha = np.minimum(scene.opacities[gi] * np.exp(power[inside]), ALPHA_MAX)
            flat = (ys[:, None] * W + xs[None, :])[inside]
            t = T[flat]
            live = (t >= T_MIN) & (alpha > 0.0)
            if not live.any():
                continue
            flat, alpha, t = flat[live], alpha[live], t[live]
            T[flat] = t * (1.0 - alpha)
            pix_parts.append(flat)
            gid_parts.append(np.full(flat.shape[0], gi, dtype=np.int64))
            w_parts.append(alpha * t)

    if pix_parts:
        pix = np.concatenate(pix_parts)
        gid = np.concatenate(gid_parts)
        wts = np.concatenate(w_parts)
    else:
        pix = np.zeros(0, dtype=np.int64)
        gid = np.zeros(0, dtype=np.int64)
        wts = np.zeros(0, dtype=np.float64)

    rgb = np.stack(
        [np.bincount(pix, weights=scene.colors[gid, c] * wts, minlength=W * H) for c in range(3)],
        axis=-1,
    ).reshape(H, W, 3)
    tau = np.bincount(gid, weights=wts, minlength=n)
    logger.debug("rendered %d/%d gaussians, %d contributions", visible.size, n, pix.size)
    for a in (rgb, pix, gid, wts, tau):
        a.flags.writeable = False
    return RenderOutput(rgb, pix, gid, wts, tau, W, H)


# ---------------------------------------------------------------------------
# Evidence and prior image
# ---------------------------------------------------------------------------

def _check_mask(out: RenderOutput, mask: Mask) -> None:
    if mask.shape != (out.height, out.width):
        raise ShapeMismatchError(f"mask {mask.shape} does not match render {(out.height, out.width)}")


def aggregate_evidence(out: RenderOutput, mask: Mask, target_class: int = 1) -> EvidenceMap:
    """Split each tau_i into weight inside ``target_class`` pixels (e1) and outside (e0)."""
    _check_mask(out, mask)
    if not 0 <= target_class < mask.num_classes:
        raise ShapeMismatchError(f"target_class {target_class} outside [0, {mask.num_classes})")
    n = out.num_gaussians
    inside = mask.labels.reshape(-1)[out.contrib_pixel] == target_class
    e1 = np.bincount(out.contrib_gaussian[inside], weights=out.contrib_weight[inside], minlength=n)
    e0 = np.bincount(out.contrib_gaussian[~inside], weights=out.contrib_weight[~inside], minlength=n)
    return EvidenceMap.binary(e1, e0)


def aggregate_evidence_multiclass(out: RenderOutput, mask: Mask) -> EvidenceMap:
    """``(N, K)`` evidence: column c sums each Gaussian's weight over class-c pixels."""
    _check_mask(out, mask)
    n, K = out.num_gaussians, mask.num_classes
    cls = mask.labels.reshape(-1)[out.contrib_pixel]
    flat = out.contrib_gaussian * K + cls
    counts = np.bincount(flat, weights=out.contrib_weight, minlength=n * K).reshape(n, K)
    return EvidenceMap(counts)


def render_prior_logit(
    scene: Scene,
    camera: Camera,
    posterior: PosteriorState,
    *,
    target_class: int = 1,
    out: Optional[RenderOutput] = None,
) -> np.ndarray:
    """(H,W) logit of ``R_soft = sum_i m_i w_i``, clamped to ``[eps, 1 - eps]`` first.

    Pass ``out`` to reuse an existing render of the same ``camera``.
    """
    if len(posterior) != len(scene):
        raise ShapeMismatchError(f"posterior has {len(posterior)} rows, scene {len(scene)} gaussians")
    if out is None:
        out = render(scene, camera)
    m = posterior.means()[:, target_class]
    soft = np.clip(out.pixel_sum(m), LOGIT_EPS, 1.0 - LOGIT_EPS)
    return special.logit(soft)
