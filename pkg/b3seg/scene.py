"""scene.py - Gaussian splat scenes, splat-file I/O and a synthetic generator.

A :class:`Scene` is an immutable, index-stable bundle of per-Gaussian arrays.
Posterior state is index-aligned with it, so nothing here ever reorders
Gaussians after construction.

Two on-disk formats are supported:

``binary_splat``
    Little-endian. Header ``b"B3SP"``, ``u32 version=1``, ``u32 count``,
    ``u32 flags`` (bit 0: labels present), then ``count`` fixed-size records
    ``mean f32x3, scale f32x3, rotation f32x4 (w,x,y,z), opacity f32,
    color f32x3[, label u32]``.
``json_splat``
    ``{"version": 1, "gaussians": [{"mean", "scale", "rot", "opacity",
    "color", "label"?}, ...]}``.

Covariance is never stored; it is rebuilt as ``R diag(s^2) R^T`` so it is
positive semi-definite by construction.
"""
from __future__ import annotations

import json
import logging
import re
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ._b3seg_exception import (
    InvalidGeneratorSpecError,
    SceneGenerationError,
    SplatParseError,
    SplatValidationError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_MAGIC = b"B3SP"
_VERSION = 1
_FLAG_LABELS = 0x1
_HEADER = struct.Struct("<4sIII")

_RECORD_FIELDS = [
    ("mean", "<f4", (3,)),
    ("scale", "<f4", (3,)),
    ("rot", "<f4", (4,)),
    ("opacity", "<f4"),
    ("color", "<f4", (3,)),
]
_RECORD = np.dtype(_RECORD_FIELDS)
_RECORD_LABELED = np.dtype(_RECORD_FIELDS + [("label", "<u4")])

QUAT_NORM_TOL = 1e-6


class SplatFormat(str, Enum):
    binary_splat = "binary_splat"
    json_splat = "json_splat"

    @classmethod
    def from_path(cls, path: PathLike) -> "SplatFormat":
        """Guess the format from the extension (``.json`` → JSON, else binary)."""
        return cls.json_splat if Path(path).suffix.lower() == ".json" else cls.binary_splat


@dataclass(frozen=True)
class Gaussian:
    """One splat. ``rotation`` is a unit quaternion ``(w, x, y, z)``."""
    mean: Tuple[float, float, float]
    scale: Tuple[float, float, float]
    rotation: Tuple[float, float, float, float]
    opacity: float
    color: Tuple[float, float, float]
    gt_label: Optional[int] = None


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """(N,4) ``w,x,y,z`` unit quaternions → (N,3,3) rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _validate_arrays(means, scales, rotations, opacities, colors, labels) -> None:
    """Raise :class:`SplatValidationError` on the first offending field/index."""
    n = means.shape[0]
    checks = [
        ("mean", ~np.all(np.isfinite(means), axis=1)),
        ("scale", ~(np.all(np.isfinite(scales), axis=1) & np.all(scales > 0, axis=1))),
        ("rotation", ~(np.all(np.isfinite(rotations), axis=1)
                       & (np.abs(np.linalg.norm(rotations, axis=1) - 1.0) <= QUAT_NORM_TOL))),
        ("opacity", ~(np.isfinite(opacities) & (opacities >= 0.0) & (opacities <= 1.0))),
        ("color", ~(np.all(np.isfinite(colors), axis=1)
                    & np.all((colors >= 0.0) & (colors <= 1.0), axis=1))),
    ]
    if labels is not None:
        checks.append(("label", labels < 0))
    # report the lowest index first, field order breaking ties
    first = None
    for name, bad in checks:
        idx = np.flatnonzero(bad)
        if idx.size and (first is None or idx[0] < first[1]):
            first = (name, int(idx[0]))
    if first is not None:
        name, i = first
        value = {
            "mean": means, "scale": scales, "rotation": rotations,
            "opacity": opacities, "color": colors, "label": labels,
        }[name][i]
        raise SplatValidationError(name, i, value.tolist() if hasattr(value, "tolist") else value)
    if n == 0:
        raise SplatValidationError("gaussians", 0, "empty scene")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Scene:
    """Array-backed, immutable Gaussian scene.

    Arrays: ``means (N,3)``, ``scales (N,3)``, ``rotations (N,4)``,
    ``opacities (N,)``, ``colors (N,3)``, ``labels (N,) int64`` or ``None``.
    """
    means: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    labels: Optional[np.ndarray] = None
    id: str = "scene"

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        scales = np.asarray(self.scales, dtype=np.float64).reshape(-1, 3)
        rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        opacities = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
        colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        labels = None if self.labels is None else np.asarray(self.labels, dtype=np.int64).reshape(-1)
        n = means.shape[0]
        if any(a.shape[0] != n for a in (scales, rotations, opacities, colors)) or (
            labels is not None and labels.shape[0] != n
        ):
            raise SplatValidationError("gaussians", 0, "per-field lengths differ")
        _validate_arrays(means, scales, rotations, opacities, colors, labels)
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "scales", _frozen(scales))
        object.__setattr__(self, "rotations", _frozen(rotations))
        object.__setattr__(self, "opacities", _frozen(opacities))
        object.__setattr__(self, "colors", _frozen(colors))
        object.__setattr__(self, "labels", None if labels is None else _frozen(labels))

    # ---- construction -------------------------------------------------
    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian], id: str = "scene") -> "Scene":
        if not gaussians:
            raise SplatValidationError("gaussians", 0, "empty scene")
        has = [g.gt_label is not None for g in gaussians]
        if any(has) and not all(has):
            raise SplatValidationError("label", has.index(False), None)
        return cls(
            means=[g.mean for g in gaussians],
            scales=[g.scale for g in gaussians],
            rotations=[g.rotation for g in gaussians],
            opacities=[g.opacity for g in gaussians],
            colors=[g.color for g in gaussians],
            labels=[g.gt_label for g in gaussians] if all(has) else None,
            id=id,
        )

    # ---- access -------------------------------------------------------
    def __len__(self) -> int:
        return int(self.means.shape[0])

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            mean=tuple(self.means[i].tolist()),
            scale=tuple(self.scales[i].tolist()),
            rotation=tuple(self.rotations[i].tolist()),
            opacity=float(self.opacities[i]),
            color=tuple(self.colors[i].tolist()),
            gt_label=None if self.labels is None else int(self.labels[i]),
        )

    def covariances(self) -> np.ndarray:
        """(N,3,3) world covariances ``R diag(s^2) R^T``."""
        R = quaternion_to_matrix(self.rotations)
        M = R * self.scales[:, None, :]
        return M @ np.transpose(M, (0, 2, 1))

    def bounding_sphere(self) -> Tuple[np.ndarray, float]:
        """Centre of the means' bounding box and the largest distance to it."""
        center = 0.5 * (self.means.min(axis=0) + self.means.max(axis=0))
        radius = float(np.linalg.norm(self.means - center, axis=1).max())
        return center, max(radius, 1e-3)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def load_scene(path: PathLike, format: Union[SplatFormat, str, None] = None) -> Scene:
    """Read a scene in file order. ``format=None`` guesses from the extension."""
    path = Path(path)
    fmt = SplatFormat(format) if format is not None else SplatFormat.from_path(path)
    if fmt is SplatFormat.binary_splat:
        scene = _load_binary(path.read_bytes(), scene_id=path.stem)
    else:
        scene = _load_json(path.read_text(encoding="utf-8"), scene_id=path.stem)
    logger.debug("loaded %d gaussians from %s (%s)", len(scene), path, fmt.value)
    return scene


def save_scene(scene: Scene, path: PathLike, format: Union[SplatFormat, str, None] = None) -> None:
    path = Path(path)
    fmt = SplatFormat(format) if format is not None else SplatFormat.from_path(path)
    try:
        if fmt is SplatFormat.binary_splat:
            path.write_bytes(_dump_binary(scene))
        else:
            path.write_text(_dump_json(scene), encoding="utf-8")
    except OSError as err:
        raise OSError(f"could not write scene to {path}: {err}") from err
    logger.debug("saved %d gaussians to %s (%s)", len(scene), path, fmt.value)


def _load_binary(data: bytes, *, scene_id: str) -> Scene:
    if len(data) < _HEADER.size:
        raise SplatParseError("truncated header", offset=len(data))
    magic, version, count, flags = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise SplatParseError(f"bad magic {magic!r}", offset=0)
    if version != _VERSION:
        raise SplatParseError(f"unsupported version {version}", offset=4)
    if flags & ~_FLAG_LABELS:
        raise SplatParseError(f"unknown flag bits {flags:#x}", offset=12)
    dtype = _RECORD_LABELED if flags & _FLAG_LABELS else _RECORD
    expected = _HEADER.size + count * dtype.itemsize
    if len(data) < expected:
        # offset of the first incomplete record
        complete = (len(data) - _HEADER.size) // dtype.itemsize
        raise SplatParseError(
            f"truncated record {complete} of {count}",
            offset=_HEADER.size + complete * dtype.itemsize,
        )
    if len(data) > expected:
        raise SplatParseError("trailing bytes after last record", offset=expected)
    rec = np.frombuffer(data, dtype=dtype, count=count, offset=_HEADER.size)
    return Scene(
        means=rec["mean"].astype(np.float64),
        scales=rec["scale"].astype(np.float64),
        rotations=rec["rot"].astype(np.float64),
        opacities=rec["opacity"].astype(np.float64),
        colors=rec["color"].astype(np.float64),
        labels=rec["label"].astype(np.int64) if flags & _FLAG_LABELS else None,
        id=scene_id,
    )


def _dump_binary(scene: Scene) -> bytes:
    labeled = scene.has_labels
    rec = np.zeros(len(scene), dtype=_RECORD_LABELED if labeled else _RECORD)
    rec["mean"] = scene.means
    rec["scale"] = scene.scales
    rec["rot"] = scene.rotations
    rec["opacity"] = scene.opacities
    rec["color"] = scene.colors
    if labeled:
        rec["label"] = scene.labels
    header = _HEADER.pack(_MAGIC, _VERSION, len(scene), _FLAG_LABELS if labeled else 0)
    return header + rec.tobytes()


_JSON_GAP = re.compile(r"[\s,]*")


def _record_offset(text: str, i: int) -> int:
    """Character position where record ``i`` of the ``gaussians`` list starts (0 if not found)."""
    key = text.find('"gaussians"')
    start = text.find("[", key) if key >= 0 else -1
    if start < 0:
        return 0
    decoder = json.JSONDecoder()
    pos = _JSON_GAP.match(text, start + 1).end()
    try:
        for _ in range(i):
            _, pos = decoder.raw_decode(text, pos)
            pos = _JSON_GAP.match(text, pos).end()
    except json.JSONDecodeError:
        return start
    return pos


def _load_json(text: str, *, scene_id: str) -> Scene:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise SplatParseError(err.msg, offset=err.pos) from err
    if not isinstance(doc, dict) or doc.get("version") != _VERSION:
        raise SplatParseError("expected top-level object with \"version\": 1", offset=0)
    records = doc.get("gaussians")
    if not isinstance(records, list) or not records:
        raise SplatParseError("\"gaussians\" must be a non-empty list", offset=0)

    def _vec(rec, key, n, i):
        v = rec.get(key)
        if not isinstance(v, list) or len(v) != n:
            raise SplatParseError(f"record {i}: \"{key}\" must be a list of {n} numbers",
                                  offset=_record_offset(text, i))
        try:
            return [float(x) for x in v]
        except (TypeError, ValueError) as err:
            raise SplatParseError(f"record {i}: \"{key}\" is not numeric",
                                  offset=_record_offset(text, i)) from err

    gaussians: List[Gaussian] = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise SplatParseError(f"record {i} is not an object", offset=_record_offset(text, i))
        try:
            opacity = float(rec["opacity"])
        except (KeyError, TypeError, ValueError) as err:
            raise SplatParseError(f"record {i}: missing or non-numeric \"opacity\"",
                                  offset=_record_offset(text, i)) from err
        label = rec.get("label")
        if label is not None and (not isinstance(label, int) or isinstance(label, bool)):
            raise SplatValidationError("label", i, label)
        gaussians.append(Gaussian(
            mean=tuple(_vec(rec, "mean", 3, i)),
            scale=tuple(_vec(rec, "scale", 3, i)),
            rotation=tuple(_vec(rec, "rot", 4, i)),
            opacity=opacity,
            color=tuple(_vec(rec, "color", 3, i)),
            gt_label=label,
        ))
    return Scene.from_gaussians(gaussians, id=scene_id)


def _dump_json(scene: Scene) -> str:
    records = []
    for i in range(len(scene)):
        rec = {
            "mean": scene.means[i].tolist(),
            "scale": scene.scales[i].tolist(),
            "rot": scene.rotations[i].tolist(),
            "opacity": float(scene.opacities[i]),
            "color": scene.colors[i].tolist(),
        }
        if scene.has_labels:
            rec["label"] = int(scene.labels[i])
        records.append(rec)
    return json.dumps({"version": _VERSION, "gaussians": records}, indent=1)


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

# clutter stays this many object radii from every object centre
CLUTTER_KEEP_OUT = 4.0

_PALETTE = np.array([
    [0.85, 0.20, 0.15],
    [0.15, 0.55, 0.85],
    [0.20, 0.75, 0.30],
    [0.90, 0.75, 0.10],
    [0.60, 0.25, 0.75],
    [0.95, 0.50, 0.10],
])


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of :func:`generate_synthetic`.

    Objects are opaque spherical shells of radius ``object_radius`` built from
    tangent discs, centred in the inner half of the ``[-extent, extent]^3``
    workspace. Background Gaussians form a floor slab at ``z = -extent`` plus
    clutter kept ``CLUTTER_KEEP_OUT * object_radius`` away from every object,
    which is outside the candidate-camera sphere, and off each object's line
    of sight towards ``+x``.
    """
    seed: int = 7
    n_objects: int = 1
    gaussians_per_object: int = 100
    background_count: int = 400
    workspace_extent: float = 1.0
    object_radius: float = 0.2
    floor_fraction: float = 0.6
    max_retries: int = 200

    def __post_init__(self):
        for name in ("n_objects", "gaussians_per_object", "background_count"):
            if int(getattr(self, name)) < 1:
                raise InvalidGeneratorSpecError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.workspace_extent > 0:
            raise InvalidGeneratorSpecError(f"workspace_extent must be > 0, got {self.workspace_extent}")
        if not self.object_radius > 0:
            raise InvalidGeneratorSpecError(f"object_radius must be > 0, got {self.object_radius}")
        if not 0.0 <= self.floor_fraction <= 1.0:
            raise InvalidGeneratorSpecError(f"floor_fraction must be in [0,1], got {self.floor_fraction}")


def _random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1.0
    return q


def _as_f32(a: np.ndarray) -> np.ndarray:
    # values representable in the binary format, so file round-trips are exact
    return a.astype(np.float32).astype(np.float64)


_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def _sphere_lattice(rng: np.random.Generator, n: int) -> np.ndarray:
    """(n,3) near-uniform unit directions: a Fibonacci lattice under a random rotation."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    rho = np.sqrt(1.0 - z * z)
    phi = i * _GOLDEN_ANGLE
    dirs = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    R = quaternion_to_matrix(_random_quaternions(rng, 1))[0]
    return dirs @ R.T


def _z_to(normals: np.ndarray) -> np.ndarray:
    """(N,4) ``w,x,y,z`` quaternions turning the local z axis onto each unit normal."""
    q = np.column_stack([
        1.0 + normals[:, 2],
        -normals[:, 1],
        normals[:, 0],
        np.zeros(len(normals)),
    ])
    flipped = q[:, 0] < 1e-9
    q[flipped] = [0.0, 1.0, 0.0, 0.0]
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _object_shell(rng: np.random.Generator, center: np.ndarray, r: float, n: int):
    """Opaque surface of radius ``r``: tangent discs on a sphere lattice."""
    normals = _sphere_lattice(rng, n)
    spacing = r * np.sqrt(4.0 * np.pi / n)
    tangent = min(0.85 * spacing, 0.5 * r) * rng.uniform(0.9, 1.2, size=(n, 2))
    scales = np.column_stack([tangent, np.full(n, 0.05 * r)])
    return center + r * normals, scales, _z_to(normals), rng.uniform(0.9, 1.0, size=n)


def _clutter_blocked(points: np.ndarray, centers: List[np.ndarray], keep_out: float) -> np.ndarray:
    # near an object, or on its line of sight towards +x
    blocked = np.zeros(len(points), dtype=bool)
    for c in centers:
        d = points - c
        lateral = np.linalg.norm(d[:, 1:], axis=1)
        blocked |= np.linalg.norm(d, axis=1) < keep_out
        blocked |= (d[:, 0] > 0.0) & (lateral < keep_out)
    return blocked


def generate_synthetic(spec: SceneSpec) -> Scene:
    """Deterministic labelled scene: objects carry labels ``1..n``, background ``0``."""
    rng = np.random.default_rng(spec.seed)
    E = float(spec.workspace_extent)
    r = float(spec.object_radius)
    min_sep = 2.0 * (r + r)
    keep_out = CLUTTER_KEEP_OUT * r
    # object centres stay high enough that the floor is outside the keep-out
    z_low = min(max(-0.25 * E, -E + keep_out), 0.5 * E)

    centers: List[np.ndarray] = []
    for k in range(spec.n_objects):
        for _ in range(spec.max_retries):
            c = np.array([
                rng.uniform(-0.5 * E, 0.5 * E),
                rng.uniform(-0.5 * E, 0.5 * E),
                rng.uniform(z_low, 0.5 * E),
            ])
            if all(np.linalg.norm(c - o) >= min_sep for o in centers):
                centers.append(c)
                break
        else:
            raise SceneGenerationError(
                f"could not place object {k + 1} of {spec.n_objects} at separation {min_sep:.3g} "
                f"within extent {E:.3g} after {spec.max_retries} tries; increase workspace_extent"
            )

    n_obj = spec.gaussians_per_object
    means, scales, quats, opac, colors, labels = [], [], [], [], [], []
    for k, c in enumerate(centers):
        mu, s, q, o = _object_shell(rng, c, r, n_obj)
        means.append(mu)
        scales.append(s)
        quats.append(q)
        opac.append(o)
        base = _PALETTE[k % len(_PALETTE)]
        colors.append(np.clip(base + rng.normal(0.0, 0.05, size=(n_obj, 3)), 0.0, 1.0))
        labels.append(np.full(n_obj, k + 1, dtype=np.int64))

    n_floor = int(round(spec.floor_fraction * spec.background_count))
    n_clutter = spec.background_count - n_floor
    floor = np.column_stack([
        rng.uniform(-E, E, size=n_floor),
        rng.uniform(-E, E, size=n_floor),
        -E + rng.normal(0.0, 0.01 * E, size=n_floor),
    ])
    floor_scales = np.column_stack([
        rng.uniform(0.04, 0.09, size=(n_floor, 2)) * E,
        np.full(n_floor, 0.005 * E),
    ])

    clutter = rng.uniform(-E, E, size=(n_clutter, 3))
    for _ in range(spec.max_retries):
        bad = _clutter_blocked(clutter, centers, keep_out)
        if not bad.any():
            break
        clutter[bad] = rng.uniform(-E, E, size=(int(bad.sum()), 3))
    else:
        raise SceneGenerationError(
            f"could not keep clutter {keep_out:.3g} away from objects within extent {E:.3g}; "
            "increase workspace_extent"
        )
    clutter_scales = rng.uniform(0.02, 0.06, size=(n_clutter, 3)) * E

    n_bg = spec.background_count
    means.append(np.concatenate([floor, clutter]))
    scales.append(np.concatenate([floor_scales, clutter_scales]))
    quats.append(_random_quaternions(rng, n_bg))
    opac.append(rng.uniform(0.3, 0.9, size=n_bg))
    gray = rng.uniform(0.3, 0.6, size=(n_bg, 1))
    colors.append(np.clip(gray * np.array([1.0, 0.95, 0.85]) + rng.normal(0.0, 0.03, size=(n_bg, 3)), 0.0, 1.0))
    labels.append(np.zeros(n_bg, dtype=np.int64))

    quats = _as_f32(np.concatenate(quats))
    # renormalise after rounding so the unit-norm check holds in float64
    quats = _as_f32(quats / np.linalg.norm(quats, axis=1, keepdims=True))

    scene = Scene(
        means=_as_f32(np.concatenate(means)),
        scales=_as_f32(np.concatenate(scales)),
        rotations=quats,
        opacities=_as_f32(np.concatenate(opac)),
        colors=_as_f32(np.concatenate(colors)),
        labels=np.concatenate(labels),
        id=f"synthetic-seed{spec.seed}",
    )
    logger.debug(
        "generated scene %s: %d objects x %d + %d background",
        scene.id, spec.n_objects, n_obj, n_bg,
    )
    return scene
