#!/usr/bin/env python3
"""run.py - Active segmentation loop, end to end.

One run is:

1. initialise every Gaussian's posterior to the prior (or resume a checkpoint)
2. render the canonical view, get its mask, aggregate evidence, update
3. compute the current object centre and radius
4. for ``t = 1..T``: sample candidate cameras around the object, score them,
   select one, render it, get its mask, aggregate, update, refresh the object
   statistics, and optionally stop early once the mean predictive entropy is
   low enough
5. label every Gaussian by its MAP class and evaluate

:class:`SegmentationSession` holds the loop state so the same steps can be
driven by :func:`run_pipeline` (fixed strategies) or by the Gymnasium
environment (external policy).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .._b3seg_exception import (
    B3SegDomainError,
    B3SegMaskerError,
    B3SegRuntimeError,
    NoForegroundError,
    PipelineError,
    ShapeMismatchError,
)
from ..masker import MaskProvider, MaskRequest, make_masker
from ..planner import (
    CandidateSet,
    cameras_on_sphere,
    eig,
    eig_terms,
    exact_ig,
    ig_gap_bound,
    mean_predictive_entropy,
    render_candidates,
    sample_candidates,
    should_stop,
    up_vector_for,
)
from ..posterior import (
    ObjectStats,
    PosteriorState,
    initial_state_for,
    map_labels,
    object_stats,
    total_entropy,
    update,
)
from ..render import (
    Camera,
    Mask,
    RenderOutput,
    aggregate_evidence,
    aggregate_evidence_multiclass,
    render,
    render_prior_logit,
)
from ..scene import Scene, generate_synthetic, load_scene
from .config import RunConfig
from .metrics import evaluate_2d_miou, evaluate_3d_iou

logger = logging.getLogger(__name__)

CANONICAL_DISTANCE = 2.5
RUN_CSV_FIELDS = (
    "iter",
    "selected_index",
    "eig",
    "exact_ig",
    "total_entropy_before",
    "total_entropy_after",
    "wall_ms",
)

# seed streams, combined with the run seed
_STREAM_STRATEGY = 1
_STREAM_CANDIDATES = 2
_STREAM_POOL = 3
_STREAM_HOLDOUT = 4
_STREAM_SHIFT = 5

# strategy name -> SegmentationSession method that picks the next view
_STRATEGY_MAP: Dict[str, str] = {
    "eig": "_choose_eig",
    "random_sphere": "_choose_random_sphere",
    "random_holdout": "_choose_random_holdout",
}


def _stream_seed(seed: int, stream: int, *extra: int) -> int:
    return int(np.random.SeedSequence([int(seed), stream, *extra]).generate_state(1)[0])


def _log_event(event: str, iteration: int, **fields: Any) -> None:
    detail = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in fields.items())
    logger.info("%-14s iter=%d %s", event, iteration, detail)


# ---------------------------------------------------------------------------
# Report types
# ---------------------------------------------------------------------------

@dataclass
class IterationRow:
    iter: int
    selected_index: int
    eig: float
    exact_ig: float
    total_entropy_before: float
    total_entropy_after: float
    wall_ms: float
    mean_predictive_entropy: float = 0.0
    ig_gap: Optional[float] = None
    gap_bound: Optional[float] = None

    def csv_row(self) -> List[Any]:
        return [getattr(self, k) for k in RUN_CSV_FIELDS]

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        d = dict(self.__dict__)
        if not include_timing:
            d.pop("wall_ms")
        return d


@dataclass
class RunReport:
    config: RunConfig
    scene_id: str
    rows: List[IterationRow]
    state: PosteriorState
    labels: np.ndarray
    timing: Dict[str, float]
    initial_total_entropy: float
    canonical_total_entropy: float
    iou_3d: Optional[float] = None
    miou_2d: Optional[float] = None
    stopped_early: bool = False
    error: Optional[str] = None
    failed_iteration: Optional[int] = None
    debug_frames: List[Tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def entropy_curve(self) -> List[float]:
        """Total entropy after the canonical update, then after every loop iteration."""
        return [self.canonical_total_entropy] + [r.total_entropy_after for r in self.rows]

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        d: Dict[str, Any] = {
            "schema": 1,
            "scene_id": self.scene_id,
            "config": self.config.to_dict(),
            "rows": [r.to_dict(include_timing) for r in self.rows],
            "initial_total_entropy": self.initial_total_entropy,
            "canonical_total_entropy": self.canonical_total_entropy,
            "final_total_entropy": total_entropy(self.state),
            "iou_3d": self.iou_3d,
            "miou_2d": self.miou_2d,
            "stopped_early": self.stopped_early,
            "error": self.error,
            "failed_iteration": self.failed_iteration,
            "num_foreground": int(np.count_nonzero(self._foreground())),
        }
        if include_timing:
            d["timing"] = dict(self.timing)
        return d

    def _foreground(self) -> np.ndarray:
        labels = np.asarray(self.labels)
        return labels if labels.dtype == bool else labels == self.config.target_class


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------

def load_scene_for(config: RunConfig) -> Scene:
    if config.scene_path is not None:
        return load_scene(config.scene_path)
    return generate_synthetic(config.generator)


class SegmentationSession:
    """State of one active segmentation run, advanced one view at a time."""

    def __init__(
        self,
        config: RunConfig,
        scene: Optional[Scene] = None,
        masker: Optional[MaskProvider] = None,
        resume_counts: Optional[np.ndarray] = None,
    ):
        self.config = config
        self.scene = scene if scene is not None else load_scene_for(config)
        self.masker = masker or make_masker(config.masker, config.noise, config.prior_blend_weight)
        self.resume_counts = resume_counts
        self.binary = config.num_classes == 2
        # posterior column that holds the target class
        self.target_column = 1 if self.binary else config.target_class

        self.state: Optional[PosteriorState] = None
        self.stats: Optional[ObjectStats] = None
        self.iteration = 0
        self.rows: List[IterationRow] = []
        self.debug_frames: List[Tuple[int, np.ndarray, np.ndarray]] = []
        self.timing = {"mask_ms": 0.0, "view_select_ms": 0.0, "update_ms": 0.0}
        self.initial_total_entropy = 0.0
        self.canonical_total_entropy = 0.0
        self.used_pool: set = set()

        self.rng = np.random.default_rng(_stream_seed(config.seed, _STREAM_STRATEGY))
        center, radius = self.scene.bounding_sphere()
        self.scene_center = center
        self.scene_radius = radius
        self._pool: Optional[List[Camera]] = None

    # ------------------------------------------------------------------
    # Cameras
    # ------------------------------------------------------------------
    def canonical_camera(self) -> Camera:
        w, h = self.config.resolution
        if self.config.canonical_camera is not None:
            pos = np.asarray(self.config.canonical_camera, dtype=np.float64)
            return Camera(pos, self.scene_center, up_vector_for(self.scene_center - pos), self.config.fov, w, h)
        pos = self.scene_center + np.array([CANONICAL_DISTANCE * self.scene_radius, 0.0, 0.0])
        return Camera(pos, self.scene_center, (0.0, 0.0, 1.0), self.config.fov, w, h)

    def holdout_cameras(self) -> List[Camera]:
        return cameras_on_sphere(
            self.scene_center,
            CANONICAL_DISTANCE * self.scene_radius,
            self.config.holdout_views,
            _stream_seed(self.config.seed, _STREAM_HOLDOUT),
            self.config.fov,
            self.config.resolution,
        )

    def camera_pool(self) -> List[Camera]:
        """Fixed reconstruction-style camera set on the scene bounding sphere."""
        if self._pool is None:
            self._pool = cameras_on_sphere(
                self.scene_center,
                CANONICAL_DISTANCE * self.scene_radius,
                max(self.config.n_candidates, self.config.iterations),
                _stream_seed(self.config.seed, _STREAM_POOL),
                self.config.fov,
                self.config.resolution,
            )
        return self._pool

    # ------------------------------------------------------------------
    # Algorithm steps
    # ------------------------------------------------------------------
    def start(self) -> None:
        """Prior, canonical view update and initial object statistics."""
        cfg = self.config
        self.state = initial_state_for(self.scene, cfg.a_init, cfg.b_init, cfg.num_classes, self.resume_counts)
        self.initial_total_entropy = total_entropy(self.state)
        _log_event("init", 0, gaussians=len(self.scene), classes=cfg.num_classes,
                   total_entropy=self.initial_total_entropy)

        if self.resume_counts is not None:
            _log_event("canonical", 0, skipped="resumed-from-checkpoint")
        else:
            cam = self.canonical_camera()
            _log_event("canonical", 0, position=np.round(cam.position, 4).tolist())
            t0 = time.perf_counter()
            out = render(self.scene, cam)
            self.timing["view_select_ms"] += (time.perf_counter() - t0) * 1e3
            self._guard(0, lambda: self._observe(0, cam, out))
            _log_event("initial-update", 0, total_entropy=total_entropy(self.state))

        self.canonical_total_entropy = total_entropy(self.state)
        self.refresh_stats(0)
        if cfg.center_shift > 0:
            rng = np.random.default_rng(_stream_seed(cfg.seed, _STREAM_SHIFT))
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            shifted = self.stats.center + cfg.center_shift * self.stats.radius * d
            self.stats = ObjectStats(shifted, self.stats.radius)
            _log_event("center-shift", 0, shift=cfg.center_shift, center=np.round(shifted, 4).tolist())

    def refresh_stats(self, iteration: int) -> ObjectStats:
        try:
            self.stats = object_stats(self.scene, self.state, self.target_column)
        except NoForegroundError:
            logger.warning("no foreground gaussian at iteration %d; centring candidates on the scene", iteration)
            self.stats = ObjectStats(self.scene_center.copy(), float(self.scene_radius))
        event = "object-stats" if iteration == 0 else "stats-refresh"
        _log_event(event, iteration, center=np.round(self.stats.center, 4).tolist(), radius=self.stats.radius)
        return self.stats

    def candidates(self, iteration: int) -> CandidateSet:
        cands = sample_candidates(
            self.stats,
            self.config.fov,
            self.config.n_candidates,
            _stream_seed(self.config.seed, _STREAM_CANDIDATES, iteration),
            self.config.resolution,
        )
        _log_event("candidates", iteration, n=len(cands), sphere_radius=cands.sphere_radius)
        return cands

    def score(self, cands: CandidateSet) -> Tuple[List[RenderOutput], np.ndarray]:
        outs = render_candidates(self.scene, cands.cameras, self.config.threads)
        scores = np.array([float(eig_terms(out, self.state).sum()) for out in outs])
        return outs, scores

    def _choose(self, iteration: int) -> Tuple[int, Camera, RenderOutput, float]:
        return getattr(self, _STRATEGY_MAP[self.config.strategy])(iteration)

    def _choose_eig(self, iteration: int) -> Tuple[int, Camera, RenderOutput, float]:
        cands = self.candidates(iteration)
        outs, scores = self.score(cands)
        _log_event("score", iteration, best=float(scores.max()), mean=float(scores.mean()))
        index = int(np.argmax(scores))
        return index, cands.cameras[index], outs[index], float(scores[index])

    def _choose_random_sphere(self, iteration: int) -> Tuple[int, Camera, RenderOutput, float]:
        cands = self.candidates(iteration)
        index = int(self.rng.integers(len(cands)))
        out = render(self.scene, cands.cameras[index])
        return index, cands.cameras[index], out, eig(out, self.state)

    def _choose_random_holdout(self, iteration: int) -> Tuple[int, Camera, RenderOutput, float]:
        # draw without replacement until the pool is exhausted
        pool = self.camera_pool()
        free = [i for i in range(len(pool)) if i not in self.used_pool] or list(range(len(pool)))
        index = int(free[int(self.rng.integers(len(free)))])
        self.used_pool.add(index)
        out = render(self.scene, pool[index])
        return index, pool[index], out, eig(out, self.state)

    def step(self, choice: Optional[Tuple[int, Camera, RenderOutput, float]] = None) -> IterationRow:
        """One loop iteration; ``choice`` overrides the configured strategy."""
        if self.state is None:
            self.start()
        iteration = self.iteration + 1
        t_iter = time.perf_counter()
        before = total_entropy(self.state)

        t0 = time.perf_counter()
        if choice is None:
            choice = self._guard(iteration, lambda: self._choose(iteration))
        index, cam, out, score = choice
        self.timing["view_select_ms"] += (time.perf_counter() - t0) * 1e3
        _log_event("select", iteration, index=index, eig=score)
        _log_event("render", iteration, coverage=float(out.coverage().mean()))

        prior_state = self.state
        mask = self._guard(iteration, lambda: self._observe(iteration, cam, out))
        real = exact_ig(out, mask, 1 if self.binary else self.config.target_class, prior_state)
        gap = bound = None
        if self.binary:
            g, b = ig_gap_bound(out, mask, 1, prior_state)
            gap, bound = float(g.sum()), float(b.sum())

        self.refresh_stats(iteration)
        after = total_entropy(self.state)
        row = IterationRow(
            iter=iteration,
            selected_index=index,
            eig=float(score),
            exact_ig=float(real),
            total_entropy_before=before,
            total_entropy_after=after,
            wall_ms=(time.perf_counter() - t_iter) * 1e3,
            mean_predictive_entropy=mean_predictive_entropy(self.state),
            ig_gap=gap,
            gap_bound=bound,
        )
        self.rows.append(row)
        self.iteration = iteration
        return row

    def _observe(self, iteration: int, cam: Camera, out: RenderOutput) -> Mask:
        """Mask the view and fold its evidence into the posterior."""
        cfg = self.config
        t0 = time.perf_counter()
        prior_logit = None
        if cfg.prior_blend_weight > 0:
            prior_logit = render_prior_logit(self.scene, cam, self.state, target_class=self.target_column, out=out)
        req = MaskRequest(out, cam, cfg.target_class, prior_logit, cfg.num_classes)
        mask = self.masker.mask(req, self.scene, iteration)
        self.timing["mask_ms"] += (time.perf_counter() - t0) * 1e3
        _log_event("mask", iteration, foreground_px=int(np.count_nonzero(mask.labels)))
        if cfg.debug_png:
            self.debug_frames.append((iteration, np.array(out.rgb), np.array(mask.labels)))

        t0 = time.perf_counter()
        if self.binary:
            evidence = aggregate_evidence(out, mask, 1)
        else:
            evidence = aggregate_evidence_multiclass(out, mask)
        _log_event("aggregate", iteration, mass=float(evidence.counts.sum()))
        self.state = update(self.state, evidence)
        self.timing["update_ms"] += (time.perf_counter() - t0) * 1e3
        _log_event("update", iteration, total_entropy=total_entropy(self.state))
        return mask

    @staticmethod
    def _guard(iteration: int, fn: Callable[[], Any]) -> Any:
        try:
            return fn()
        except (B3SegMaskerError, B3SegRuntimeError, B3SegDomainError) as err:
            if isinstance(err, PipelineError):
                raise
            raise PipelineError(f"{type(err).__name__}: {err}", iteration=iteration) from err

    def should_stop(self) -> bool:
        target = self.config.early_stop_target
        return target is not None and should_stop(self.state, target)

    def labels(self) -> np.ndarray:
        return map_labels(self.state)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _evaluate(session: SegmentationSession) -> Tuple[Optional[float], Optional[float]]:
    if not session.scene.has_labels:
        logger.warning("scene has no labels; skipping evaluation")
        return None, None
    labels = session.labels()
    target = session.config.target_class
    iou = evaluate_3d_iou(labels, session.scene, target)
    miou = evaluate_2d_miou(labels, session.scene, session.holdout_cameras(), target)
    return iou, miou


def _report(session: SegmentationSession, total_ms: float, stopped: bool,
            error: Optional[PipelineError] = None) -> RunReport:
    timing = dict(session.timing)
    timing["total_ms"] = total_ms
    timing["other_ms"] = max(total_ms - sum(session.timing.values()), 0.0)
    state = session.state
    if state is None:
        state = initial_state_for(session.scene, session.config.a_init, session.config.b_init,
                                  session.config.num_classes)
    iou = miou = None
    if error is None:
        iou, miou = _evaluate(session)
    return RunReport(
        config=session.config,
        scene_id=session.scene.id,
        rows=list(session.rows),
        state=state,
        labels=map_labels(state),
        timing=timing,
        initial_total_entropy=session.initial_total_entropy,
        canonical_total_entropy=session.canonical_total_entropy,
        iou_3d=iou,
        miou_2d=miou,
        stopped_early=stopped,
        error=str(error) if error is not None else None,
        failed_iteration=error.iteration if error is not None else None,
        debug_frames=list(session.debug_frames),
    )


def run_pipeline(config: RunConfig, scene: Optional[Scene] = None,
                 masker: Optional[MaskProvider] = None) -> RunReport:
    """Run the whole active loop and, when ``output_dir`` is set, write its artifacts.

    On a pipeline failure the partial report is still written before the
    :class:`PipelineError` propagates.
    """
    from .artifacts import emit_artifacts, load_checkpoint, save_checkpoint

    resume = None
    if config.checkpoint and Path(config.checkpoint).exists():
        resume = load_checkpoint(config.checkpoint)
        if resume.shape[1] != config.num_classes:
            raise ShapeMismatchError(
                f"checkpoint has {resume.shape[1]} classes, config {config.num_classes}"
            )
        logger.info("resuming posterior from %s", config.checkpoint)

    session = SegmentationSession(config, scene, masker, resume_counts=resume)
    t_start = time.perf_counter()
    stopped = started = False
    try:
        session.start()
        started = True
        for _ in range(config.iterations):
            row = session.step()
            if session.should_stop():
                _log_event("early-stop", row.iter, mean_predictive_entropy=row.mean_predictive_entropy,
                           target=config.early_stop_target)
                stopped = True
                break
    except Exception as err:
        failure = err
        if not isinstance(err, PipelineError):
            failed_at = session.iteration + 1 if started else 0
            failure = PipelineError(f"{type(err).__name__}: {err}", iteration=failed_at)
        report = _report(session, (time.perf_counter() - t_start) * 1e3, stopped, failure)
        logger.error("pipeline failed at iteration %d: %s", failure.iteration, failure)
        if config.output_dir:
            emit_artifacts(report, config.output_dir)
        if failure is err:
            raise
        raise failure from err

    report = _report(session, (time.perf_counter() - t_start) * 1e3, stopped)
    _log_event("final", session.iteration, foreground=int(np.count_nonzero(report._foreground())),
               iou_3d=report.iou_3d if report.iou_3d is not None else float("nan"))
    if config.checkpoint:
        save_checkpoint(config.checkpoint, report.state)
    if config.output_dir:
        emit_artifacts(report, config.output_dir)
    return report
