"""planner.py - Active next-best-view selection by analytic expected information gain.

Candidates are cameras sampled uniformly on a sphere around the current object
estimate. Each candidate is rendered once; its responsibilities ``tau_i`` and
the current posterior means give expected evidence ``m_i tau_i`` /
``(1 - m_i) tau_i`` without asking for a mask, and the expected entropy drop
of that evidence is the candidate's score. The exact information gain of a
real mask is available as the reference the score is checked against.
"""
from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ._b3seg_exception import BudgetExceededError, ProbabilityDomainError, ShapeMismatchError
from .posterior import (
    EvidenceMap,
    ObjectStats,
    PosteriorState,
    _entropy_rows,
    beta_entropy_slope,
    predictive_entropy,
    update,
)
from .render import Camera, Mask, RenderOutput, aggregate_evidence, aggregate_evidence_multiclass, render
from .scene import Scene

logger = logging.getLogger(__name__)

MAX_BRUTE_FORCE_CANDIDATES = 7
MAX_BRUTE_FORCE_K = 3
GREEDY_BOUND = 1.0 - 1.0 / np.e


@dataclass(frozen=True, eq=False)
class CandidateSet:
    cameras: List[Camera]
    sphere_center: np.ndarray
    sphere_radius: float
    rng_seed: int

    def __len__(self) -> int:
        return len(self.cameras)


@dataclass(frozen=True, eq=False)
class ViewScore:
    camera_index: int
    eig: float
    per_gaussian_drop: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# Candidate sampling
# ---------------------------------------------------------------------------

def sphere_radius_for(stats: ObjectStats, fov: float) -> float:
    """Distance that frames an object of radius ``r_obj`` with a 1.5 margin."""
    return 1.5 * stats.radius / np.tan(0.5 * fov)


def up_vector_for(direction: np.ndarray) -> np.ndarray:
    """World +z made orthogonal to ``direction``; +x when they are nearly parallel."""
    d = direction / np.linalg.norm(direction)
    ref = np.array([0.0, 0.0, 1.0])
    if abs(float(np.dot(d, ref))) > 0.999:
        ref = np.array([1.0, 0.0, 0.0])
    up = ref - np.dot(ref, d) * d
    return up / np.linalg.norm(up)


def cameras_on_sphere(
    center: np.ndarray,
    radius: float,
    n: int,
    seed: int,
    fov: float,
    resolution: Tuple[int, int],
) -> List[Camera]:
    """``n`` area-uniform cameras on a sphere, all looking at ``center``."""
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((int(n), 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    center = np.asarray(center, dtype=np.float64)
    width, height = resolution
    cams = []
    for d in dirs:
        pos = center + radius * d
        cams.append(Camera(pos, center, up_vector_for(center - pos), fov, width, height))
    return cams


def sample_candidates(
    stats: ObjectStats,
    fov: float,
    n_cand: int,
    seed: int,
    resolution: Tuple[int, int] = (128, 128),
) -> CandidateSet:
    if n_cand < 1:
        raise ShapeMismatchError(f"n_cand must be >= 1, got {n_cand}")
    r_sphere = sphere_radius_for(stats, fov)
    cams = cameras_on_sphere(stats.center, r_sphere, n_cand, seed, fov, resolution)
    logger.debug("sampled %d candidates at r=%.4f around %s", n_cand, r_sphere, stats.center)
    return CandidateSet(cams, np.asarray(stats.center, dtype=np.float64), float(r_sphere), int(seed))


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------

def _check_lengths(out: RenderOutput, state: PosteriorState) -> None:
    if out.num_gaussians != len(state):
        raise ShapeMismatchError(f"render has {out.num_gaussians} gaussians, state {len(state)}")


def expected_evidence(out: RenderOutput, state: PosteriorState) -> EvidenceMap:
    """Mask-free evidence ``m_{i,c} tau_i`` per class."""
    _check_lengths(out, state)
    tau = out.responsibilities
    if state.num_classes == 2:
        m = state.means()[:, 1]
        e1 = m * tau
        # e0 is the remainder so e1 + e0 reproduces tau
        return EvidenceMap.binary(e1, np.maximum(tau - e1, 0.0))
    return EvidenceMap(state.means() * tau[:, None])


def entropy_drop(state: PosteriorState, evidence: EvidenceMap) -> np.ndarray:
    """Per-Gaussian ``H(before) - H(after)``; exactly 0 where the evidence is 0."""
    drop = np.zeros(len(state))
    seen = evidence.counts.sum(axis=1) > 0
    if seen.any():
        before = state.counts[seen]
        drop[seen] = _entropy_rows(before) - _entropy_rows(before + evidence.counts[seen])
    return drop


def eig_terms(out: RenderOutput, state: PosteriorState) -> np.ndarray:
    return entropy_drop(state, expected_evidence(out, state))


def eig(out: RenderOutput, state: PosteriorState) -> float:
    """Expected information gain of a rendered candidate."""
    return float(eig_terms(out, state).sum())


def exact_ig(out: RenderOutput, mask: Mask, target: int, state: PosteriorState) -> float:
    """Realised entropy drop of the mask's evidence."""
    _check_lengths(out, state)
    if state.num_classes == 2:
        ev = aggregate_evidence(out, mask, target)
    else:
        ev = aggregate_evidence_multiclass(out, mask)
    return float(entropy_drop(state, ev).sum())


def ig_gap_bound(
    out: RenderOutput,
    mask: Mask,
    target: int,
    state: PosteriorState,
    grid: int = 65,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-Gaussian ``|IG_i - EIG_i|`` and its mean-value bound (binary states).

    The bound is ``max |f_i'(u)| * |m_i tau_i - W_i|`` where
    ``f_i(u) = H(Beta(a_i + u, b_i + tau_i - u))`` and the max is taken over a
    ``grid``-point sampling of ``[0, tau_i]``.
    """
    if state.num_classes != 2:
        raise ShapeMismatchError("ig_gap_bound is defined for binary states only")
    _check_lengths(out, state)
    real = aggregate_evidence(out, mask, target)
    guess = expected_evidence(out, state)
    gap = np.abs(entropy_drop(state, real) - entropy_drop(state, guess))

    tau = out.responsibilities
    a, b = state.a, state.b
    u = np.linspace(0.0, 1.0, grid)[None, :] * tau[:, None]
    slope = np.abs(beta_entropy_slope(a[:, None] + u, b[:, None] + tau[:, None] - u)).max(axis=1)
    bound = slope * np.abs(guess.e1 - real.e1)
    return gap, bound


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

def thread_count(requested: Optional[int] = None) -> int:
    """Worker threads for candidate rendering; ``B3SEG_THREADS`` caps it."""
    cap = os.environ.get("B3SEG_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(int(cap), 1))
        except ValueError:
            logger.warning("ignoring non-integer B3SEG_THREADS=%r", cap)
    return max(int(n), 1)


def render_candidates(scene: Scene, cameras: Sequence[Camera], threads: Optional[int] = None) -> List[RenderOutput]:
    """Render every camera; results keep the input order whatever the schedule."""
    workers = min(thread_count(threads), max(len(cameras), 1))
    if workers == 1:
        return [render(scene, cam) for cam in cameras]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda cam: render(scene, cam), cameras))


def select_view(
    scene: Scene,
    candidates: CandidateSet,
    state: PosteriorState,
    *,
    threads: Optional[int] = None,
    keep_terms: bool = False,
) -> Tuple[ViewScore, RenderOutput]:
    """Render every candidate once and return the highest-EIG one with its render.

    Ties go to the lowest camera index.
    """
    if len(candidates) < 1:
        raise ShapeMismatchError("select_view needs at least one candidate")
    outs = render_candidates(scene, candidates.cameras, threads)
    terms = [eig_terms(out, state) for out in outs]
    scores = np.array([t.sum() for t in terms])
    best = int(np.argmax(scores))
    logger.debug("candidate scores %s -> %d", np.round(scores, 6).tolist(), best)
    score = ViewScore(best, float(scores[best]), terms[best] if keep_terms else None)
    return score, outs[best]


def score_candidates(outs: Sequence[RenderOutput], state: PosteriorState) -> np.ndarray:
    return np.array([eig(out, state) for out in outs])


# ---------------------------------------------------------------------------
# Greedy guarantee check
# ---------------------------------------------------------------------------

def _surrogate_step(out: RenderOutput, state: PosteriorState) -> Tuple[float, PosteriorState]:
    ev = expected_evidence(out, state)
    return float(entropy_drop(state, ev).sum()), update(state, ev)


def _sequence_value(outs: Sequence[RenderOutput], order: Sequence[int], state: PosteriorState) -> float:
    total = 0.0
    for j in order:
        gain, state = _surrogate_step(outs[j], state)
        total += gain
    return total


def greedy_ratio_check(
    scene: Scene,
    candidates: CandidateSet,
    k: int,
    state: PosteriorState,
    *,
    outs: Optional[Sequence[RenderOutput]] = None,
) -> float:
    """Greedy k-step entropy reduction over the best ordered k-subset.

    Observations are replaced by their expected evidence, which makes the
    world deterministic and the optimum enumerable. Views are not repeated.
    """
    n = len(candidates)
    if n > MAX_BRUTE_FORCE_CANDIDATES or k > MAX_BRUTE_FORCE_K:
        raise BudgetExceededError(f"{n} candidates, k={k}")
    if k < 1 or k > n:
        raise BudgetExceededError(f"k={k} must lie in [1, {n}]")
    if outs is None:
        outs = render_candidates(scene, candidates.cameras)

    remaining = list(range(n))
    greedy_state = state
    greedy_total = 0.0
    for _ in range(k):
        gains = [eig(outs[j], greedy_state) for j in remaining]
        pick = remaining[int(np.argmax(gains))]
        gain, greedy_state = _surrogate_step(outs[pick], greedy_state)
        greedy_total += gain
        remaining.remove(pick)

    best_total = max(
        _sequence_value(outs, order, state)
        for order in itertools.permutations(range(n), k)
    )
    if best_total <= 0.0:
        return 1.0
    ratio = greedy_total / best_total
    logger.debug("greedy %.6g / optimum %.6g = %.6f", greedy_total, best_total, ratio)
    return float(ratio)


# ---------------------------------------------------------------------------
# Early stopping
# ---------------------------------------------------------------------------

def mean_predictive_entropy(state: PosteriorState) -> float:
    return float(predictive_entropy(state).mean())


def should_stop(state: PosteriorState, target_mean_entropy: float) -> bool:
    """True once the mean predictive (label) entropy is at or below the target."""
    if target_mean_entropy < 0:
        raise ProbabilityDomainError(f"target entropy must be >= 0, got {target_mean_entropy}")
    return mean_predictive_entropy(state) <= target_mean_entropy
