"""posterior.py - Per-Gaussian Beta–Bernoulli (and Dirichlet–Categorical) state.

Counts live in one ``(N, K)`` float64 matrix. The binary case is ``K = 2``
with column 1 holding the foreground pseudo-count ``a_i`` and column 0 the
background pseudo-count ``b_i``; ``K > 2`` is the Dirichlet generalisation
and shares every code path. All entropies are in nats.

States are values: :func:`update` returns a new state and never mutates its
input, so planners may score read-only snapshots while the pipeline holds the
next state.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import special

from ._b3seg_exception import (
    EntropyDomainError,
    InvalidPriorError,
    NegativeEvidenceError,
    NoForegroundError,
    ProbabilityDomainError,
    ShapeMismatchError,
)

logger = logging.getLogger(__name__)

R_MIN = 1e-3
LN2 = float(np.log(2.0))

ArrayLike = Union[float, np.ndarray]


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EvidenceMap:
    """Per-Gaussian evidence of one view as an ``(N, K)`` non-negative matrix.

    For ``K = 2``: ``e1`` (inside the target mask), ``e0`` (outside) and
    ``tau = e1 + e0``.
    """
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.float64)
        if counts.ndim != 2 or counts.shape[1] < 2:
            raise ShapeMismatchError(f"evidence must be (N, K>=2), got {counts.shape}")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise NegativeEvidenceError("evidence entries must be finite and >= 0")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @classmethod
    def binary(cls, e1: np.ndarray, e0: np.ndarray) -> "EvidenceMap":
        e1 = np.asarray(e1, dtype=np.float64).reshape(-1)
        e0 = np.asarray(e0, dtype=np.float64).reshape(-1)
        if e1.shape != e0.shape:
            raise ShapeMismatchError(f"e1 {e1.shape} and e0 {e0.shape} differ")
        return cls(np.column_stack([e0, e1]))

    def __len__(self) -> int:
        return int(self.counts.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[1])

    @property
    def e1(self) -> np.ndarray:
        return self.counts[:, 1]

    @property
    def e0(self) -> np.ndarray:
        return self.counts[:, 0]

    @property
    def tau(self) -> np.ndarray:
        if self.num_classes == 2:
            return self.counts[:, 1] + self.counts[:, 0]
        return self.counts.sum(axis=1)


@dataclass(frozen=True)
class ObjectStats:
    """Posterior-mean weighted object centre and mean radius."""
    center: np.ndarray
    radius: float


@dataclass(frozen=True, eq=False)
class PosteriorState:
    """``(N, K)`` positive pseudo-counts plus the initial prior."""
    counts: np.ndarray
    a_init: float = 1.0
    b_init: float = 1.0

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.float64)
        if counts.ndim != 2 or counts.shape[1] < 2:
            raise ShapeMismatchError(f"counts must be (N, K>=2), got {counts.shape}")
        if not (self.a_init > 0 and self.b_init > 0):
            raise InvalidPriorError(f"a_init={self.a_init}, b_init={self.b_init} must be > 0")
        if not np.all(np.isfinite(counts)) or np.any(counts <= 0):
            raise EntropyDomainError("pseudo-counts must be finite and > 0")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @classmethod
    def initial(
        cls,
        n: int,
        a_init: float = 1.0,
        b_init: float = 1.0,
        num_classes: int = 2,
    ) -> "PosteriorState":
        """Column 0 (background) starts at ``b_init``, every other column at ``a_init``."""
        if num_classes < 2:
            raise InvalidPriorError(f"num_classes must be >= 2, got {num_classes}")
        if not (a_init > 0 and b_init > 0):
            raise InvalidPriorError(f"a_init={a_init}, b_init={b_init} must be > 0")
        counts = np.full((int(n), int(num_classes)), float(a_init))
        counts[:, 0] = float(b_init)
        return cls(counts, float(a_init), float(b_init))

    def __len__(self) -> int:
        return int(self.counts.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[1])

    @property
    def a(self) -> np.ndarray:
        return self.counts[:, 1]

    @property
    def b(self) -> np.ndarray:
        return self.counts[:, 0]

    def concentration(self) -> np.ndarray:
        """kappa_i = sum of the row's pseudo-counts."""
        if self.num_classes == 2:
            return self.counts[:, 1] + self.counts[:, 0]
        return self.counts.sum(axis=1)

    def means(self) -> np.ndarray:
        """(N, K) posterior means; column 1 of the binary case is m_i."""
        return self.counts / self.concentration()[:, None]


# ---------------------------------------------------------------------------
# Entropies
# ---------------------------------------------------------------------------

def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    """Dirichlet differential entropy of every row of a positive matrix."""
    K = counts.shape[-1]
    if K == 2:
        b, a = counts[..., 0], counts[..., 1]
        s = a + b
        return (
            special.betaln(a, b)
            - (a - 1.0) * special.digamma(a)
            - (b - 1.0) * special.digamma(b)
            + (s - 2.0) * special.digamma(s)
        )
    a0 = counts.sum(axis=-1)
    log_b = special.gammaln(counts).sum(axis=-1) - special.gammaln(a0)
    return log_b + (a0 - K) * special.digamma(a0) - ((counts - 1.0) * special.digamma(counts)).sum(axis=-1)


def _check_positive(*arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise EntropyDomainError("entropy parameters must be finite and > 0")


def beta_entropy(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    """Differential entropy of Beta(a, b) in nats; broadcasts over arrays."""
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    _check_positive(a_arr, b_arr)
    a_arr, b_arr = np.broadcast_arrays(a_arr, b_arr)
    h = _entropy_rows(np.stack([b_arr, a_arr], axis=-1))
    return float(h) if np.ndim(h) == 0 else h


def dirichlet_entropy(alpha: np.ndarray) -> ArrayLike:
    """Differential entropy of Dirichlet(alpha) along the last axis."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim == 0 or alpha.shape[-1] < 2:
        raise EntropyDomainError(f"Dirichlet needs K >= 2 parameters, got shape {alpha.shape}")
    _check_positive(alpha)
    K = alpha.shape[-1]
    a0 = alpha.sum(axis=-1)
    log_b = special.gammaln(alpha).sum(axis=-1) - special.gammaln(a0)
    h = log_b + (a0 - K) * special.digamma(a0) - ((alpha - 1.0) * special.digamma(alpha)).sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def entropy_per_gaussian(state: PosteriorState) -> np.ndarray:
    return _entropy_rows(state.counts)


def total_entropy(state: PosteriorState) -> float:
    """Sum of per-Gaussian Beta (or Dirichlet) entropies."""
    return float(_entropy_rows(state.counts).sum())


def beta_entropy_slope(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """d/dw H(Beta(a + w, b - w)) at w = 0, i.e. dH/da - dH/db.

    ``dH/da = (a + b - 2) psi1(a + b) - (a - 1) psi1(a)``; the ``psi1(a + b)``
    terms cancel in the difference.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return (b - 1.0) * special.polygamma(1, b) - (a - 1.0) * special.polygamma(1, a)


# ---------------------------------------------------------------------------
# Updates and decisions
# ---------------------------------------------------------------------------

def update(state: PosteriorState, evidence: Union[EvidenceMap, np.ndarray]) -> PosteriorState:
    """Conjugate update: add the evidence matrix column-wise to the counts."""
    counts = evidence.counts if isinstance(evidence, EvidenceMap) else np.asarray(evidence, dtype=np.float64)
    if counts.shape != state.counts.shape:
        raise ShapeMismatchError(f"evidence {counts.shape} does not match state {state.counts.shape}")
    if not np.all(np.isfinite(counts)) or np.any(counts < 0):
        raise NegativeEvidenceError("evidence entries must be finite and >= 0")
    return PosteriorState(state.counts + counts, state.a_init, state.b_init)


def map_labels(state: PosteriorState) -> np.ndarray:
    """MAP labels: binary → bool (``a > b``, ties background); K > 2 → argmax, lowest id on ties."""
    labels = np.argmax(state.counts, axis=1)
    if state.num_classes == 2:
        return labels.astype(bool)
    return labels


def object_stats(scene, state: PosteriorState, target_class: int = 1) -> ObjectStats:
    """Centre and mean radius of the current foreground, weighted by m_i."""
    if len(scene) != len(state):
        raise ShapeMismatchError(f"scene has {len(scene)} gaussians, state {len(state)}")
    fg = np.argmax(state.counts, axis=1) == target_class
    if not fg.any():
        raise NoForegroundError(f"no gaussian has class {target_class} as its MAP label")
    m = state.means()[fg, target_class]
    mu = scene.means[fg]
    wsum = m.sum()
    center = (m[:, None] * mu).sum(axis=0) / wsum
    radius = float((m * np.linalg.norm(mu - center, axis=1)).sum() / wsum)
    return ObjectStats(center=center, radius=max(radius, R_MIN))


def bayes_accuracy_bound(q: ArrayLike) -> ArrayLike:
    """Entropy lower bound on Bayes accuracy: ``1 - H_pred(q) / (2 ln 2)``."""
    q_arr = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q_arr)) or np.any((q_arr < 0.0) | (q_arr > 1.0)):
        raise ProbabilityDomainError(f"q must lie in [0, 1], got {q}")
    h = special.entr(q_arr) + special.entr(1.0 - q_arr)
    bound = 1.0 - h / (2.0 * LN2)
    return float(bound) if np.ndim(bound) == 0 else bound


def predictive_entropy(state: PosteriorState) -> np.ndarray:
    """Per-Gaussian entropy of the predictive label distribution (Bernoulli for K = 2)."""
    return special.entr(state.means()).sum(axis=1)


def accuracy_target_to_entropy(accuracy: float) -> float:
    """Mean predictive entropy that certifies a mean Bayes-accuracy bound of ``accuracy``."""
    if not 0.0 <= accuracy <= 1.0:
        raise ProbabilityDomainError(f"accuracy must lie in [0, 1], got {accuracy}")
    return (1.0 - accuracy) * 2.0 * LN2


def initial_state_for(scene, a_init: float = 1.0, b_init: float = 1.0,
                      num_classes: int = 2, counts: Optional[np.ndarray] = None) -> PosteriorState:
    """Fresh state sized to ``scene``, or a resumed one when ``counts`` is given."""
    if counts is None:
        return PosteriorState.initial(len(scene), a_init, b_init, num_classes)
    state = PosteriorState(counts, a_init, b_init)
    if len(state) != len(scene):
        raise ShapeMismatchError(f"checkpoint has {len(state)} rows, scene {len(scene)} gaussians")
    return state
