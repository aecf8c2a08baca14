"""Public entry points for :mod:`b3seg`.

Scene I/O, rendering, the per-Gaussian posterior, the view planner and the
mask providers are re-exported here; :func:`run_pipeline` runs the whole
active segmentation loop. Modules prefixed with ``_`` are private.
"""

from ._b3seg_exception import B3SegError, describe_error, exit_code_for
from .masker import MaskProvider, MaskRequest, NoiseSpec, OracleMasker, make_masker, oracle_mask, prior_blend
from .planner import (
    CandidateSet,
    ViewScore,
    eig,
    exact_ig,
    greedy_ratio_check,
    ig_gap_bound,
    sample_candidates,
    select_view,
    should_stop,
)
from .posterior import (
    EvidenceMap,
    ObjectStats,
    PosteriorState,
    bayes_accuracy_bound,
    beta_entropy,
    dirichlet_entropy,
    map_labels,
    object_stats,
    total_entropy,
    update,
)
from .render import (
    Camera,
    Mask,
    RenderOutput,
    aggregate_evidence,
    aggregate_evidence_multiclass,
    render,
    render_prior_logit,
)
from .scene import Gaussian, Scene, SceneSpec, SplatFormat, generate_synthetic, load_scene, save_scene
from .pipelines.config import RunConfig
from .pipelines.metrics import evaluate_2d_miou, evaluate_3d_iou
from .pipelines.run import RunReport, SegmentationSession, run_pipeline
from .pipelines.artifacts import emit_artifacts

__all__ = [
    "B3SegError", "describe_error", "exit_code_for",
    "Gaussian", "Scene", "SceneSpec", "SplatFormat", "generate_synthetic", "load_scene", "save_scene",
    "Camera", "Mask", "RenderOutput", "render", "aggregate_evidence", "aggregate_evidence_multiclass",
    "render_prior_logit",
    "EvidenceMap", "ObjectStats", "PosteriorState", "beta_entropy", "dirichlet_entropy", "update",
    "total_entropy", "map_labels", "object_stats", "bayes_accuracy_bound",
    "CandidateSet", "ViewScore", "sample_candidates", "eig", "exact_ig", "select_view",
    "greedy_ratio_check", "should_stop", "ig_gap_bound",
    "MaskProvider", "MaskRequest", "NoiseSpec", "OracleMasker", "make_masker", "oracle_mask", "prior_blend",
    "RunConfig", "RunReport", "SegmentationSession", "run_pipeline", "emit_artifacts",
    "evaluate_3d_iou", "evaluate_2d_miou",
]
