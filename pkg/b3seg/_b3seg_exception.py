"""
_b3seg_exception.py - Systematic error handling for B3Seg.
==========================================================

Purpose
-------
This module is the **single** place where every exception raised by the
package is defined. All errors inherit from the common base class
:class:`B3SegError` and are organised into six high-level families:

* **CFG** - invalid run configuration or CLI values
* **FMT** - splat files and posterior checkpoints that fail to parse/validate
* **DOM** - numerical domain violations (entropy of non-positive counts,
  negative evidence, shape mismatches, degenerate cameras)
* **GEN** - synthetic scene generation failures
* **MSK** - mask provider problems (missing labels, unknown backends)
* **RUN** - pipeline failures (no foreground, brute-force budget, iteration crash)

The `_B3SEG_EXCEPTION_MAP` below holds ``(code, exit_status, headline)`` for
every class. The headline is static; details are attached at raise time and
:func:`describe_error` renders both::

    [B3Seg] (FMT-002) Splat record failed validation.
    (details: opacity out of range at index 3: 1.5)

Domain errors also subclass :class:`ValueError` so numerical callers that
only know the standard library can still catch them.
"""
from __future__ import annotations

from typing import Optional


class B3SegError(Exception):
    """Convenience root for every package exception"""

    pass

# ---------------------------------------------------------------------------
# 1) CFG  – Configuration / CLI values
# ---------------------------------------------------------------------------
class B3SegConfigError(B3SegError):
    pass

class InvalidIterationsError(B3SegConfigError):
    pass

class InvalidCandidatesError(B3SegConfigError):
    pass

class InvalidPriorError(B3SegConfigError):
    pass

class InvalidResolutionError(B3SegConfigError):
    pass

class InvalidNoiseError(B3SegConfigError):
    pass

class UnknownStrategyError(B3SegConfigError):
    pass

class InvalidGeneratorSpecError(B3SegConfigError):
    pass

# ---------------------------------------------------------------------------
# 2) FMT  – Splat files / checkpoints
# ---------------------------------------------------------------------------
class B3SegFormatError(B3SegError):
    pass

class SplatParseError(B3SegFormatError):
    """Malformed header or record; ``offset`` is the byte (or char) position."""

    def __init__(self, message: str, *, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)

class SplatValidationError(B3SegFormatError):
    """A record parsed but one of its fields is out of range."""

    def __init__(self, field: str, index: int, value):
        self.field = field
        self.index = index
        self.value = value
        super().__init__(f"{field} out of range at index {index}: {value!r}")

class CheckpointFormatError(B3SegFormatError):
    pass

# ---------------------------------------------------------------------------
# 3) DOM  – Numerical domain
# ---------------------------------------------------------------------------
class B3SegDomainError(B3SegError, ValueError):
    pass

class EntropyDomainError(B3SegDomainError):
    pass

class NegativeEvidenceError(B3SegDomainError):
    pass

class ShapeMismatchError(B3SegDomainError):
    pass

class InvalidCameraError(B3SegDomainError):
    pass

class ProbabilityDomainError(B3SegDomainError):
    pass

# ---------------------------------------------------------------------------
# 4) GEN  – Synthetic scene generation
# ---------------------------------------------------------------------------
class SceneGenerationError(B3SegError):
    pass

# ---------------------------------------------------------------------------
# 5) MSK  – Mask providers
# ---------------------------------------------------------------------------
class B3SegMaskerError(B3SegError):
    pass

class MissingLabelsError(B3SegMaskerError):
    pass

class UnsupportedBackendError(B3SegMaskerError):
    pass

# ---------------------------------------------------------------------------
# 6) RUN  – Pipeline / planner runtime
# ---------------------------------------------------------------------------
class B3SegRuntimeError(B3SegError):
    pass

class NoForegroundError(B3SegRuntimeError):
    pass

class BudgetExceededError(B3SegRuntimeError):
    pass

class PipelineError(B3SegRuntimeError):
    """Failure inside the active loop; ``iteration`` 0 is the canonical view."""

    def __init__(self, message: str, *, iteration: int):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")


# ------------------------------------------------------------
# Mapping from concrete error types → (code, exit_status, headline)
# Lookup walks the MRO, so subclasses must precede their family root.
# ------------------------------------------------------------
_B3SEG_EXCEPTION_MAP = {
    # ── 1  Configuration ─────────────────────────────────────
    InvalidIterationsError:     ("CFG-001", 2, "Iteration count must be >= 1."),
    InvalidCandidatesError:     ("CFG-002", 2, "Candidate count must be >= 1."),
    InvalidPriorError:          ("CFG-003", 2, "Prior pseudo-counts must be positive."),
    InvalidResolutionError:     ("CFG-004", 2, "Resolution must look like WxH with positive sides."),
    InvalidNoiseError:          ("CFG-005", 2, "Noise settings out of range."),
    UnknownStrategyError:       ("CFG-006", 2, "Unknown view-selection strategy - use eig, random_sphere or random_holdout."),
    InvalidGeneratorSpecError:  ("CFG-007", 2, "Generator spec is invalid - use key=value pairs such as seed=7,n_objects=1."),
    B3SegConfigError:           ("CFG-000", 2, "Configuration error - review settings."),
    # ── 2  Formats ───────────────────────────────────────────
    SplatParseError:            ("FMT-001", 2, "Splat file could not be parsed."),
    SplatValidationError:       ("FMT-002", 2, "Splat record failed validation."),
    CheckpointFormatError:      ("FMT-003", 2, "Posterior checkpoint is malformed."),
    B3SegFormatError:           ("FMT-000", 2, "File format error."),
    # ── 3  Numerical domain ─────────────────────────────────
    EntropyDomainError:         ("DOM-001", 2, "Entropy parameters must be strictly positive."),
    NegativeEvidenceError:      ("DOM-002", 2, "Evidence counts must be non-negative."),
    ShapeMismatchError:         ("DOM-003", 2, "Array shapes do not match."),
    InvalidCameraError:         ("DOM-004", 2, "Camera is degenerate."),
    ProbabilityDomainError:     ("DOM-005", 2, "Probability outside [0, 1]."),
    B3SegDomainError:           ("DOM-000", 2, "Numerical domain error."),
    # ── 4  Generation ───────────────────────────────────────
    SceneGenerationError:       ("GEN-001", 2, "Synthetic scene generation failed - try a larger workspace_extent."),
    # ── 5  Masker ───────────────────────────────────────────
    MissingLabelsError:         ("MSK-001", 3, "Scene carries no ground-truth labels - use a generated scene or an external mask backend."),
    UnsupportedBackendError:    ("MSK-002", 3, "Mask backend is not available - only 'oracle' ships."),
    B3SegMaskerError:           ("MSK-000", 3, "Mask provider error."),
    # ── 6  Runtime ──────────────────────────────────────────
    NoForegroundError:          ("RUN-001", 3, "No Gaussian is currently foreground."),
    BudgetExceededError:        ("RUN-002", 3, "Brute-force budget exceeded - use at most 7 candidates and k <= 3."),
    PipelineError:              ("RUN-003", 3, "Segmentation pipeline failed."),
    B3SegRuntimeError:          ("RUN-000", 3, "Runtime error - see details."),
    # General B3SegError for any uncaught package exception
    B3SegError:                 ("B3S-000", 3, "B3SegError - an uncaught package exception occurred."),
}

ALL_B3SEG_EXCEPTIONS = tuple(_B3SEG_EXCEPTION_MAP.keys())


def _lookup(err: BaseException):
    for cls in type(err).__mro__:
        if cls in _B3SEG_EXCEPTION_MAP:
            return _B3SEG_EXCEPTION_MAP[cls]
    return ("MISC-000", 3, "Unexpected error.")


def exit_code_for(err: BaseException) -> int:
    """CLI exit status: 2 for validation-type errors, 3 for pipeline failures."""
    return _lookup(err)[1]


def describe_error(err: BaseException) -> str:
    code, _status, headline = _lookup(err)
    return f"[B3Seg] ({code}) {headline}\n(details: {err})"
