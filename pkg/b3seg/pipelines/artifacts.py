"""Artifact files written after a run, and the posterior checkpoint format.

Output directory layout::

    run.csv       iter,selected_index,eig,exact_ig,total_entropy_before,total_entropy_after,wall_ms
    scatter.csv   eig,exact_ig                     (one row per selected view)
    labels.csv    index,a,b,label                  (index,c0,..,cK-1,label for K > 2)
    report.json   full report, "schema": 1
    debug/        view_XXX.png / mask_XXX.png      (only with debug_png)

Floats are written with ``repr`` so re-emitting one report is byte-identical.
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import List, Union

import numpy as np
from PIL import Image

from .._b3seg_exception import CheckpointFormatError
from ..posterior import PosteriorState
from .run import RUN_CSV_FIELDS, RunReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SCATTER_FIELDS = ("eig", "exact_ig")


def _write_csv(path: Path, header: List[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _count_header(num_classes: int) -> List[str]:
    if num_classes == 2:
        return ["a", "b"]
    return [f"c{c}" for c in range(num_classes)]


def _count_columns(state: PosteriorState) -> np.ndarray:
    # binary files list a (foreground) before b
    if state.num_classes == 2:
        return state.counts[:, [1, 0]]
    return state.counts


def emit_artifacts(report: RunReport, output_dir: PathLike) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    _write_csv(out / "run.csv", list(RUN_CSV_FIELDS), (r.csv_row() for r in report.rows))
    _write_csv(out / "scatter.csv", list(SCATTER_FIELDS), ([r.eig, r.exact_ig] for r in report.rows))

    counts = _count_columns(report.state)
    labels = np.asarray(report.labels).astype(np.int64)
    _write_csv(
        out / "labels.csv",
        ["index", *_count_header(report.state.num_classes), "label"],
        ([i, *(float(v) for v in counts[i]), int(labels[i])] for i in range(len(labels))),
    )

    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    if report.debug_frames:
        write_debug_pngs(report, out / "debug")
    logger.info("wrote artifacts to %s", out)
    return out


def write_debug_pngs(report: RunReport, directory: PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    K = report.state.num_classes
    for iteration, rgb, mask in report.debug_frames:
        img = (np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(img).save(d / f"view_{iteration:03d}.png")
        scaled = (np.asarray(mask, dtype=np.float64) * (255.0 / (K - 1))).astype(np.uint8)
        Image.fromarray(scaled).save(d / f"mask_{iteration:03d}.png")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: PathLike, state: PosteriorState) -> None:
    """``index,a,b`` (binary) or ``index,c0,..`` pseudo-count CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    counts = _count_columns(state)
    _write_csv(
        path,
        ["index", *_count_header(state.num_classes)],
        ([i, *(float(v) for v in counts[i])] for i in range(len(state))),
    )
    logger.info("saved posterior checkpoint %s (%d gaussians)", path, len(state))


def load_checkpoint(path: PathLike) -> np.ndarray:
    """Pseudo-count matrix in posterior column order (background first)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CheckpointFormatError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 3 or header[0] != "index":
        raise CheckpointFormatError(f"{path}: bad header {header!r}")
    K = len(header) - 1
    if header[1:] != _count_header(K):
        raise CheckpointFormatError(f"{path}: bad header {header!r}")

    counts = np.empty((len(rows) - 1, K))
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != K + 1:
            raise CheckpointFormatError(f"{path}:{line}: expected {K + 1} fields, got {len(row)}")
        try:
            index = int(row[0])
            values = [float(v) for v in row[1:]]
        except ValueError:
            raise CheckpointFormatError(f"{path}:{line}: non-numeric field") from None
        if index != line - 2:
            raise CheckpointFormatError(f"{path}:{line}: index {index} out of sequence")
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise CheckpointFormatError(f"{path}:{line}: pseudo-counts must be finite and > 0")
        counts[line - 2] = values
    if K == 2:
        counts = counts[:, [1, 0]]
    return counts
