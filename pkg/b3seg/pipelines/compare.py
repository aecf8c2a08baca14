"""Multi-run experiments: strategy comparison over seeds and centre-shift sensitivity."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .._b3seg_exception import B3SegConfigError
from .config import STRATEGIES, RunConfig
from .run import run_pipeline

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
COMPARE_FIELDS = ("seed", "strategy", "iter", "total_entropy")
SENSITIVITY_FIELDS = ("shift", "iou_3d", "miou_2d")


def _seeded(config: RunConfig, seed: int, vary_scene: bool, **changes) -> RunConfig:
    updates = dict(seed=seed, noise=replace(config.noise, seed=seed), output_dir=None,
                   checkpoint=None, debug_png=False, **changes)
    if vary_scene and config.scene_path is None and config.generator is not None:
        updates["generator"] = replace(config.generator, seed=seed)
    return config.with_updates(**updates)


def sign_test(ours: Sequence[float], theirs: Sequence[float]) -> Dict[str, float]:
    """One-sided sign test that ``ours < theirs`` more often than not; ties are dropped."""
    diff = np.asarray(theirs, dtype=np.float64) - np.asarray(ours, dtype=np.float64)
    wins = int(np.count_nonzero(diff > 0))
    losses = int(np.count_nonzero(diff < 0))
    ties = int(diff.size - wins - losses)
    n = wins + losses
    p = stats.binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    return {"wins": wins, "losses": losses, "ties": ties, "p_value": float(p)}


@dataclass
class ComparisonResult:
    seeds: List[int]
    strategies: List[str]
    curves: Dict[str, Dict[int, List[float]]] = field(default_factory=dict)
    sign_tests: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def final_entropies(self, strategy: str) -> List[float]:
        return [self.curves[strategy][s][-1] for s in self.seeds]

    def to_dict(self) -> Dict:
        return {
            "schema": 1,
            "seeds": self.seeds,
            "strategies": self.strategies,
            "final_total_entropy": {st: self.final_entropies(st) for st in self.strategies},
            "sign_tests": self.sign_tests,
        }


def compare_strategies(
    config: RunConfig,
    seeds: Sequence[int],
    strategies: Sequence[str] = STRATEGIES,
    *,
    vary_scene: bool = True,
    reference: str = "eig",
) -> ComparisonResult:
    """Run every strategy on every seed under the same budget; sign-test ``reference`` against the rest."""
    for st in strategies:
        if st not in STRATEGIES:
            raise B3SegConfigError(f"unknown strategy {st!r}")
    result = ComparisonResult(list(seeds), list(strategies))
    for st in strategies:
        result.curves[st] = {}
        for seed in seeds:
            report = run_pipeline(_seeded(config, seed, vary_scene, strategy=st, early_stop_target=None,
                                          early_stop_accuracy=None))
            result.curves[st][seed] = report.entropy_curve
            logger.info("compare strategy=%s seed=%d final_entropy=%.6g", st, seed, report.entropy_curve[-1])
    if reference in strategies:
        ours = result.final_entropies(reference)
        for st in strategies:
            if st != reference:
                result.sign_tests[st] = sign_test(ours, result.final_entropies(st))
    return result


def write_comparison(result: ComparisonResult, output_dir: PathLike) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARE_FIELDS)
        for seed in result.seeds:
            for st in result.strategies:
                for t, h in enumerate(result.curves[st][seed]):
                    writer.writerow([seed, st, t, h])
    with open(out / "compare.json", "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def sensitivity_sweep(config: RunConfig, shifts: Sequence[float]) -> List[Dict[str, Optional[float]]]:
    """Final segmentation quality as the initial object centre is pushed off by ``shift * r_obj``."""
    rows = []
    for shift in shifts:
        report = run_pipeline(config.with_updates(center_shift=float(shift), output_dir=None, checkpoint=None,
                                                  debug_png=False))
        rows.append({"shift": float(shift), "iou_3d": report.iou_3d, "miou_2d": report.miou_2d})
        logger.info("sensitivity shift=%.3g iou_3d=%s miou_2d=%s", shift, report.iou_3d, report.miou_2d)
    return rows


def write_sensitivity(rows: Sequence[Dict[str, Optional[float]]], output_dir: PathLike) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sensitivity.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SENSITIVITY_FIELDS)
        for r in rows:
            writer.writerow([r[k] for k in SENSITIVITY_FIELDS])
    return out
