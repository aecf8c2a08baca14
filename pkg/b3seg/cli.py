#!/usr/bin/env python3
"""cli.py - ``b3seg`` command line.

Commands
--------
- ``b3seg run``          one active segmentation run, artifacts written to ``--out``
- ``b3seg generate``     write a synthetic labelled scene to a splat file
- ``b3seg compare``      eig vs random baselines over several seeds, with a sign test
- ``b3seg sensitivity``  final quality as the initial object centre is shifted

Exit status is 0 on success, 2 on a validation error (bad flags, bad files)
and 3 when the pipeline itself fails. ``B3SEG_THREADS`` caps the number of
threads used to render candidate views.
"""
from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, TypeVar

import typer

from ._b3seg_exception import B3SegConfigError, B3SegError, describe_error, exit_code_for
from .masker import NoiseSpec
from .pipelines.compare import compare_strategies, sensitivity_sweep, write_comparison, write_sensitivity
from .pipelines.config import STRATEGIES, RunConfig
from .pipelines.helpers import parse_float_list, parse_generator_spec, parse_resolution
from .pipelines.run import run_pipeline
from .scene import generate_synthetic, save_scene

app = typer.Typer(add_completion=False, help="Bayesian active segmentation of Gaussian splat scenes.")

T = TypeVar("T")


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _guard(fn: Callable[[], T]) -> T:
    """Run ``fn`` and turn package errors into coloured messages and exit codes."""
    try:
        return fn()
    except B3SegError as err:
        typer.secho(describe_error(err), fg=typer.colors.RED, err=True)
        raise typer.Exit(code=exit_code_for(err))
    except OSError as err:
        typer.secho(f"[B3Seg] I/O error: {err}", fg=typer.colors.RED, err=True)
        raise typer.Exit(code=2)


def _build_config(
    *,
    config_file: Optional[Path],
    scene: Optional[Path],
    generate: Optional[str],
    target: int,
    iters: int,
    candidates: int,
    a_init: float,
    b_init: float,
    res: str,
    fov_deg: float,
    noise_flip: float,
    noise_erode: int,
    noise_fail: float,
    failure_mode: str,
    seed: int,
    strategy: str,
    early_stop_accuracy: Optional[float],
    checkpoint: Optional[Path],
    out: Optional[Path],
    num_classes: int,
    prior_blend: float,
    holdout_views: int,
    debug_png: bool,
) -> RunConfig:
    if scene is not None and generate is not None:
        raise B3SegConfigError("use either --scene or --generate, not both")
    noise = NoiseSpec(noise_flip, noise_erode, noise_fail, seed, failure_mode)
    fields = dict(
        scene_path=str(scene) if scene is not None else None,
        generator=parse_generator_spec(generate) if generate is not None else None,
        target_class=target,
        iterations=iters,
        n_candidates=candidates,
        a_init=a_init,
        b_init=b_init,
        resolution=parse_resolution(res),
        fov_deg=fov_deg,
        noise=noise,
        seed=seed,
        strategy=strategy,
        early_stop_accuracy=early_stop_accuracy,
        checkpoint=str(checkpoint) if checkpoint is not None else None,
        output_dir=str(out) if out is not None else None,
        num_classes=num_classes,
        prior_blend_weight=prior_blend,
        holdout_views=holdout_views,
        debug_png=debug_png,
    )
    if config_file is None:
        return RunConfig(**fields)
    # the file supplies the base; flags that still hold their defaults do not override it
    base = RunConfig.from_json(config_file)
    defaults = RunConfig()
    changed = {
        k: v for k, v in fields.items()
        if v is not None and getattr(defaults, k) != v and k != "noise"
    }
    if noise != replace(defaults.noise, seed=seed):
        changed["noise"] = noise
    return base.with_updates(**changed)


# Options shared by run / compare / sensitivity
_SCENE = typer.Option(None, "--scene", help="Splat file (.splat binary or .json).")
_GENERATE = typer.Option(None, "--generate", help="Synthetic scene spec, e.g. 'seed=7,n_objects=1'.")
_CONFIG = typer.Option(None, "--config", help="JSON file with RunConfig fields.")


@app.command()
def run(
    out: Path = typer.Option(..., "--out", help="Output directory."),
    target: int = typer.Option(..., "--target", help="Target class id."),
    scene: Optional[Path] = _SCENE,
    generate: Optional[str] = _GENERATE,
    config_file: Optional[Path] = _CONFIG,
    iters: int = typer.Option(20, "--iters"),
    candidates: int = typer.Option(20, "--candidates"),
    a_init: float = typer.Option(1.0, "--a-init"),
    b_init: float = typer.Option(1.0, "--b-init"),
    res: str = typer.Option("128x128", "--res"),
    fov_deg: float = typer.Option(60.0, "--fov-deg"),
    noise_flip: float = typer.Option(0.0, "--noise-flip"),
    noise_erode: int = typer.Option(0, "--noise-erode"),
    noise_fail: float = typer.Option(0.0, "--noise-fail"),
    failure_mode: str = typer.Option("empty", "--failure-mode", help="empty | wrong_object"),
    seed: int = typer.Option(0, "--seed"),
    strategy: str = typer.Option("eig", "--strategy", help="eig | random_sphere | random_holdout"),
    early_stop_accuracy: Optional[float] = typer.Option(None, "--early-stop-accuracy"),
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint"),
    num_classes: int = typer.Option(2, "--num-classes"),
    prior_blend: float = typer.Option(0.0, "--prior-blend"),
    holdout_views: int = typer.Option(8, "--holdout-views"),
    debug_png: bool = typer.Option(False, "--debug-png"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
) -> None:
    """Run one active segmentation and write run.csv, scatter.csv, labels.csv and report.json."""
    _setup_logging(verbose)
    cfg = _guard(lambda: _build_config(
        config_file=config_file, scene=scene, generate=generate, target=target, iters=iters,
        candidates=candidates, a_init=a_init, b_init=b_init, res=res, fov_deg=fov_deg,
        noise_flip=noise_flip, noise_erode=noise_erode, noise_fail=noise_fail,
        failure_mode=failure_mode, seed=seed, strategy=strategy,
        early_stop_accuracy=early_stop_accuracy, checkpoint=checkpoint, out=out,
        num_classes=num_classes, prior_blend=prior_blend, holdout_views=holdout_views,
        debug_png=debug_png,
    ))
    typer.echo(f"**B3Seg run | strategy={cfg.strategy} | T={cfg.iterations} | N_cand={cfg.n_candidates}**")
    report = _guard(lambda: run_pipeline(cfg))
    for row in report.rows:
        typer.echo(
            f"iter {row.iter:3d}  view {row.selected_index:3d}  eig {row.eig:10.4f}  "
            f"ig {row.exact_ig:10.4f}  H {row.total_entropy_after:12.4f}"
        )
    if report.stopped_early:
        typer.echo(f"Stopped early after {len(report.rows)} views.")
    if report.iou_3d is not None:
        typer.echo(f"iou_3d={report.iou_3d:.4f}  miou_2d={report.miou_2d:.4f}")
    typer.echo(f"Artifacts written to {cfg.output_dir}")


@app.command()
def generate(
    out: Path = typer.Option(..., "--out", help="Destination .splat or .json file."),
    spec: str = typer.Option("seed=7", "--spec", help="Generator spec, e.g. 'seed=7,n_objects=2'."),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
) -> None:
    """Write a synthetic labelled scene."""
    _setup_logging(verbose)
    scene_spec = _guard(lambda: parse_generator_spec(spec))
    scene = _guard(lambda: generate_synthetic(scene_spec))
    _guard(lambda: save_scene(scene, out))
    typer.echo(f"Wrote {len(scene)} gaussians to {out}")


@app.command()
def compare(
    out: Path = typer.Option(..., "--out"),
    target: int = typer.Option(1, "--target"),
    seeds: int = typer.Option(20, "--seeds", help="Number of seeds (0..seeds-1)."),
    strategies: str = typer.Option(",".join(STRATEGIES), "--strategies"),
    scene: Optional[Path] = _SCENE,
    generate: Optional[str] = _GENERATE,
    config_file: Optional[Path] = _CONFIG,
    iters: int = typer.Option(20, "--iters"),
    candidates: int = typer.Option(20, "--candidates"),
    res: str = typer.Option("128x128", "--res"),
    noise_flip: float = typer.Option(0.0, "--noise-flip"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
) -> None:
    """Entropy curves of several strategies over seeds; writes compare.csv and compare.json."""
    _setup_logging(verbose)
    cfg = _guard(lambda: _build_config(
        config_file=config_file, scene=scene, generate=generate, target=target, iters=iters,
        candidates=candidates, a_init=1.0, b_init=1.0, res=res, fov_deg=60.0,
        noise_flip=noise_flip, noise_erode=0, noise_fail=0.0, failure_mode="empty", seed=0,
        strategy="eig", early_stop_accuracy=None, checkpoint=None, out=None, num_classes=2,
        prior_blend=0.0, holdout_views=8, debug_png=False,
    ))
    names: List[str] = [s.strip() for s in strategies.split(",") if s.strip()]
    result = _guard(lambda: compare_strategies(cfg, list(range(seeds)), names))
    _guard(lambda: write_comparison(result, out))
    for st, test in result.sign_tests.items():
        typer.echo(
            f"eig vs {st}: wins={test['wins']} losses={test['losses']} ties={test['ties']} "
            f"p={test['p_value']:.4g}"
        )
    typer.echo(f"Wrote {out / 'compare.csv'}")


@app.command()
def sensitivity(
    out: Path = typer.Option(..., "--out"),
    target: int = typer.Option(1, "--target"),
    shifts: str = typer.Option("0,0.2,0.5,0.7,1.0", "--shifts"),
    scene: Optional[Path] = _SCENE,
    generate: Optional[str] = _GENERATE,
    config_file: Optional[Path] = _CONFIG,
    iters: int = typer.Option(20, "--iters"),
    candidates: int = typer.Option(20, "--candidates"),
    res: str = typer.Option("128x128", "--res"),
    seed: int = typer.Option(0, "--seed"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
) -> None:
    """Final iou_3d / miou_2d as the initial object centre is shifted by a fraction of its radius."""
    _setup_logging(verbose)
    cfg = _guard(lambda: _build_config(
        config_file=config_file, scene=scene, generate=generate, target=target, iters=iters,
        candidates=candidates, a_init=1.0, b_init=1.0, res=res, fov_deg=60.0,
        noise_flip=0.0, noise_erode=0, noise_fail=0.0, failure_mode="empty", seed=seed,
        strategy="eig", early_stop_accuracy=None, checkpoint=None, out=None, num_classes=2,
        prior_blend=0.0, holdout_views=8, debug_png=False,
    ))
    values = _guard(lambda: parse_float_list(shifts))
    rows = _guard(lambda: sensitivity_sweep(cfg, values))
    _guard(lambda: write_sensitivity(rows, out))
    for r in rows:
        typer.echo(f"shift {r['shift']:.2f}  iou_3d {r['iou_3d']:.4f}  miou_2d {r['miou_2d']:.4f}")
    typer.echo(f"Wrote {out / 'sensitivity.csv'}")


def main() -> None:
    app()


if __name__ == "__main__":
    main()
