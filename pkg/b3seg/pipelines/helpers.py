"""Helper functions for configuration filtering and CLI value parsing.

Keyword dictionaries coming from JSON files or ``key=value`` strings are
filtered down to the parameters a dataclass or function accepts and coerced
to their annotated types before construction.
"""
from __future__ import annotations

import inspect
import typing
from typing import Any, Dict, List, Tuple, Union, get_args, get_origin

from .._b3seg_exception import InvalidGeneratorSpecError, InvalidResolutionError

# -----------------------------------------------------------------------------
# ─────────────────────────── 1. Type coercion ────────────────────────────────
# -----------------------------------------------------------------------------

def _canonical(anno):
    """Concrete type to cast to: ``Optional[int]`` → ``int``, unions → tuple, none → None."""
    if anno is inspect._empty:
        return None
    origin = get_origin(anno)
    if origin is Union:
        args = [a for a in get_args(anno) if a is not type(None)]
        return args[0] if len(args) == 1 else tuple(args)
    return anno


def _annotations(func) -> Dict[str, Any]:
    try:
        return typing.get_type_hints(func)
    except Exception:
        return {}


def _coerce(tgt, v):
    if v is None:
        return None                        # Optional fields stay unset
    if tgt in (int, float, str) and not isinstance(v, bool):
        try:
            return tgt(v)
        except (TypeError, ValueError):
            return v                       # keep original; the constructor complains
    if tgt is bool and isinstance(v, str):
        if v.lower() in {"true", "1", "yes", "y"}:
            return True
        if v.lower() in {"false", "0", "no", "n"}:
            return False
    return v


def filter_config(func, cfg: Dict[str, Any]) -> Dict[str, Any]:
    """Keep only the keys ``func`` accepts, cast to their annotated scalar types.

    ``func`` may be a function or a class (its ``__init__`` is inspected).
    Postponed (string) annotations are resolved before casting.
    """
    sig = inspect.signature(func)
    hints = _annotations(func)
    out = {}
    for k, v in cfg.items():
        if k not in sig.parameters or k == "self":
            continue
        tgt = _canonical(hints.get(k, sig.parameters[k].annotation))
        out[k] = _coerce(tgt, v)
    return out

# -----------------------------------------------------------------------------
# ─────────────────────────── 2. CLI values ───────────────────────────────────
# -----------------------------------------------------------------------------

def parse_resolution(text: str) -> Tuple[int, int]:
    """``"128x96"`` → ``(128, 96)``."""
    parts = str(text).lower().split("x")
    try:
        w, h = (int(p) for p in parts)
    except ValueError:
        raise InvalidResolutionError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise InvalidResolutionError(f"sides must be >= 1, got {text!r}")
    return w, h


def parse_key_values(text: str) -> Dict[str, str]:
    """``"seed=7,n_objects=2"`` → ``{"seed": "7", "n_objects": "2"}``."""
    out: Dict[str, str] = {}
    for tok in filter(None, (t.strip() for t in str(text).split(","))):
        key, sep, val = tok.partition("=")
        if not sep or not key.strip():
            raise InvalidGeneratorSpecError(f"expected key=value, got {tok!r}")
        out[key.strip().lower().replace("-", "_")] = val.strip()
    return out


def parse_generator_spec(text: str):
    """Build a ``SceneSpec`` from ``key=value`` pairs; unknown keys are an error."""
    from ..scene import SceneSpec

    raw = parse_key_values(text)
    kwargs = filter_config(SceneSpec, raw)
    unknown = sorted(set(raw) - set(kwargs))
    if unknown:
        raise InvalidGeneratorSpecError(f"unknown generator keys: {', '.join(unknown)}")
    for k, v in kwargs.items():
        if isinstance(v, str):
            raise InvalidGeneratorSpecError(f"{k}={v!r} is not a number")
    return SceneSpec(**kwargs)


def parse_float_list(text: str) -> List[float]:
    """``"0,0.2,0.5"`` → ``[0.0, 0.2, 0.5]``."""
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise InvalidGeneratorSpecError(f"expected comma-separated numbers, got {text!r}") from None
