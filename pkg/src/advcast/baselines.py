"""Floor and ceiling predictors, the horizon MSE metric and the text report."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import LengthMismatch, MissingMotion
from .warp import WarpParams, warp_rollout


def persistence_forecast(history, horizon: int) -> list[np.ndarray]:
    """``horizon`` copies of the last history frame."""
    last = np.asarray(history)[-1]
    return [last.copy() for _ in range(horizon)]


def oracle_warp_forecast(history, true_motion, p: WarpParams = WarpParams(), horizon: int = 6) -> list[np.ndarray]:
    """Warp the last frame with the ground-truth motion, repeatedly."""
    if true_motion is None:
        raise MissingMotion("oracle forecast needs the true motion field")
    last = np.asarray(history)[-1]
    return [f.astype(last.dtype, copy=False) for f in warp_rollout(last, np.asarray(true_motion), p, horizon)]


def mse_horizon(pred_frames: Sequence, target_frames: Sequence) -> tuple[list[float], float]:
    if len(pred_frames) != len(target_frames):
        raise LengthMismatch(f"{len(pred_frames)} predicted frames vs {len(target_frames)} targets")
    if not len(pred_frames):
        raise LengthMismatch("empty horizon")
    per_step = []
    for p, t in zip(pred_frames, target_frames):
        d = np.asarray(p, dtype=np.float64) - np.asarray(t, dtype=np.float64)
        per_step.append(float(np.mean(d * d)))
    return per_step, float(np.mean(per_step))


# ---------------------------------------------------------------------- report
def format_report(results: Mapping[str, Sequence[float]], meta: Mapping[str, object] | None = None) -> str:
    """One ``name.step_i=value`` line per horizon step and a ``name.average`` line per method.

    Values use ``repr`` precision so reports diff cleanly across runs.
    """
    lines = []
    for key, value in (meta or {}).items():
        lines.append(f"{key}={value}")
    for name, per_step in results.items():
        per_step = [float(v) for v in per_step]
        for i, v in enumerate(per_step, 1):
            lines.append(f"{name}.mse.step_{i}={v!r}")
        lines.append(f"{name}.mse.average={float(np.mean(per_step))!r}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, dict[str, float] | str]:
    """Inverse of :func:`format_report`: ``{method: {"step_1": ..., "average": ...}}`` plus meta keys."""
    out: dict = {}
    for line in text.splitlines():
        if not line.strip() or "=" not in line:
            continue
        key, value = line.split("=", 1)
        if ".mse." in key:
            method, stat = key.split(".mse.", 1)
            out.setdefault(method, {})[stat] = float(value)
        else:
            out[key] = value
    return out


def write_report(path, results: Mapping[str, Sequence[float]], meta: Mapping[str, object] | None = None) -> None:
    Path(path).write_text(format_report(results, meta))
