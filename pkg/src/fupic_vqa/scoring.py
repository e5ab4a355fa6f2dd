"""Patch -> frame -> video score aggregation and the frame-level loss."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import PatchOutput


@dataclass(frozen=True)
class FrameScore:
    frame_id: str
    value: float
    weights: tuple[float, ...]


@dataclass(frozen=True)
class VideoScore:
    video_id: str
    value: float
    frame_scores: tuple[FrameScore, ...] = field(default=())


def _ordered_sum(values) -> float:
    total = 0.0
    for v in values:
        total += v
    return total


def _frame_id(outputs: Sequence[PatchOutput]) -> str:
    return outputs[0].frame_id if outputs else ""


def aggregate_mean(outputs: Sequence[PatchOutput]) -> FrameScore:
    """Plain average of patch scores."""
    if not outputs:
        raise ValueError("cannot aggregate an empty patch list")
    n = len(outputs)
    y = [1.0 / n] * n
    value = _ordered_sum(yi * o.raw_score for yi, o in zip(y, outputs))
    return FrameScore(_frame_id(outputs), value, tuple(y))


def region_weights(logits) -> np.ndarray:
    """Max-shifted exp-normalise: nonnegative, sums to one, shift invariant."""
    w = np.asarray(logits, dtype=np.float64)
    if w.size == 0:
        raise ValueError("cannot normalise an empty weight list")
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite weight logit")
    e = np.exp(w - w.max())
    total = _ordered_sum(e.tolist())
    return e / total


def aggregate_region_aware(outputs: Sequence[PatchOutput]) -> FrameScore:
    """Frame score as the region-weighted sum of patch scores."""
    if not outputs:
        raise ValueError("cannot aggregate an empty patch list")
    y = region_weights([o.raw_weight for o in outputs]).tolist()
    value = _ordered_sum(yi * o.raw_score for yi, o in zip(y, outputs))
    return FrameScore(_frame_id(outputs), value, tuple(y))


def video_score(frame_scores: Sequence[FrameScore], video_id: str = "") -> VideoScore:
    if not frame_scores:
        raise ValueError("no frame scores to average")
    q = _ordered_sum(f.value for f in frame_scores) / len(frame_scores)
    return VideoScore(video_id, q, tuple(frame_scores))


def frame_loss(pred: FrameScore | float, label: float) -> float:
    value = pred.value if isinstance(pred, FrameScore) else float(pred)
    return (value - label) ** 2


# --- reports -----------------------------------------------------------------

def frame_scores_csv(videos: Sequence[VideoScore]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["video_id", "frame_id", "frame_score"])
    for v in videos:
        for f in v.frame_scores:
            w.writerow([v.video_id, f.frame_id, repr(f.value)])
    return buf.getvalue()


def video_scores_csv(videos: Sequence[VideoScore]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["video_id", "Q"])
    for v in videos:
        w.writerow([v.video_id, repr(v.value)])
    return buf.getvalue()


def weight_grid(frame: FrameScore, grid_shape: tuple[int, int]) -> np.ndarray:
    rows, cols = grid_shape
    if rows * cols != len(frame.weights):
        raise ValueError(f"{len(frame.weights)} weights do not fill a {rows}x{cols} grid")
    return np.asarray(frame.weights).reshape(rows, cols)


def weight_grid_csv(grid: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"col{j}" for j in range(grid.shape[1])])
    for row in grid:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def weight_heatmap(grid: np.ndarray, cell: int = 16) -> np.ndarray:
    """8-bit gray heatmap, brightest where the weight is largest; ``cell`` pixels per patch."""
    top = float(grid.max())
    scaled = grid / top if top > 0 and math.isfinite(top) else np.zeros_like(grid)
    img = np.rint(np.clip(scaled, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.kron(img, np.ones((cell, cell), dtype=np.uint8))
