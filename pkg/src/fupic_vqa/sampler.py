"""Full-pixel covering patch tiling, supervision units and coverage accounting."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .frame_io import Frame

STRATEGIES = ("fupic", "grid_minipatch", "center_crop", "resize")


@dataclass(frozen=True)
class PatchSet:
    """All ``l x l`` crops of one frame, row-major by origin.

    ``patches`` has shape ``(N, 3, l, l)``; ``origins[i]`` is the (row, col)
    of patch ``i``'s top-left pixel in the source frame.
    """

    frame_id: str
    patches: np.ndarray
    origins: tuple[tuple[int, int], ...]
    patch_size: int
    frame_shape: tuple[int, int]

    @property
    def n(self) -> int:
        return len(self.origins)

    @property
    def grid_shape(self) -> tuple[int, int]:
        h, w = self.frame_shape
        return math.ceil(h / self.patch_size), math.ceil(w / self.patch_size)

    def stitch(self) -> np.ndarray:
        """Write patches back at their origins; later patches overwrite overlap."""
        h, w = self.frame_shape
        l = self.patch_size
        out = np.zeros((3, h, w), dtype=self.patches.dtype)
        for p, (r, c) in zip(self.patches, self.origins):
            out[:, r:r + l, c:c + l] = p
        return out


def axis_origins(extent: int, l: int) -> list[int]:
    """0, l, 2l, ... with the last origin pulled back to ``extent - l``."""
    count = math.ceil(extent / l)
    origins = [i * l for i in range(count)]
    origins[-1] = extent - l
    return origins


def partition(frame: Frame | np.ndarray, l: int, frame_id: str = "0") -> PatchSet:
    data = frame.data if isinstance(frame, Frame) else np.asarray(frame)
    _, h, w = data.shape
    if l < 2 or l % 2:
        raise ValueError(f"patch size must be even and >= 2, got {l}")
    if l > min(h, w):
        raise ValueError(f"patch size {l} exceeds frame dimension {w}x{h}")
    rows, cols = axis_origins(h, l), axis_origins(w, l)
    origins = tuple((r, c) for r in rows for c in cols)
    patches = np.stack([data[:, r:r + l, c:c + l] for r, c in origins])
    return PatchSet(frame_id, patches, origins, l, (h, w))


def random_crop(frame: Frame | np.ndarray, l: int, rng: np.random.Generator,
                frame_id: str = "0") -> PatchSet:
    """Single ``l x l`` crop at a uniformly random origin (the random-crop baseline)."""
    data = frame.data if isinstance(frame, Frame) else np.asarray(frame)
    _, h, w = data.shape
    if l > min(h, w):
        raise ValueError(f"patch size {l} exceeds frame dimension {w}x{h}")
    r = int(rng.integers(0, h - l + 1))
    c = int(rng.integers(0, w - l + 1))
    return PatchSet(frame_id, data[None, :, r:r + l, c:c + l].copy(), ((r, c),), l, (h, w))


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    input_side: int = 224
    patch_size: int = 384

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.input_side < 1:
            raise ValueError("input_side must be >= 1")
        if self.patch_size < 2 or self.patch_size % 2:
            raise ValueError("patch_size must be even and >= 2")


def _axis_covered(origins: list[int], l: int) -> int:
    """Length of the union of the intervals ``[o, o + l)``."""
    covered, end = 0, 0
    for o in sorted(origins):
        covered += max(0, o + l - max(o, end))
        end = max(end, o + l)
    return covered


def coverage(spec: StrategySpec, width: int, height: int) -> float:
    """Fraction of source pixels that reach the network under a sampling strategy.

    Non-fupic strategies all deliver ``input_side**2`` source pixels; for
    ``resize`` this is read as the retained-pixel budget.
    """
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    if spec.kind == "fupic":
        l = spec.patch_size
        if l > min(width, height):
            raise ValueError(f"patch size {l} exceeds source {width}x{height}")
        # patches form a product grid, so covered area = covered columns x covered rows
        cols = _axis_covered(axis_origins(width, l), l)
        rows = _axis_covered(axis_origins(height, l), l)
        return cols * rows / (width * height)
    if spec.input_side > min(width, height):
        raise ValueError(f"input_side {spec.input_side} exceeds source {width}x{height}")
    return spec.input_side ** 2 / (width * height)


def coverage_csv(rows: list[tuple[StrategySpec, int, int]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", "width", "height", "ratio"])
    for spec, w, h in rows:
        writer.writerow([spec.kind, w, h, repr(coverage(spec, w, h))])
    return buf.getvalue()


@dataclass(frozen=True)
class SupervisionUnit:
    """Every patch of one frame plus the frame's label; never split."""

    patch_set: PatchSet
    label: float

    @property
    def frame_id(self) -> str:
        return self.patch_set.frame_id

    @property
    def n(self) -> int:
        return self.patch_set.n


def make_supervision_units(patch_sets: list[PatchSet], labels, seed: int | None = None
                           ) -> list[SupervisionUnit]:
    """Pair each patch set with its label; with ``seed`` the unit order is shuffled."""
    labels = [float(v) for v in labels]
    if len(labels) != len(patch_sets):
        raise ValueError(f"label count mismatch: {len(labels)} labels for {len(patch_sets)} frames")
    for v in labels:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"label {v} outside [0, 1]")
    units = [SupervisionUnit(ps, v) for ps, v in zip(patch_sets, labels)]
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(units))
        units = [units[i] for i in order]
    return units
