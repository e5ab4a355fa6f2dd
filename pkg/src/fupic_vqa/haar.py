"""Single-level orthonormal 2-D Haar transform on ``(..., l, l)`` rasters.

Equivalent to a stride-2 convolution with the kernels LL^T, HL^T, LH^T, HH^T
where L = [1, 1]/sqrt(2) and H = [1, -1]/sqrt(2).  For a 2x2 block
``[[a, b], [c, d]]``::

    avg = (a + b + c + d) / 2
    h1  = (a + b - c - d) / 2      # HL^T: top rows minus bottom rows
    h2  = (a - b + c - d) / 2      # LH^T: left columns minus right columns
    h3  = (a - b - c + d) / 2      # HH^T: diagonal
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class FreqMaps(NamedTuple):
    avg: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray

    @property
    def source_size(self) -> int:
        return 2 * self.avg.shape[-1]

    def stack(self) -> np.ndarray:
        """Components on a new leading axis: ``(4, ...)``."""
        return np.stack(self)


def haar_forward(patch: np.ndarray) -> FreqMaps:
    patch = np.asarray(patch, dtype=np.float64)
    h, w = patch.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"Haar transform needs even sides, got {h}x{w}")
    a = patch[..., 0::2, 0::2]
    b = patch[..., 0::2, 1::2]
    c = patch[..., 1::2, 0::2]
    d = patch[..., 1::2, 1::2]
    s_ab, d_ab = a + b, a - b
    s_cd, d_cd = c + d, c - d
    return FreqMaps(
        (s_ab + s_cd) * 0.5,
        (s_ab - s_cd) * 0.5,
        (d_ab + d_cd) * 0.5,
        (d_ab - d_cd) * 0.5,
    )


def haar_inverse(maps: FreqMaps) -> np.ndarray:
    """Adjoint (= inverse) of :func:`haar_forward`."""
    A, B, C, D = (np.asarray(m, dtype=np.float64) for m in maps)
    if not A.shape == B.shape == C.shape == D.shape:
        raise ValueError(f"component shapes differ: {[m.shape for m in (A, B, C, D)]}")
    out = np.empty(A.shape[:-2] + (2 * A.shape[-2], 2 * A.shape[-1]))
    out[..., 0::2, 0::2] = (A + B + C + D) * 0.5
    out[..., 0::2, 1::2] = (A + B - C - D) * 0.5
    out[..., 1::2, 0::2] = (A - B + C - D) * 0.5
    out[..., 1::2, 1::2] = (A - B - C + D) * 0.5
    return out


def to_gray8(component: np.ndarray, low_pass: bool) -> np.ndarray:
    """Map a 3-channel component to an 8-bit image for inspection.

    Channels are averaged; low-pass values [0, 2] and high-pass values
    [-1, 1] are mapped linearly onto [0, 255].
    """
    g = np.asarray(component).mean(axis=0)
    g = g / 2.0 if low_pass else (g + 1.0) / 2.0
    return np.rint(np.clip(g, 0.0, 1.0) * 255.0).astype(np.uint8)
