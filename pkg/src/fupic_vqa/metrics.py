from __future__ import annotations

import numpy as np


class UndefinedCorrelation(ValueError):
    """Correlation requested for a constant (zero-variance) input."""


def _pair(pred, label) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pred, dtype=np.float64).reshape(-1)
    b = np.asarray(label, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} predictions vs {b.size} labels")
    if a.size < 2:
        raise ValueError("correlation needs at least two pairs")
    return a, b


def rankdata(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    n = a.size
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def plcc(pred, label) -> float:
    """Sample Pearson correlation, no nonlinear pre-mapping."""
    a, b = _pair(pred, label)
    a = a - a.mean()
    b = b - b.mean()
    saa, sbb = float(a @ a), float(b @ b)
    if saa == 0.0 or sbb == 0.0:
        raise UndefinedCorrelation("zero variance: correlation undefined")
    r = float(a @ b) / np.sqrt(saa * sbb)
    return float(min(1.0, max(-1.0, r)))


def srcc(pred, label) -> float:
    """Spearman rank-order correlation (Pearson on average ranks)."""
    a, b = _pair(pred, label)
    return plcc(rankdata(a), rankdata(b))
