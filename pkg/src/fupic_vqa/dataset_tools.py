"""Dataset construction numerics: clip indicators, representative subset
selection, and pair-comparison scaling to [0, 1] quality scores."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .frame_io import Frame

N_BINS = 5
MAD_SCALE = 0.6745


@dataclass(frozen=True)
class IndicatorVector:
    spatial_activity: float
    temporal_activity: float
    noise: float
    brightness: float
    contrast: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self))


def luma(frame: Frame | np.ndarray) -> np.ndarray:
    data = frame.data if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)
    return 0.299 * data[0] + 0.587 * data[1] + 0.114 * data[2]


def sobel_magnitude(y: np.ndarray) -> np.ndarray:
    """Gradient magnitude on the valid (interior) region, no border padding."""
    tl, tc, tr = y[:-2, :-2], y[:-2, 1:-1], y[:-2, 2:]
    ml, mr = y[1:-1, :-2], y[1:-1, 2:]
    bl, bc, br = y[2:, :-2], y[2:, 1:-1], y[2:, 2:]
    gx = (tr + 2 * mr + br) - (tl + 2 * ml + bl)
    gy = (bl + 2 * bc + br) - (tl + 2 * tc + tr)
    return np.hypot(gx, gy)


def laplacian(y: np.ndarray) -> np.ndarray:
    """4-neighbour 3x3 Laplacian on the valid region."""
    return y[:-2, 1:-1] + y[2:, 1:-1] + y[1:-1, :-2] + y[1:-1, 2:] - 4.0 * y[1:-1, 1:-1]


def noise_sigma(y: np.ndarray) -> float:
    """Robust noise level: MAD of the Laplacian response, scaled for a Gaussian."""
    r = laplacian(y)
    return float(np.median(np.abs(r - np.median(r))) / MAD_SCALE)


def indicators(frames: Sequence[Frame | np.ndarray]) -> IndicatorVector:
    """SI/TI-style clip descriptors plus noise, brightness and contrast.

    SI is the max over frames of the Sobel-magnitude stdev, TI the max over
    consecutive pairs of the frame-difference stdev, both on luma in [0, 1].
    """
    if len(frames) < 2:
        raise ValueError("indicators need at least two frames (temporal activity is undefined)")
    ys = [luma(f) for f in frames]
    if any(y.shape[0] < 3 or y.shape[1] < 3 for y in ys):
        raise ValueError("frames must be at least 3x3")
    stack = np.stack(ys)
    si = max(float(np.std(sobel_magnitude(y))) for y in ys)
    ti = max(float(np.std(b - a)) for a, b in zip(ys, ys[1:]))
    noise = float(np.mean([noise_sigma(y) for y in ys]))
    return IndicatorVector(si, ti, noise, float(stack.mean()), float(stack.std()))


def indicators_csv(rows: Iterable[tuple[str, IndicatorVector]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["video_id"] + IndicatorVector.columns())
    for vid, ind in rows:
        w.writerow([vid] + [repr(float(v)) for v in astuple(ind)])
    return buf.getvalue()


# --- representative sampling ----------------------------------------------------

def indicator_bins(pool: Sequence[IndicatorVector] | np.ndarray, n_bins: int = N_BINS) -> np.ndarray:
    """Bin index per (clip, indicator) after min-max normalising each indicator over the pool."""
    x = np.array([p.as_array() for p in pool]) if not isinstance(pool, np.ndarray) else pool
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    norm = (x - lo) / span
    return np.minimum((norm * n_bins).astype(np.int64), n_bins - 1)


def uniformity_objective(bins: np.ndarray, selected: Sequence[int], n_bins: int = N_BINS) -> float:
    """Sum over indicators of squared deviation of bin counts from ``m / n_bins``."""
    m = len(selected)
    if m == 0:
        return 0.0
    total = 0.0
    for col in bins[list(selected)].T:
        counts = np.bincount(col, minlength=n_bins)
        total += float(np.sum((counts - m / n_bins) ** 2))
    return total


def representative_sample(pool: Sequence[IndicatorVector] | np.ndarray, k: int,
                          n_bins: int = N_BINS) -> list[int]:
    """Greedy selection towards flat per-indicator histograms.

    Returns pool indices in the order picked; ties go to the lower index,
    so the result for ``k - 1`` is always a prefix of the result for ``k``.
    """
    n = len(pool)
    if k > n:
        raise ValueError(f"cannot pick {k} clips from a pool of {n}")
    if k <= 0:
        return []
    bins = indicator_bins(pool, n_bins)
    n_ind = bins.shape[1]
    counts = np.zeros((n_ind, n_bins))
    cols = np.arange(n_ind)
    chosen: list[int] = []
    available = np.ones(n, dtype=bool)
    for m in range(1, k + 1):
        best, best_val = -1, np.inf
        for i in np.flatnonzero(available):
            c = counts.copy()
            c[cols, bins[i]] += 1
            val = float(np.sum((c - m / n_bins) ** 2))
            if val < best_val:
                best, best_val = int(i), val
        chosen.append(best)
        available[best] = False
        counts[cols, bins[best]] += 1
    return chosen


# --- pair comparison scaling ---------------------------------------------------

@dataclass(frozen=True)
class PairComparisonRecord:
    winner_id: str
    loser_id: str
    count: int = 1

    def __post_init__(self):
        if self.winner_id == self.loser_id:
            raise ValueError(f"self-comparison for {self.winner_id!r}")
        if self.count < 1:
            raise ValueError("count must be a positive integer")


@dataclass(frozen=True)
class MosRecord:
    video_id: str
    mos: float


def bt_log_likelihood(s: np.ndarray, wins: np.ndarray) -> float:
    """``sum_ij wins[i, j] * log(sigmoid(s_i - s_j))``."""
    diff = s[:, None] - s[None, :]
    return float(-np.sum(wins * np.logaddexp(0.0, -diff)))


def bt_gradient(s: np.ndarray, wins: np.ndarray) -> np.ndarray:
    n_ij = wins + wins.T
    p = 1.0 / (1.0 + np.exp(-(s[:, None] - s[None, :])))
    return wins.sum(axis=1) - np.sum(n_ij * p, axis=1)


def _strongly_connected(wins: np.ndarray) -> bool:
    adj = wins > 0
    n = len(adj)

    def reach(a):
        seen, stack = {0}, [0]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(a[i]):
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        return len(seen) == n

    return reach(adj) and reach(adj.T)


def bradley_terry_scores(wins: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000,
                         damping: float = 0.5) -> np.ndarray:
    """Maximum-likelihood Bradley-Terry strengths (log scale, zero mean).

    Damped minorise-maximise fixed point
    ``pi_i <- W_i / sum_j n_ij / (pi_i + pi_j)``, iterated in log space
    until the log-likelihood gradient norm drops below ``tol``.
    """
    wins = np.asarray(wins, dtype=np.float64)
    n = len(wins)
    if n == 1:
        return np.zeros(1)
    n_ij = wins + wins.T
    w_tot = wins.sum(axis=1)
    s = np.zeros(n)
    for _ in range(max_iter):
        if np.linalg.norm(bt_gradient(s, wins)) < tol:
            break
        pi = np.exp(s)
        denom = np.sum(n_ij / (pi[:, None] + pi[None, :]), axis=1)
        target = np.log(w_tot / denom)
        s = s + damping * (target - s)
        s -= s.mean()
    else:
        warnings.warn("Bradley-Terry iteration hit max_iter before converging", RuntimeWarning)
    return s


def _components(n: int, wins: np.ndarray) -> list[list[int]]:
    adj = (wins + wins.T) > 0
    label = [-1] * n
    comps = []
    for start in range(n):
        if label[start] >= 0:
            continue
        comp, stack = [], [start]
        label[start] = len(comps)
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in np.flatnonzero(adj[i]):
                if label[j] < 0:
                    label[j] = len(comps)
                    stack.append(int(j))
        comps.append(sorted(comp))
    return comps


PRIOR_COUNT = 0.01


def bradley_terry_mos(records: Sequence[PairComparisonRecord], tol: float = 1e-10,
                      items: Sequence[str] | None = None) -> list[MosRecord]:
    """Scale pairwise outcomes to per-item scores rescaled min-max onto [0, 1].

    Items appear in order of first mention, or in the order of ``items``
    when given (every listed item must then take part in a comparison).  A disconnected comparison
    graph is scaled per component (with a warning).  If some item never
    wins or never loses inside its component the MLE is unbounded; a
    pseudo-count of ``PRIOR_COUNT`` wins in each direction of every compared
    pair is then added (with a warning).  A zero score range maps
    everything to 0.5.
    """
    if not records:
        raise ValueError("no comparison records")
    ids: list[str] = list(dict.fromkeys(items)) if items is not None else []
    index: dict[str, int] = {vid: i for i, vid in enumerate(ids)}
    mentioned = set()
    for r in records:
        mentioned.update((r.winner_id, r.loser_id))
        if items is not None:
            continue
        for vid in (r.winner_id, r.loser_id):
            if vid not in index:
                index[vid] = len(ids)
                ids.append(vid)
    if items is not None:
        unknown = mentioned - set(ids)
        if unknown:
            raise ValueError(f"records mention unlisted items: {sorted(unknown)[:5]}")
        lonely = [vid for vid in ids if vid not in mentioned]
        if lonely:
            raise ValueError(f"items with no comparisons: {lonely[:5]}")
    n = len(ids)
    wins = np.zeros((n, n))
    for r in records:
        wins[index[r.winner_id], index[r.loser_id]] += r.count

    comps = _components(n, wins)
    if len(comps) > 1:
        warnings.warn(f"comparison graph has {len(comps)} components; scaling each separately",
                      RuntimeWarning)
    s = np.zeros(n)
    for comp in comps:
        sub = wins[np.ix_(comp, comp)]
        if len(comp) > 1 and not _strongly_connected(sub):
            warnings.warn("some items never win or never lose; adding a weak symmetric prior",
                          RuntimeWarning)
            sub = sub + PRIOR_COUNT * ((sub + sub.T) > 0)
        s[comp] = bradley_terry_scores(sub, tol)

    lo, hi = s.min(), s.max()
    if hi - lo < 1e-9:
        mos = np.full(n, 0.5)
    else:
        mos = (s - lo) / (hi - lo)
    return [MosRecord(vid, float(m)) for vid, m in zip(ids, mos)]


def read_pc_csv(text: str) -> list[PairComparisonRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and not {"winner_id", "loser_id", "count"} <= set(rows[0]):
        raise ValueError("PC CSV needs columns winner_id,loser_id,count")
    return [PairComparisonRecord(r["winner_id"], r["loser_id"], int(r["count"])) for r in rows]


def mos_csv(records: Sequence[MosRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["video_id", "mos"])
    for r in records:
        w.writerow([r.video_id, repr(r.mos)])
    return buf.getvalue()
