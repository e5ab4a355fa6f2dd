"""Frame-supervised training: exact gradients, Adam, finite-difference checks."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .frame_io import VideoManifest
from .metrics import UndefinedCorrelation, srcc
from .model import (ModelConfig, ModelParams, NumericalError, backward_patches,
                    forward_patches, forward_scores, init_params, save_checkpoint)
from .pipeline import FrameLoader, frame_patch_sets, score_video
from .sampler import SupervisionUnit
from .scoring import region_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    micro_batch: int = 16
    units_per_step: int = 4
    interval: int = 10
    split: float = 0.8
    aggregation: str = "region"
    strategy: str = "fupic"
    model: ModelConfig = field(default_factory=ModelConfig)
    checkpoint_out: str | None = None

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError(f"split fraction must be in (0, 1), got {self.split}")
        if self.micro_batch < 1 or self.units_per_step < 1:
            raise ValueError("micro_batch and units_per_step must be >= 1")
        if self.aggregation not in ("region", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.strategy not in ("fupic", "random_crop"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


GradientSet = dict[str, np.ndarray]


# --- gradients ---------------------------------------------------------------

def _frame_head_grads(scores, logits, label, aggregation):
    """Loss and d(loss)/d(raw score), d(loss)/d(logit) for one frame."""
    n = scores.size
    if aggregation == "region":
        y = region_weights(logits)
    else:
        y = np.full(n, 1.0 / n)
    pred = float(y @ scores)
    resid = pred - label
    d_pred = 2.0 * resid
    d_score = d_pred * y
    d_logit = d_pred * y * (scores - pred) if aggregation == "region" else np.zeros(n)
    return resid * resid, d_score, d_logit


def compute_gradients(unit: SupervisionUnit, params: ModelParams, micro_batch: int | None = None,
                      aggregation: str = "region") -> tuple[float, GradientSet]:
    """Frame loss and its exact gradient w.r.t. every parameter.

    With ``micro_batch`` smaller than the frame's patch count, raw outputs
    for all patches are computed first (no activations kept), then each
    chunk is re-run with its cache and back-propagated; chunk gradients are
    summed in patch order.
    """
    patches = unit.patch_set.patches
    n = len(patches)
    step = n if not micro_batch or micro_batch >= n else micro_batch
    if step == n:
        scores, logits, cache = forward_patches(patches, params, keep_cache=True)
        loss, d_score, d_logit = _frame_head_grads(scores, logits, unit.label, aggregation)
        return loss, backward_patches(d_score, d_logit, cache, params)

    scores, logits = forward_scores(patches, params, step)
    loss, d_score, d_logit = _frame_head_grads(scores, logits, unit.label, aggregation)
    grads: GradientSet | None = None
    for lo in range(0, n, step):
        _, _, cache = forward_patches(patches[lo:lo + step], params, keep_cache=True)
        g = backward_patches(d_score[lo:lo + step], d_logit[lo:lo + step], cache, params)
        if grads is None:
            grads = g
        else:
            for k in grads:
                grads[k] = grads[k] + g[k]
    return loss, grads


def batch_gradients(units: Sequence[SupervisionUnit], params: ModelParams,
                    micro_batch: int | None = None, aggregation: str = "region"
                    ) -> tuple[float, GradientSet]:
    """Mean loss and mean gradient over supervision units."""
    total, acc = 0.0, None
    for unit in units:
        loss, g = compute_gradients(unit, params, micro_batch, aggregation)
        total += loss
        if acc is None:
            acc = g
        else:
            for k in acc:
                acc[k] = acc[k] + g[k]
    m = len(units)
    for k, v in acc.items():
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"gradient of {k}")
        acc[k] = v / m
    return total / m, acc


def unit_loss(unit: SupervisionUnit, params: ModelParams, aggregation: str = "region") -> float:
    scores, logits = forward_scores(unit.patch_set.patches, params)
    return _frame_head_grads(scores, logits, unit.label, aggregation)[0]


# --- optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.arrays.items()},
                   {k: np.zeros_like(a) for k, a in params.arrays.items()})


def optimizer_step(params: ModelParams, grads: GradientSet, state: AdamState,
                   config: TrainConfig) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    b1, b2 = config.beta1, config.beta2
    t = state.step + 1
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_arrays, m_out, v_out = {}, {}, {}
    for name, p in params.arrays.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        new_arrays[name] = p - config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
        m_out[name], v_out[name] = m, v
    return ModelParams(params.config, new_arrays), AdamState(m_out, v_out, t)


# --- finite differences --------------------------------------------------------

def grad_check(params: ModelParams, unit: SupervisionUnit, epsilon: float = 1e-3,
               max_per_group: int | None = None, seed: int = 0, aggregation: str = "region",
               per_group: dict[str, float] | None = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Every coordinate is checked unless ``max_per_group`` caps it, in which
    case a seeded random subset of that many coordinates is taken from each
    parameter array.  ``per_group``, when given, receives the worst error
    for each array.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _, grads = compute_gradients(unit, params, aggregation=aggregation)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in params.names():
        base = params[name]
        idx = np.arange(base.size)
        if max_per_group is not None and base.size > max_per_group:
            idx = np.sort(rng.choice(base.size, max_per_group, replace=False))
        analytic = grads[name].ravel()
        group_worst = 0.0
        for i in idx:
            probe = params.copy()
            flat = probe.arrays[name].reshape(-1)
            flat[i] = base.flat[i] + epsilon
            up = unit_loss(unit, probe, aggregation)
            flat[i] = base.flat[i] - epsilon
            down = unit_loss(unit, probe, aggregation)
            numeric = (up - down) / (2.0 * epsilon)
            ga = analytic[i]
            err = abs(ga - numeric) / max(abs(ga), abs(numeric), 1e-8)
            group_worst = max(group_worst, err)
        if per_group is not None:
            per_group[name] = group_worst
        worst = max(worst, group_worst)
    return worst


# --- training loop -------------------------------------------------------------

@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)
    train_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_srcc", "test_srcc"])
        for r in self.records:
            w.writerow([r["epoch"], repr(r["loss"]), repr(r["train_srcc"]), repr(r["test_srcc"])])
        return buf.getvalue()


def split_videos(videos: Sequence[VideoManifest], fraction: float, rng: np.random.Generator
                 ) -> tuple[list[VideoManifest], list[VideoManifest]]:
    """Video-level random split; frames of one video never straddle the split."""
    n = len(videos)
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split {fraction} of {n} videos leaves an empty side")
    order = rng.permutation(n)
    return [videos[i] for i in order[:n_train]], [videos[i] for i in order[n_train:]]


def _safe_srcc(pred, label) -> float:
    try:
        return srcc(pred, label)
    except (UndefinedCorrelation, ValueError):
        return float("nan")


def evaluate(videos: Sequence[VideoManifest], params: ModelParams, config: TrainConfig,
             loader: FrameLoader) -> tuple[list[float], float]:
    preds = [score_video(v, params, config.interval, loader, config.aggregation,
                         config.micro_batch, config.strategy, config.seed).value
             for v in videos]
    return preds, _safe_srcc(preds, [v.mos for v in videos])


def train(manifests: Sequence[VideoManifest], config: TrainConfig,
          loader: FrameLoader | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[ModelParams, TrainHistory]:
    missing = [v.video_id for v in manifests if v.mos is None]
    if missing:
        raise ValueError(f"videos without mos: {missing[:5]}")
    rng = np.random.default_rng(config.seed)
    train_set, test_set = split_videos(list(manifests), config.split, rng)
    params = init_params(config.model, rng)
    history = TrainHistory(train_ids=[v.video_id for v in train_set],
                           test_ids=[v.video_id for v in test_set])
    loader = loader or FrameLoader()
    state = AdamState.zeros_like(params)
    l = config.model.patch_size

    fupic_units = None
    if config.strategy == "fupic":
        fupic_units = [SupervisionUnit(ps, v.mos) for v in train_set
                       for ps in frame_patch_sets(v, loader, l, config.interval)]

    for epoch in range(1, config.epochs + 1):
        if fupic_units is not None:
            units = fupic_units
        else:
            # fresh random crop per frame every epoch
            units = [SupervisionUnit(ps, v.mos) for v in train_set
                     for ps in frame_patch_sets(v, loader, l, config.interval, "random_crop", rng)]
        order = rng.permutation(len(units))
        losses = []
        for lo in range(0, len(order), config.units_per_step):
            batch = [units[i] for i in order[lo:lo + config.units_per_step]]
            loss, grads = batch_gradients(batch, params, config.micro_batch, config.aggregation)
            params, state = optimizer_step(params, grads, state, config)
            losses.append(loss)
        _, train_srcc = evaluate(train_set, params, config, loader)
        _, test_srcc = evaluate(test_set, params, config, loader)
        rec = {"epoch": epoch, "loss": float(np.mean(losses)),
               "train_srcc": train_srcc, "test_srcc": test_srcc}
        history.records.append(rec)
        log.info("epoch %d loss=%.5f train_srcc=%.4f test_srcc=%.4f", epoch, rec["loss"],
                 train_srcc, test_srcc)
        if on_epoch is not None:
            on_epoch(rec)

    if config.checkpoint_out:
        save_checkpoint(params, config.checkpoint_out)
    return params, history
