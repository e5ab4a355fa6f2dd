import numpy as np
import pytest

from fupic_vqa.haar import haar_forward
from fupic_vqa.model import ModelConfig, ModelParams, embed_fuse, encode, init_params
from fupic_vqa.sampler import SupervisionUnit, partition
from fupic_vqa.synthetic import make_corpus
from fupic_vqa.trainer import (AdamState, TrainConfig, batch_gradients, compute_gradients,
                               grad_check, optimizer_step, split_videos, train, unit_loss)

SMALL = ModelConfig(patch_size=16, token_side=2, dim=8, depth=2, window=2, heads=2)


def small_params(seed=0, weight_scale=0.3):
    rng = np.random.default_rng(seed)
    p = init_params(SMALL, rng)
    # a live weight head so the region-aware path is exercised
    p.arrays["weight_w"] = rng.normal(size=p["weight_w"].shape) * weight_scale
    return p


def small_unit(h=32, w=48, label=0.7, seed=1):
    frame = np.random.default_rng(seed).uniform(size=(3, h, w))
    return SupervisionUnit(partition(frame, SMALL.patch_size, "f"), label)


def rel_global(a, b):
    num = max(float(np.abs(a[k] - b[k]).max()) for k in a)
    den = max(float(np.abs(b[k]).max()) for k in b)
    return num / den


# --- optimizer -------------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    p = small_params()
    zero = {k: np.zeros_like(v) for k, v in p.arrays.items()}
    q, state = optimizer_step(p, zero, AdamState.zeros_like(p), TrainConfig())
    assert q.flatten().tobytes() == p.flatten().tobytes()
    assert state.step == 1


def test_adam_first_step_is_lr_sized():
    p = small_params()
    rng = np.random.default_rng(3)
    g = {k: rng.normal(size=v.shape) for k, v in p.arrays.items()}
    before = p.flatten().copy()
    q, _ = optimizer_step(p, g, AdamState.zeros_like(p), TrainConfig(lr=1e-3))
    flat_g = np.concatenate([g[k].ravel() for k in p.names()])
    np.testing.assert_allclose(q.flatten() - before, -1e-3 * np.sign(flat_g), rtol=1e-4)
    np.testing.assert_array_equal(p.flatten(), before)


def test_adam_quadratic_bowl():
    cfg = ModelConfig(patch_size=4, token_side=2, dim=2, depth=0, heads=1)
    p = ModelParams.zeros(cfg)
    target = {k: np.full(v.shape, 0.5) for k, v in p.arrays.items()}
    state = AdamState.zeros_like(p)
    tc = TrainConfig(lr=0.05)
    for _ in range(2000):
        g = {k: 2 * (p[k] - target[k]) for k in p.arrays}
        p, state = optimizer_step(p, g, state, tc)
    for k in p.arrays:
        np.testing.assert_allclose(p[k], target[k], atol=1e-4)


def test_adam_shape_mismatch():
    p = small_params()
    g = {k: np.zeros_like(v) for k, v in p.arrays.items()}
    g["alpha"] = np.zeros(3)
    with pytest.raises(ValueError):
        optimizer_step(p, g, AdamState.zeros_like(p), TrainConfig())


# --- gradients ----------------------------------------------------------------------

@pytest.mark.parametrize("micro", [1, 2, 4, 5])
def test_micro_batch_matches_full(micro):
    p, u = small_params(), small_unit()
    loss_full, full = compute_gradients(u, p)
    loss_mb, mb = compute_gradients(u, p, micro_batch=micro)
    assert loss_mb == loss_full
    assert rel_global(mb, full) <= 1e-10


def test_every_patch_contributes():
    p, u = small_params(), small_unit()
    _, base = compute_gradients(u, p)
    for i in range(u.n):
        patches = u.patch_set.patches.copy()
        patches[i] += 0.05
        ps = u.patch_set.__class__(u.frame_id, patches, u.patch_set.origins,
                                   u.patch_set.patch_size, u.patch_set.frame_shape)
        _, g = compute_gradients(SupervisionUnit(ps, u.label), p)
        assert rel_global(g, base) > 1e-6, f"patch {i} is detached"


def test_every_group_receives_gradient():
    p, u = small_params(), small_unit()
    _, g = compute_gradients(u, p)
    assert set(g) == set(p.arrays)
    for k, v in g.items():
        assert np.abs(v).max() > 0, k


def test_score_head_closed_form():
    p, u = small_params(weight_scale=0.0), small_unit()
    feats = encode(embed_fuse(haar_forward(u.patch_set.patches), p), p)
    scores = feats @ p["score_w"] + p["score_b"][0]
    pred = scores.mean()
    _, g = compute_gradients(u, p)
    np.testing.assert_allclose(g["score_w"], 2 * (pred - u.label) * feats.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(g["score_b"], [2 * (pred - u.label)], atol=1e-12)


def test_constant_patch_gives_no_high_pass_alpha_gradient():
    p = small_params()
    p.arrays["le_b"][:] = 0.0
    frame = np.full((3, 16, 32), 0.4)
    _, g = compute_gradients(SupervisionUnit(partition(frame, 16), 0.9), p)
    assert g["alpha"][0] != 0.0
    np.testing.assert_allclose(g["alpha"][1:], 0.0, atol=1e-15)


def test_uniform_logits_match_mean_aggregation():
    p, u = small_params(weight_scale=0.0), small_unit()
    lr, gr = compute_gradients(u, p, aggregation="region")
    lm, gm = compute_gradients(u, p, aggregation="mean")
    assert lr == pytest.approx(lm, abs=1e-15)
    for k in gr:
        if not k.startswith("weight_"):
            np.testing.assert_allclose(gr[k], gm[k], atol=1e-14, err_msg=k)


def test_batch_gradient_is_mean():
    p = small_params()
    a, b = small_unit(seed=1, label=0.2), small_unit(seed=2, label=0.9)
    la, ga = compute_gradients(a, p)
    lb, gb = compute_gradients(b, p)
    loss, g = batch_gradients([a, b], p)
    assert loss == pytest.approx((la + lb) / 2)
    for k in g:
        np.testing.assert_allclose(g[k], (ga[k] + gb[k]) / 2, atol=1e-15)


def test_unit_loss_matches_compute():
    p, u = small_params(), small_unit()
    assert unit_loss(u, p) == pytest.approx(compute_gradients(u, p)[0], abs=1e-15)


def test_grad_check_small_model_passes():
    per = {}
    err = grad_check(small_params(), small_unit(32, 32), epsilon=1e-3, per_group=per)
    assert err < 1e-4
    assert set(per) == set(small_params().arrays)


def test_grad_check_error_shrinks_with_epsilon():
    p, u = small_params(), small_unit(16, 32)
    big = grad_check(p, u, epsilon=1e-1, max_per_group=4)
    small = grad_check(p, u, epsilon=1e-3, max_per_group=4)
    assert small < big


def test_grad_check_catches_wrong_gradient(monkeypatch):
    import fupic_vqa.trainer as tr
    real = tr.compute_gradients

    def broken(*a, **kw):
        loss, g = real(*a, **kw)
        g["score_b"] = g["score_b"] * 1.5
        return loss, g

    monkeypatch.setattr(tr, "compute_gradients", broken)
    assert grad_check(small_params(), small_unit(16, 16), max_per_group=2) > 0.1


# --- loop --------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("corpus"), n_videos=6, n_frames=2, width=32,
                       height=32, seed=0)


def tiny_config(**kw):
    base = dict(seed=3, epochs=2, interval=1, micro_batch=2, units_per_step=2, split=0.5,
                model=ModelConfig(patch_size=16, token_side=2, dim=8, depth=1, window=2, heads=2))
    base.update(kw)
    return TrainConfig(**base)


def test_epochs_zero_returns_init(tiny_corpus):
    cfg = tiny_config(epochs=0)
    params, hist = train(tiny_corpus, cfg)
    rng = np.random.default_rng(cfg.seed)
    split_videos(tiny_corpus, cfg.split, rng)
    expected = init_params(cfg.model, rng)
    assert params.flatten().tobytes() == expected.flatten().tobytes()
    assert hist.records == []
    assert len(hist.train_ids) == 3 and len(hist.test_ids) == 3


def test_train_is_deterministic(tiny_corpus, tmp_path):
    a = train(tiny_corpus, tiny_config(checkpoint_out=str(tmp_path / "a.bin")))[1]
    b = train(tiny_corpus, tiny_config(checkpoint_out=str(tmp_path / "b.bin")))[1]
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert a.to_csv() == b.to_csv()
    assert len(a.records) == 2


def test_random_crop_strategy_runs(tiny_corpus):
    params, hist = train(tiny_corpus, tiny_config(strategy="random_crop"))
    assert np.all(np.isfinite(params.flatten()))
    assert hist.to_csv().splitlines()[0] == "epoch,loss,train_srcc,test_srcc"


def test_split_errors_and_sizes(tiny_corpus):
    rng = np.random.default_rng(0)
    tr_, te = split_videos(tiny_corpus, 0.8, rng)
    assert len(tr_) == 5 and len(te) == 1
    assert not {v.video_id for v in tr_} & {v.video_id for v in te}
    with pytest.raises(ValueError):
        split_videos(tiny_corpus[:1], 0.8, rng)
    with pytest.raises(ValueError):
        TrainConfig(split=1.0)


def test_train_requires_labels(tiny_corpus):
    from dataclasses import replace
    unlabeled = [replace(tiny_corpus[0], mos=None)] + list(tiny_corpus[1:])
    with pytest.raises(ValueError, match="mos"):
        train(unlabeled, tiny_config())


def test_adam_scalar_first_step():
    cfg = ModelConfig(patch_size=2, token_side=1, dim=1, depth=0, heads=1)
    p = ModelParams.zeros(cfg)
    g = {k: np.zeros_like(v) for k, v in p.arrays.items()}
    g["score_b"] = np.array([1.0])
    q, _ = optimizer_step(p, g, AdamState.zeros_like(p), TrainConfig(lr=1e-3))
    assert q["score_b"][0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_three_steps_decrease_bowl():
    cfg = ModelConfig(patch_size=2, token_side=1, dim=1, depth=0, heads=1)
    p = ModelParams.zeros(cfg)
    p.arrays["score_b"] = np.array([2.0])
    state, tc = AdamState.zeros_like(p), TrainConfig(lr=0.1)
    losses = [float(p["score_b"][0] ** 2)]
    for _ in range(3):
        g = {k: np.zeros_like(v) for k, v in p.arrays.items()}
        g["score_b"] = 2 * p["score_b"]
        p, state = optimizer_step(p, g, state, tc)
        losses.append(float(p["score_b"][0] ** 2))
    assert all(a > b for a, b in zip(losses, losses[1:]))


def linear_one_token(seed):
    rng = np.random.default_rng(seed)
    p = init_params(ModelConfig(patch_size=2, token_side=1, dim=4, depth=0, heads=1), rng)
    return p, SupervisionUnit(partition(rng.uniform(size=(3, 2, 2)), 2), 0.3)


@pytest.mark.parametrize("seed", range(3))
def test_grad_check_linear_one_token(seed):
    # every coordinate enters the prediction linearly, so the loss is exactly
    # quadratic along each axis and central differences are exact up to rounding
    assert grad_check(*linear_one_token(seed), epsilon=1e-3) < 1e-10


def test_linear_one_token_closed_form():
    p, u = linear_one_token(0)
    maps = haar_forward(u.patch_set.patches)
    feat = embed_fuse(maps, p)[0, 0]
    pred = float(feat @ p["score_w"] + p["score_b"][0])
    loss, g = compute_gradients(u, p)
    assert loss == pytest.approx((pred - 0.3) ** 2, abs=1e-15)
    np.testing.assert_allclose(g["score_w"], 2 * (pred - 0.3) * feat, atol=1e-14)
    np.testing.assert_array_equal(g["weight_w"], 0.0)


def test_all_zero_params_zero_label():
    p = ModelParams.zeros(SMALL)
    loss, g = compute_gradients(small_unit(label=0.0), p)
    assert loss == 0.0
    assert all(not v.any() for v in g.values())
