import math

import numpy as np
import pytest

import gadkit.autodiff as ad
from conftest import make_clip
from gadkit.autodiff import Param, Tensor
from gadkit.errors import DivergenceError, SchemaError, ShapeError
from gadkit.model import ModelConfig, init_params
from gadkit.rng import SplitMix64
from gadkit.synth import SynthSpec, generate
from gadkit.training import (
    Adam,
    LossBreakdown,
    TrainSchedule,
    clip_loss,
    consistency_loss,
    cross_entropy,
    group_activity_loss,
    individual_action_loss,
    match_groups,
    membership_loss,
    membership_loss_from_logits,
    train,
)

TINY_CFG = ModelConfig(
    dim=8, heads=2, layers=1, group_tokens=2, num_classes=3,
    mask_threshold=0.2, frames=2, scene_tokens=2,
)
TINY_SPEC = SynthSpec(
    num_clips=2, actors=(4, 5), groups=(1, 1), group_size=(2, 3),
    outlier_fraction=0.25, num_classes=3, seed=1,
    feature_dim=8, num_frames=4, scene_tokens=2,
)


# ---------------------------------------------------------------------------
# schedule

def test_schedule_validation():
    with pytest.raises(ShapeError):
        TrainSchedule(epochs=-1)
    with pytest.raises(ShapeError):
        TrainSchedule(epochs=5, warmup_epochs=6)
    with pytest.raises(ShapeError):
        TrainSchedule(tau=0.0)
    TrainSchedule(epochs=0)  # evaluation-only schedule is legal


def test_lr_schedule_shape():
    s = TrainSchedule(epochs=10, warmup_epochs=3, lr_init=1e-5, lr_peak=1e-4)
    assert s.lr_at(0) == 1e-5
    assert s.lr_at(2) == 1e-4                     # end of warmup hits the peak
    assert s.lr_at(3) == 1e-4                     # decay starts at the peak
    assert s.lr_at(9) == pytest.approx(1e-4 / 7.0)
    ramp = [s.lr_at(e) for e in range(10)]
    assert all(b >= a for a, b in zip(ramp[:3], ramp[1:3]))
    assert all(b <= a for a, b in zip(ramp[2:], ramp[3:]))
    with pytest.raises(ValueError):
        s.lr_at(10)


def test_lr_single_warmup_epoch_is_peak():
    s = TrainSchedule(epochs=4, warmup_epochs=1, lr_init=1e-6, lr_peak=1e-3)
    assert s.lr_at(0) == 1e-3


# ---------------------------------------------------------------------------
# closed-form loss values

def test_uniform_logits_cross_entropy_is_log_classes():
    for c in (3, 6, 9):
        logits = Tensor(np.zeros((1, c + 1)))
        assert cross_entropy(logits, [0]).item() == pytest.approx(
            math.log(c + 1), abs=1e-12
        )
        assert cross_entropy(logits, [c]).item() == pytest.approx(
            math.log(c + 1), abs=1e-12
        )


def test_uniform_logits_group_loss():
    clip = make_clip("a", [({1, 2}, 3)])
    logits = Tensor(np.zeros((2, 7)))
    loss = group_activity_loss(logits, (0, 1), clip)
    assert loss.item() == pytest.approx(2.0 * math.log(7.0), abs=1e-12)


def test_indifferent_membership_is_log_two():
    scores = Tensor(np.full((2, 5), 0.5))
    target = np.array([[1, 0, 1, 0, 1], [0, 0, 1, 1, 0]], dtype=np.float64)
    assert membership_loss(scores, target).item() == pytest.approx(
        math.log(2.0), abs=1e-12
    )
    logits = Tensor(np.zeros((2, 5)))
    assert membership_loss_from_logits(logits, target).item() == pytest.approx(
        math.log(2.0), abs=1e-12
    )


def test_membership_interfaces_agree():
    rng = SplitMix64(5)
    z = rng.uniforms((3, 6), -8.0, 8.0)
    t = (rng.uniforms((3, 6)) < 0.5).astype(np.float64)
    a = membership_loss(ad.sigmoid(Tensor(z)), t).item()
    b = membership_loss_from_logits(Tensor(z), t).item()
    assert a == pytest.approx(b, abs=1e-12)


def test_membership_from_logits_survives_saturation():
    z = Tensor(np.array([[1000.0, -1000.0]]))
    t = np.array([[0.0, 1.0]])  # worst case: confident and wrong
    val = membership_loss_from_logits(z, t).item()
    assert np.isfinite(val)
    assert val == pytest.approx(1000.0, rel=1e-9)


def test_consistency_identical_embeddings_pair_plus_outlier():
    emb = Tensor(np.tile([0.6, 0.8, 0.0], (3, 1)))
    loss = consistency_loss(emb, [[0, 1]], tau=0.2)
    assert loss.item() == pytest.approx(2.0 * math.log(2.0), abs=1e-9)


def test_consistency_orthogonal_outlier():
    emb = Tensor(np.array([
        [1.0, 0.0],
        [1.0, 0.0],
        [0.0, 1.0],
    ]))
    loss = consistency_loss(emb, [[0, 1]], tau=0.2)
    assert loss.item() == pytest.approx(2.0 * math.log1p(math.exp(-5.0)), abs=1e-9)


def test_consistency_single_group_covering_everyone_is_zero():
    emb = Tensor(np.tile([1.0, 2.0], (4, 1)))
    loss = consistency_loss(emb, [[0, 1, 2, 3]], tau=0.2)
    assert loss.item() == 0.0


def test_consistency_no_eligible_groups():
    emb = Tensor(np.ones((3, 2)))
    assert consistency_loss(emb, [], tau=0.2).item() == 0.0
    assert consistency_loss(emb, [[0], [2]], tau=0.2).item() == 0.0


def test_individual_action_loss_uniform():
    clip = make_clip("a", [({1, 2}, 2)], outliers={3})
    logits = Tensor(np.zeros((3, 4)))
    assert individual_action_loss(logits, clip).item() == pytest.approx(
        math.log(4.0), abs=1e-12
    )


# ---------------------------------------------------------------------------
# matching

def test_match_groups_picks_obvious_slots():
    clip = make_clip("a", [({1, 2}, 1), ({3, 4}, 2)])
    # slot 2 screams group 0, slot 0 screams group 1, slot 1 is leftover
    probs = np.array(
        [
            [0.05, 0.05, 0.9],
            [0.9, 0.05, 0.05],
            [0.05, 0.9, 0.05],
        ]
    )
    scores = np.array(
        [
            [0.0, 0.0, 1.0, 1.0],
            [0.5, 0.5, 0.5, 0.5],
            [1.0, 1.0, 0.0, 0.0],
        ]
    )
    assignment = match_groups(clip, probs, scores)
    assert assignment[0] == 2
    assert assignment[1] == 0
    assert assignment[2] == 1


def test_clip_loss_terms_and_total():
    clips, feats = generate(TINY_SPEC)
    params = init_params(TINY_CFG, SplitMix64(0))
    from gadkit.model import build_inputs, forward

    clip = clips[0]
    actor, scene, boxes = build_inputs(clip, feats[clip.clip_id], TINY_CFG.frames)
    out = forward(TINY_CFG, params, actor, scene, boxes)
    schedule = TrainSchedule(epochs=1, warmup_epochs=1)
    breakdown = clip_loss(out, clip, schedule)
    vals = breakdown.as_floats()
    assert all(np.isfinite(v) for v in vals.values())
    total = breakdown.total(5.0, 2.0).item()
    want = (
        vals["individual"] + vals["group"] + 5.0 * vals["membership"] + 2.0 * vals["consistency"]
    )
    assert total == pytest.approx(want, rel=1e-12)


def test_clip_loss_without_groups():
    clip = make_clip("a", [], extra_actors={1, 2, 3}, outliers={1, 2, 3})
    from gadkit.model import ModelOutput

    out = ModelOutput(
        actor_embed=Tensor(np.ones((3, 4))),
        group_embed=Tensor(np.ones((2, 4))),
        actor_logits=Tensor(np.zeros((3, 4))),
        group_logits=Tensor(np.zeros((2, 4))),
        membership_logits=Tensor(np.zeros((2, 3))),
    )
    schedule = TrainSchedule(epochs=1, warmup_epochs=1)
    breakdown = clip_loss(out, clip, schedule)
    assert breakdown.membership.item() == 0.0
    assert breakdown.consistency.item() == 0.0
    assert breakdown.group.item() == pytest.approx(2.0 * math.log(4.0), abs=1e-12)


# ---------------------------------------------------------------------------
# optimizer

def test_adam_first_step_matches_hand_computation():
    p = Param("p", np.array([1.0]))
    p.grad[...] = 0.5
    opt = Adam([p])
    opt.step(0.1)
    m_hat = 0.5           # (0.1 * 0.5) / (1 - 0.9)
    v_hat = 0.25          # (0.001 * 0.25) / (1 - 0.999)
    want = 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert p.data[0] == pytest.approx(want, abs=1e-15)


def test_adam_zero_lr_keeps_data_bitwise():
    rng = SplitMix64(3)
    p = Param("p", rng.uniforms((4, 3), -1, 1))
    before = p.data.copy()
    p.grad[...] = rng.uniforms((4, 3), -1, 1)
    opt = Adam([p])
    opt.step(0.0)
    assert np.array_equal(p.data, before)
    assert opt.t == 1 and np.any(opt.m[0] != 0.0)  # state still advances
    opt.step(0.1)
    assert not np.array_equal(p.data, before)


# ---------------------------------------------------------------------------
# training loop

def test_train_returns_history_and_learns():
    clips, feats = generate(TINY_SPEC)
    params = init_params(TINY_CFG, SplitMix64(0))
    schedule = TrainSchedule(
        epochs=8, batch_size=2, lr_init=5e-4, lr_peak=5e-3,
        warmup_epochs=2, seed=0,
    )
    seen = []
    history = train(
        TINY_CFG, params, clips, feats, schedule,
        on_epoch=lambda e, loss: seen.append(e),
    )
    assert len(history) == 8
    assert seen == list(range(8))
    assert history[-1] < history[0]


def test_train_is_deterministic():
    clips, feats = generate(TINY_SPEC)
    schedule = TrainSchedule(
        epochs=3, batch_size=2, lr_init=5e-4, lr_peak=5e-3, warmup_epochs=1, seed=7,
    )
    p1 = init_params(TINY_CFG, SplitMix64(4))
    h1 = train(TINY_CFG, p1, clips, feats, schedule)
    p2 = init_params(TINY_CFG, SplitMix64(4))
    h2 = train(TINY_CFG, p2, clips, feats, schedule)
    assert h1 == h2
    for k in p1:
        assert np.array_equal(p1[k].data, p2[k].data), k


def test_train_epochs_zero_is_identity():
    clips, feats = generate(TINY_SPEC)
    params = init_params(TINY_CFG, SplitMix64(4))
    before = {k: p.data.copy() for k, p in params.items()}
    history = train(TINY_CFG, params, clips, feats, TrainSchedule(epochs=0))
    assert history == []
    for k, p in params.items():
        assert np.array_equal(p.data, before[k])


def test_train_requires_features_for_every_clip():
    clips, feats = generate(TINY_SPEC)
    del feats[clips[1].clip_id]
    params = init_params(TINY_CFG, SplitMix64(0))
    with pytest.raises(SchemaError, match=clips[1].clip_id):
        train(TINY_CFG, params, clips, feats, TrainSchedule(epochs=1, warmup_epochs=1))


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_train_raises_on_divergence():
    clips, feats = generate(TINY_SPEC)
    params = init_params(TINY_CFG, SplitMix64(0))
    # every group member's action CE becomes ~1e308; summing them overflows
    params["head_action.b2"].data[1:] = -1e308
    with pytest.raises(DivergenceError):
        train(TINY_CFG, params, clips, feats, TrainSchedule(epochs=1, warmup_epochs=1))
