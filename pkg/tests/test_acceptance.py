"""Numbered end-to-end acceptance checks.

Each check prints one [PASS]/[FAIL] line (visible under ``pytest -s`` and in
failure reports), so a verbose run doubles as a release checklist.  Wall-clock
budgets and numeric tolerances are asserted, not just reported.
"""

import functools
import math
import time

import numpy as np
import pytest

from conftest import make_clip, make_pred
from test_assignment import brute_force_min_cost
from test_autodiff import weighted_scalar
from test_metrics import random_instance, reference_group_map
from test_stats import clip_with_boxes, scaled

import gadkit.autodiff as ad
from gadkit.assignment import hungarian
from gadkit.autodiff import Param, Tensor, grad_check
from gadkit.baseline import jacobi_eigh, spectral_cluster
from gadkit.data import BBox
from gadkit.metrics import group_map, outlier_miou
from gadkit.model import (
    MAX_CENTER_DISTANCE,
    ModelConfig,
    build_inputs,
    distance_mask,
    forward,
    init_params,
    predict_clip,
)
from gadkit.rng import SplitMix64
from gadkit.stats import inter_group_distance, population_density
from gadkit.synth import SynthSpec, generate, perturb_prediction
from gadkit.training import (
    TrainSchedule,
    clip_loss,
    consistency_loss,
    cross_entropy,
    membership_loss,
    membership_loss_from_logits,
    train,
)


def criterion(num, title):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[FAIL] {num:02d} {title}")
                raise
            print(f"[PASS] {num:02d} {title}")

        return wrapper

    return deco


# ---------------------------------------------------------------------------

@criterion(1, "assignment solver is exhaustively exact (500 matrices, <5s)")
def test_criterion_01_assignment_exact():
    rng = SplitMix64(123)
    start = time.perf_counter()
    for _ in range(500):
        rows = 1 + rng.randint(7)
        cols = rows + rng.randint(8 - rows + 1)
        cost = rng.uniforms((rows, cols), -10.0, 10.0)
        result = hungarian(cost)
        got = sum(cost[i, j] for i, j in enumerate(result.assignment))
        assert got == brute_force_min_cost(cost)
        assert result.total_cost == got
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"took {elapsed:.2f}s"


@criterion(2, "group mAP: exact fixture + 100 instances vs brute force @1e-12")
def test_criterion_02_group_map(two_clip_fixture):
    clips, preds = two_clip_fixture
    assert group_map(clips, preds, theta=1.0).group_map == 0.5
    assert group_map(clips, preds, theta=0.5).group_map == 1.0
    for seed in range(100):
        rclips, rpreds = random_instance(seed)
        for theta in (1.0, 0.7, 0.5, 0.3):
            got = group_map(rclips, rpreds, theta).group_map
            want = reference_group_map(rclips, rpreds, theta)
            assert got == pytest.approx(want, abs=1e-12), (seed, theta)


@criterion(3, "outlier mIoU fixture is exactly 2/3")
def test_criterion_03_outlier_miou(outlier_fixture):
    clips, preds = outlier_fixture
    assert outlier_miou(clips, preds) == 2.0 / 3.0


@criterion(4, "gradients: every op + full model/loss graph vs central diff (<60s)")
def test_criterion_04_gradients():
    start = time.perf_counter()
    rng = SplitMix64(40)

    def p(name, shape, lo=-1.0, hi=1.0):
        return Param(name, rng.uniforms(shape, lo, hi))

    def away_from_kink(shape):
        x = rng.uniforms(shape, 0.2, 1.0)
        sign = np.where(rng.uniforms(shape) < 0.5, -1.0, 1.0)
        return Param("kink", x * sign)

    a = p("a", (3, 4))
    b = p("b", (3, 4))
    m = p("m", (4, 2))
    pos = p("pos", (3, 4), 0.5, 2.0)
    row = p("row", (4,))
    kinked = away_from_kink((3, 4))
    g = p("g", (4,), 0.5, 1.5)
    bias = p("bias", (4,))
    p2w = p("w", (4, 2))
    p2b = p("wb", (2,))
    mask = np.array([[True, False, True, True]] * 3)

    ops = [
        ("add", lambda: ad.add(a, b), (a, b)),
        ("add_bias_row", lambda: ad.add(a, row), (a, row)),
        ("neg", lambda: ad.neg(a), (a,)),
        ("mul", lambda: ad.mul(a, b), (a, b)),
        ("div", lambda: ad.div(a, pos), (a, pos)),
        ("matmul", lambda: ad.matmul(a, m), (a, m)),
        ("transpose", lambda: ad.transpose(a), (a,)),
        ("reshape", lambda: ad.reshape(a, (4, 3)), (a,)),
        ("concat0", lambda: ad.concat([a, b], axis=0), (a, b)),
        ("concat1", lambda: ad.concat([a, b], axis=1), (a, b)),
        ("slice", lambda: ad.tslice(a, (slice(0, 2), slice(1, 4))), (a,)),
        ("gather", lambda: ad.gather(a, [0, 2, 1, 0], axis=0), (a,)),
        ("tsum", lambda: ad.tsum(a, axis=1, keepdims=True), (a,)),
        ("tmean", lambda: ad.tmean(a, axis=0), (a,)),
        ("exp", lambda: ad.exp(a), (a,)),
        ("log", lambda: ad.log(pos), (pos,)),
        ("sqrt", lambda: ad.sqrt(pos), (pos,)),
        ("relu", lambda: ad.relu(kinked), (kinked,)),
        ("sigmoid", lambda: ad.sigmoid(a), (a,)),
        ("softplus", lambda: ad.softplus(a), (a,)),
        ("softmax", lambda: ad.softmax(a), (a,)),
        ("masked_softmax", lambda: ad.masked_softmax(a, mask), (a,)),
        ("logsumexp", lambda: ad.logsumexp(a), (a,)),
        ("masked_logsumexp", lambda: ad.masked_logsumexp(a, mask), (a,)),
        ("linear", lambda: ad.linear(a, p2w, p2b), (a, p2w, p2b)),
        ("layer_norm", lambda: ad.layer_norm(a, g, bias), (a, g, bias)),
        ("cosine_matrix", lambda: ad.cosine_matrix(a), (a,)),
    ]
    for name, build, params in ops:
        report = grad_check(
            lambda: weighted_scalar(build()), list(params), h=1e-5, tol=1e-3
        )
        assert report.passed, (name, report.max_rel_error, report.worst_param)

    # full model + total loss, N=3 actors, K=2 slots, D=8, one layer
    cfg = ModelConfig(
        dim=8, heads=2, layers=1, group_tokens=2, num_classes=3,
        mask_threshold=0.2, frames=1, scene_tokens=2,
    )
    spec = SynthSpec(
        num_clips=1, actors=(3, 3), groups=(1, 1), group_size=(2, 2),
        outlier_fraction=0.4, num_classes=3, seed=0, feature_dim=8,
        num_frames=2, scene_tokens=2,
    )
    clips, feats = generate(spec)
    clip = clips[0]
    actor, scene, boxes = build_inputs(clip, feats[clip.clip_id], cfg.frames)
    params = init_params(cfg, SplitMix64(0))
    schedule = TrainSchedule()

    def loss():
        out = forward(cfg, params, actor, scene, boxes)
        return clip_loss(out, clip, schedule).total(
            schedule.lambda_mem, schedule.lambda_con
        )

    report = grad_check(loss, list(params.values()), h=1e-5, tol=1e-3)
    assert report.passed, (report.max_rel_error, report.worst_param)
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"took {elapsed:.1f}s"


@criterion(5, "closed-form losses: ln(C+1), ln 2, and 2 ln 2")
def test_criterion_05_closed_forms():
    uniform = Tensor(np.zeros((1, 7)))           # six classes plus no-activity
    for label in (0, 3, 6):
        assert cross_entropy(uniform, [label]).item() == pytest.approx(
            math.log(7.0), abs=1e-12
        )
    target = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    assert membership_loss(Tensor(np.full((2, 3), 0.5)), target).item() == pytest.approx(
        math.log(2.0), abs=1e-12
    )
    assert membership_loss_from_logits(
        Tensor(np.zeros((2, 3))), target
    ).item() == pytest.approx(math.log(2.0), abs=1e-12)
    emb = Tensor(np.tile([0.6, 0.8], (3, 1)))    # identical embeddings, one outsider
    assert consistency_loss(emb, [[0, 1]], tau=0.2).item() == pytest.approx(
        2.0 * math.log(2.0), abs=1e-9
    )


TOY_CFG = ModelConfig(
    dim=32, heads=4, layers=6, group_tokens=12, num_classes=6,
    mask_threshold=0.2, frames=5, scene_tokens=4,
)
TOY_SCHEDULE = TrainSchedule(
    epochs=200, batch_size=16, lr_init=5e-4, lr_peak=5e-3, warmup_epochs=5, seed=0,
)


@criterion(6, "toy overfit reaches mAP@1.0 = 100.0 and mIoU >= 0.99 (<10min)")
def test_criterion_06_toy_overfit():
    start = time.perf_counter()
    clips, feats = generate(SynthSpec(seed=0))
    params = init_params(TOY_CFG, SplitMix64(0))
    train(TOY_CFG, params, clips, feats, TOY_SCHEDULE)
    preds = [
        predict_clip(TOY_CFG, params, clip, feats[clip.clip_id]) for clip in clips
    ]
    strict = group_map(clips, preds, theta=1.0).group_map
    miou = outlier_miou(clips, preds)
    elapsed = time.perf_counter() - start
    print(f"  toy overfit: mAP@1.0 = {100.0 * strict:.1f}, "
          f"outlier mIoU = {miou:.4f}, {elapsed:.0f}s")
    assert 100.0 * strict == 100.0
    assert miou >= 0.99
    assert elapsed < 600.0, f"took {elapsed:.0f}s"


@criterion(7, "mean mAP non-increasing over 50 noise levels; theta never helps")
def test_criterion_07_monotonicity():
    spec = SynthSpec(
        num_clips=10, actors=(5, 7), groups=(1, 1), group_size=(3, 4),
        outlier_fraction=0.3, seed=9,
    )
    clips, _ = generate(spec)
    means = []
    for noise in np.linspace(0.0, 1.0, 50):
        level = [
            group_map(
                clips, perturb_prediction(clips, float(noise), seed=s), theta=1.0
            ).group_map
            for s in range(10)
        ]
        means.append(float(np.mean(level)))
    assert means[0] == 1.0
    for lo, hi in zip(means, means[1:]):
        assert hi <= lo + 1e-12

    for seed in range(50):
        rclips, rpreds = random_instance(seed + 1000)
        loose = group_map(rclips, rpreds, 0.5)
        strict = group_map(rclips, rpreds, 1.0)
        for cls, ap in strict.per_class_ap.items():
            assert ap <= loose.per_class_ap[cls] + 1e-12


@criterion(8, "spectral recovery on two cliques (100 seeds); residuals <= 1e-8")
def test_criterion_08_spectral():
    a = np.zeros((5, 5))
    a[:3, :3] = 1.0
    a[3:, 3:] = 1.0
    np.fill_diagonal(a, 0.0)
    for seed in range(100):
        labels = spectral_cluster(a, 2, seed)
        parts = {}
        for idx, lab in enumerate(labels):
            parts.setdefault(int(lab), set()).add(idx)
        assert set(map(frozenset, parts.values())) == {
            frozenset({0, 1, 2}),
            frozenset({3, 4}),
        }, seed

    rng = SplitMix64(8)
    for n in (2, 4, 7, 10, 13):
        m = rng.normals((n, n))
        sym = 0.5 * (m + m.T)
        vals, vecs = jacobi_eigh(sym)
        resid = sym @ vecs - vecs * vals[None, :]
        assert np.max(np.abs(resid)) <= 1e-8
    deg = a.sum(axis=1)
    lap = np.eye(5) - a / np.sqrt(np.outer(deg, deg))
    vals, vecs = jacobi_eigh(0.5 * (lap + lap.T))
    resid = lap @ vecs - vecs * vals[None, :]
    assert np.max(np.abs(resid)) <= 1e-8


@criterion(9, "scene statistics: exact fixtures and scale invariance")
def test_criterion_09_stats():
    gap = clip_with_boxes(
        "a", [({1, 2}, 1)], {1: BBox(0, 0, 1, 1), 2: BBox(2, 0, 3, 1)}
    )
    assert population_density(gap) == pytest.approx(2.0 / 3.0, abs=1e-12)

    spread = clip_with_boxes(
        "b",
        [({1, 2}, 1)],
        {
            1: BBox(0.0, 0.0, 1.0, 1.0),
            2: BBox(0.0, 1.0, 1.0, 2.0),
            3: BBox(2.0, 0.0, 3.0, 1.0),
        },
        outliers={3},
    )
    assert inter_group_distance([spread]) == pytest.approx(2.0, abs=1e-12)

    rng = SplitMix64(90)
    for _ in range(10):
        boxes = {}
        for actor in range(1, 6):
            x, y = rng.uniform(0, 50), rng.uniform(0, 50)
            boxes[actor] = BBox(x, y, x + rng.uniform(0.5, 4), y + rng.uniform(0.5, 4))
        clip = clip_with_boxes("c", [({1, 2, 3}, 1)], boxes, outliers={4, 5})
        big = scaled(clip, rng.uniform(0.1, 25.0))
        assert population_density(big) == pytest.approx(
            population_density(clip), rel=1e-9
        )
        assert inter_group_distance([big]) == pytest.approx(
            inter_group_distance([clip]), rel=1e-9
        )


@criterion(10, "distance mask: wide radius is bitwise inert, 0.2 blocks the pair")
def test_criterion_10_distance_mask():
    mask = distance_mask(np.array([[0.1, 0.1], [0.5, 0.5]]), 0.2)
    assert not mask[0, 1] and not mask[1, 0]
    assert mask[0, 0] and mask[1, 1]

    cfg = ModelConfig(
        dim=8, heads=2, layers=2, group_tokens=3, num_classes=3,
        mask_threshold=MAX_CENTER_DISTANCE, frames=2, scene_tokens=2,
    )
    params = init_params(cfg, SplitMix64(3))
    rng = SplitMix64(9)
    actor = [rng.normals((3, cfg.dim)) for _ in range(2)]
    scene = [rng.normals((cfg.scene_tokens, cfg.dim)) for _ in range(2)]
    centers = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.9]])
    boxes = np.concatenate([centers, np.full((3, 2), 0.05)], axis=1)
    wide = forward(cfg, params, actor, scene, boxes, use_distance_mask=True)
    plain = forward(cfg, params, actor, scene, boxes, use_distance_mask=False)
    for name in (
        "actor_embed", "group_embed", "actor_logits", "group_logits",
        "membership_logits",
    ):
        assert np.array_equal(getattr(wide, name).data, getattr(plain, name).data), name

    tight_cfg = ModelConfig(
        dim=8, heads=2, layers=2, group_tokens=3, num_classes=3,
        mask_threshold=0.2, frames=2, scene_tokens=2,
    )
    tight_params = init_params(tight_cfg, SplitMix64(3))
    out = forward(
        tight_cfg, tight_params, actor, scene, boxes,
        use_distance_mask=True, collect_attention=True,
    )
    for frame_attn in out.actor_attention:
        for layer_attn in frame_attn:
            for head_attn in layer_attn:
                assert head_attn[0, 1] == 0.0 and head_attn[1, 0] == 0.0
                np.testing.assert_allclose(head_attn.sum(axis=-1), 1.0, atol=1e-12)
