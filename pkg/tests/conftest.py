"""Shared builders for hand-constructed clips and predictions.

Group metrics care about member sets, not geometry, so the builders place
every actor at a distinct deterministic box and let tests specify only the
grouping structure.
"""

from __future__ import annotations

import numpy as np
import pytest

from gadkit.data import (
    BBox,
    Clip,
    ClipPrediction,
    GroupAnnotation,
    GroupPrediction,
    Tracklet,
)


def make_clip(
    clip_id,
    group_specs,
    outliers=(),
    width=1000,
    height=1000,
    num_frames=4,
    extra_actors=(),
):
    """group_specs: list of (member ids, activity class)."""
    actor_ids = sorted(
        set().union(*[set(m) for m, _ in group_specs], set(outliers), set(extra_actors))
    )
    tracklets = tuple(
        Tracklet(
            actor_id=a,
            boxes=tuple(
                (f, BBox(10.0 * a, 5.0 * a, 10.0 * a + 8.0, 5.0 * a + 16.0))
                for f in range(num_frames)
            ),
        )
        for a in actor_ids
    )
    groups = tuple(
        GroupAnnotation(group_id=i, members=frozenset(m), activity=act)
        for i, (m, act) in enumerate(group_specs)
    )
    return Clip(
        clip_id=clip_id,
        width=width,
        height=height,
        num_frames=num_frames,
        tracklets=tracklets,
        groups=groups,
        outliers=frozenset(outliers),
    )


def make_pred(clip, slot_specs, outliers=(), num_classes=6):
    """slot_specs: list of (member ids, class, confidence)."""
    ids = clip.actor_ids
    slots = []
    for members, cls, conf in slot_specs:
        scores = np.zeros(num_classes + 1)
        scores[cls] = conf
        scores[0] = 1.0 - conf
        member_scores = np.array([1.0 if a in members else 0.0 for a in ids])
        slots.append(GroupPrediction(scores, member_scores))
    return ClipPrediction(
        clip_id=clip.clip_id,
        actor_ids=tuple(ids),
        groups=tuple(slots),
        predicted_outliers=frozenset(outliers),
    )


@pytest.fixture
def two_clip_fixture():
    """Hand-enumerated AP oracle: one exact match, one 2/3-overlap match.

    theta=1.0: detections (conf desc) are TP then FP with 2 ground-truth
    groups, so precision-recall is (1, 0.5) then (0.5, 0.5) and the
    all-point area is 0.5.  theta=0.5: both are TPs, area 1.0.
    """
    c1 = make_clip("a", [({1, 2}, 1)])
    c2 = make_clip("b", [({3, 4, 5}, 1)])
    p1 = make_pred(c1, [({1, 2}, 1, 0.9)], num_classes=1)
    p2 = make_pred(c2, [({3, 4}, 1, 0.8)], outliers={5}, num_classes=1)
    return [c1, c2], [p1, p2]


@pytest.fixture
def outlier_fixture():
    """Outlier sets {6,7} vs {7,8} (IoU 1/3) plus a perfect clip: mean 2/3."""
    c1 = make_clip("x", [({4, 5}, 1), ({8, 9}, 2)], outliers={6, 7})
    p1 = make_pred(c1, [({4, 5}, 1, 0.9), ({8, 9}, 2, 0.9)], outliers={7, 8})
    c2 = make_clip("y", [({1, 2}, 1)], outliers={3})
    p2 = make_pred(c2, [({1, 2}, 1, 0.9)], outliers={3})
    return [c1, c2], [p1, p2]
