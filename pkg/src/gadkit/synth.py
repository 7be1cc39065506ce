"""Seeded synthetic-scene generation.

Groups are planted as spatial clusters around ring-placed centers; members
of a group share a unit-norm class prototype direction in feature space
plus Gaussian noise.  Outliers are deliberately placed close to groups with
a probability that grows with the tightness knob, which is what makes the
localization problem nontrivial.  Everything is a pure function of the
spec, so a fixed seed reproduces files bitwise.

perturb_prediction turns ground truth into predictions with a controlled
per-actor membership flip rate, for calibrating the metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import (
    BBox,
    Clip,
    ClipFeatures,
    ClipPrediction,
    GroupAnnotation,
    GroupPrediction,
    Tracklet,
    save_dataset,
    save_features,
    validate_clip,
)
from .errors import InfeasibleSpec, InvariantError
from .rng import SplitMix64

MEMBER_SPREAD = 0.03
DRIFT_STEP = 0.002


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for one synthetic dataset."""

    num_clips: int = 4
    actors: tuple[int, int] = (8, 10)
    groups: tuple[int, int] = (2, 2)
    group_size: tuple[int, int] = (2, 4)
    outlier_fraction: float = 0.25
    tightness: float = 0.5
    feature_noise: float = 0.05
    num_classes: int = 6
    seed: int = 0
    feature_dim: int = 32
    num_frames: int = 8
    scene_tokens: int = 4
    frame_size: tuple[int, int] = (1280, 720)

    def __post_init__(self):
        for name in ("actors", "groups", "group_size"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise InvariantError(f"{name} range ({lo}, {hi}) is empty")
        if self.group_size[0] < 2:
            raise InvariantError("groups need at least two members")
        for name in ("outlier_fraction", "tightness"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InvariantError(f"{name} must be in [0, 1], got {v}")
        if self.feature_noise < 0:
            raise InvariantError("feature_noise must be nonnegative")
        if self.num_clips < 1 or self.num_classes < 1:
            raise InvariantError("num_clips and num_classes must be >= 1")
        if self.feature_dim < 1 or self.num_frames < 1 or self.scene_tokens < 1:
            raise InvariantError("feature_dim, num_frames, scene_tokens must be >= 1")
        if self.frame_size[0] < 1 or self.frame_size[1] < 1:
            raise InvariantError("frame_size must be positive")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def generate(spec: SynthSpec) -> tuple[list[Clip], dict[str, ClipFeatures]]:
    """Build the clips and their feature tensors for one spec."""
    if spec.actors[0] < spec.groups[1] * spec.group_size[0]:
        raise InfeasibleSpec(
            f"{spec.actors[0]} actors cannot seat {spec.groups[1]} groups of "
            f">= {spec.group_size[0]}"
        )
    rng = SplitMix64(spec.seed)
    dim = spec.feature_dim
    prototypes = {
        c: _unit(rng.normals((dim,))) for c in range(1, spec.num_classes + 1)
    }
    width, height = spec.frame_size
    ring = 0.08 + 0.30 * (1.0 - spec.tightness)
    near_prob = 0.5 + 0.5 * spec.tightness
    near_dist = 0.07 + 0.25 * (1.0 - spec.tightness)

    clips: list[Clip] = []
    features: dict[str, ClipFeatures] = {}
    for ci in range(spec.num_clips):
        n_actors = spec.actors[0] + rng.randint(spec.actors[1] - spec.actors[0] + 1)
        n_groups = spec.groups[0] + rng.randint(spec.groups[1] - spec.groups[0] + 1)
        n_outliers = min(
            round(spec.outlier_fraction * n_actors),
            n_actors - n_groups * spec.group_size[0],
        )
        sizes = [spec.group_size[0]] * n_groups
        extras = n_actors - n_outliers - sum(sizes)
        while extras > 0:
            open_groups = [g for g in range(n_groups) if sizes[g] < spec.group_size[1]]
            if not open_groups:
                break
            sizes[open_groups[rng.randint(len(open_groups))]] += 1
            extras -= 1
        n_outliers += extras

        if n_groups <= spec.num_classes:
            deck = list(range(1, spec.num_classes + 1))
            rng.shuffle(deck)
            classes = deck[:n_groups]
        else:
            classes = [1 + rng.randint(spec.num_classes) for _ in range(n_groups)]

        phase = rng.uniform(0.0, 2.0 * math.pi)
        centers = [
            (
                0.5 + ring * math.cos(phase + 2.0 * math.pi * g / n_groups),
                0.5 + ring * math.sin(phase + 2.0 * math.pi * g / n_groups),
            )
            for g in range(n_groups)
        ]

        # actor layout: group members first, then outliers
        positions: list[tuple[float, float]] = []
        group_of_actor: list[int | None] = []
        for g in range(n_groups):
            for _ in range(sizes[g]):
                positions.append(
                    (
                        centers[g][0] + rng.normal(0.0, MEMBER_SPREAD),
                        centers[g][1] + rng.normal(0.0, MEMBER_SPREAD),
                    )
                )
                group_of_actor.append(g)
        for _ in range(n_outliers):
            if rng.uniform() < near_prob:
                g = rng.randint(n_groups)
                ang = rng.uniform(0.0, 2.0 * math.pi)
                positions.append(
                    (
                        centers[g][0] + near_dist * math.cos(ang),
                        centers[g][1] + near_dist * math.sin(ang),
                    )
                )
            else:
                positions.append((rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)))
            group_of_actor.append(None)

        outlier_dirs = {
            a: _unit(rng.normals((dim,)))
            for a in range(n_actors)
            if group_of_actor[a] is None
        }

        tracklets = []
        for a in range(n_actors):
            wfrac = rng.uniform(0.03, 0.05)
            hfrac = wfrac * rng.uniform(1.8, 2.2) * width / height
            cx = _clamp(positions[a][0], wfrac / 2, 1.0 - wfrac / 2)
            cy = _clamp(positions[a][1], hfrac / 2, 1.0 - hfrac / 2)
            boxes = []
            for f in range(spec.num_frames):
                if f > 0:
                    cx = _clamp(cx + rng.normal(0.0, DRIFT_STEP), wfrac / 2, 1.0 - wfrac / 2)
                    cy = _clamp(cy + rng.normal(0.0, DRIFT_STEP), hfrac / 2, 1.0 - hfrac / 2)
                boxes.append(
                    (
                        f,
                        BBox(
                            (cx - wfrac / 2) * width,
                            (cy - hfrac / 2) * height,
                            (cx + wfrac / 2) * width,
                            (cy + hfrac / 2) * height,
                        ),
                    )
                )
            tracklets.append(Tracklet(actor_id=a, boxes=tuple(boxes)))

        groups = []
        start = 0
        for g in range(n_groups):
            members = frozenset(range(start, start + sizes[g]))
            start += sizes[g]
            groups.append(
                GroupAnnotation(group_id=g, members=members, activity=classes[g])
            )
        outliers = frozenset(range(start, n_actors))

        clip = Clip(
            clip_id=f"synth{ci:03d}",
            width=width,
            height=height,
            num_frames=spec.num_frames,
            tracklets=tuple(tracklets),
            groups=tuple(groups),
            outliers=outliers,
        )
        validate_clip(clip)
        clips.append(clip)

        actor_frames = []
        scene_frames = []
        for f in range(spec.num_frames):
            rows = np.empty((n_actors, dim))
            for a in range(n_actors):
                g = group_of_actor[a]
                base = prototypes[classes[g]] if g is not None else outlier_dirs[a]
                rows[a] = base + spec.feature_noise * rng.normals((dim,))
            actor_frames.append(rows)
            scene_frames.append(rng.normals((spec.scene_tokens, dim)) * 0.1)
        features[clip.clip_id] = ClipFeatures(
            clip_id=clip.clip_id,
            actor_feats=tuple(actor_frames),
            scene_feats=tuple(scene_frames),
        )
    return clips, features


def write_synth(spec: SynthSpec, dataset_path: str, features_path: str) -> None:
    clips, feats = generate(spec)
    save_dataset(clips, dataset_path)
    save_features(feats, features_path)


def perturb_prediction(
    clips: list[Clip],
    noise: float,
    seed: int = 0,
    num_classes: int | None = None,
) -> list[ClipPrediction]:
    """Ground truth corrupted at a given flip rate.

    Each actor's membership column inverts with probability ``noise``; each
    group's class one-hot moves to a different class with the same
    probability.  Draws are consumed unconditionally, so predictions at two
    noise levels under one seed are coupled: every corruption present at
    the lower level is present at the higher one.
    """
    if not (0.0 <= noise <= 1.0):
        raise InvariantError(f"noise must be in [0, 1], got {noise}")
    if num_classes is None:
        num_classes = max((g.activity for c in clips for g in c.groups), default=1)
    rng = SplitMix64(seed)
    preds = []
    for clip in clips:
        ids = clip.actor_ids
        n = len(ids)
        k = len(clip.groups)
        index_of = {a: i for i, a in enumerate(ids)}
        m = np.zeros((k, n))
        for gi, grp in enumerate(clip.groups):
            for a in grp.members:
                m[gi, index_of[a]] = 1.0
        for j in range(n):
            if rng.uniform() < noise:
                m[:, j] = 1.0 - m[:, j]
        slots = []
        for gi, grp in enumerate(clip.groups):
            corrupt = rng.uniform() < noise
            alt = rng.randint(max(num_classes - 1, 1))
            label = grp.activity
            if corrupt and num_classes >= 2:
                others = [c for c in range(1, num_classes + 1) if c != label]
                label = others[alt]
            scores = np.zeros(num_classes + 1)
            scores[label] = 1.0
            slots.append(GroupPrediction(scores, m[gi]))
        if k > 0:
            outliers = frozenset(
                ids[j] for j in range(n) if float(m[:, j].max()) < 0.5
            )
        else:
            outliers = frozenset(ids)
        preds.append(
            ClipPrediction(
                clip_id=clip.clip_id,
                actor_ids=tuple(ids),
                groups=tuple(slots),
                predicted_outliers=outliers,
            )
        )
    return preds
