"""Canonical data model: clips, tracklets, group annotations, predictions.

One JSON file holds many clips.  Class label 0 is reserved everywhere for
the no-activity class, so real activity classes are 1..C.  Outliers are
actors that belong to no group; every actor is in exactly one group or in
the outlier set.

Dataset file schema::

    {"clips": [{"clip_id": str, "width": int, "height": int,
                "num_frames": int,
                "actors": [{"actor_id": int,
                            "boxes": [[frame, x1, y1, x2, y2], ...]}],
                "groups": [{"group_id": int, "members": [int],
                            "activity": int}],
                "outliers": [int]}]}

Prediction files mirror the clip list with per-group score vectors::

    {"clips": [{"clip_id": str,
                "groups": [{"class_scores": [float], "member_scores": [float]}],
                "predicted_outliers": [int]}]}

Feature files carry per-frame actor and scene feature matrices::

    {"clips": [{"clip_id": str,
                "frames": [{"actor_feats": [[float]], "scene_feats": [[float]]}]}]}

`member_scores` is aligned to the order of the clip's "actors" array.
Memberships are scores, not sets; member sets are derived with the same
rule everywhere: an actor belongs to the group holding its highest score
when that score clears the threshold, and never to a group when the actor
is listed as a predicted outlier.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvariantError, ParseError, SchemaError
from .rng import SplitMix64

MEMBER_SCORE_THRESHOLD = 0.5


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, corner form, x2 > x1 and y2 > y1."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(v) for v in vals):
            raise InvariantError(f"box coordinates must be finite, got {vals}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise InvariantError(f"box must have positive extent, got {vals}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)


@dataclass(frozen=True)
class Tracklet:
    """One actor's boxes over a clip, keyed by strictly increasing frames."""

    actor_id: int
    boxes: tuple[tuple[int, BBox], ...]

    def __post_init__(self):
        if not self.boxes:
            raise InvariantError(f"actor {self.actor_id} has an empty tracklet")
        frames = [f for f, _ in self.boxes]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise InvariantError(
                f"actor {self.actor_id} frames must be strictly increasing, got {frames}"
            )

    @property
    def frames(self) -> tuple[int, ...]:
        return tuple(f for f, _ in self.boxes)

    def box_at(self, frame: int) -> BBox | None:
        for f, b in self.boxes:
            if f == frame:
                return b
        return None

    def first_box(self) -> BBox:
        return self.boxes[0][1]

    def key_box(self, frame: int = 0) -> BBox:
        """Box at the key frame, falling back to the earliest annotated box."""
        return self.box_at(frame) or self.first_box()


@dataclass(frozen=True)
class GroupAnnotation:
    group_id: int
    members: frozenset[int]
    activity: int

    def __post_init__(self):
        if len(self.members) < 1:
            raise InvariantError(f"group {self.group_id} has no members")
        if self.activity < 1:
            raise InvariantError(
                f"group {self.group_id} activity must be >= 1 "
                f"(0 is the reserved no-activity class), got {self.activity}"
            )


@dataclass(frozen=True)
class Clip:
    clip_id: str
    width: int
    height: int
    num_frames: int
    tracklets: tuple[Tracklet, ...]
    groups: tuple[GroupAnnotation, ...]
    outliers: frozenset[int]

    @property
    def actor_ids(self) -> tuple[int, ...]:
        return tuple(t.actor_id for t in self.tracklets)

    @property
    def frame_size(self) -> tuple[int, int]:
        return (self.width, self.height)

    def tracklet_of(self, actor_id: int) -> Tracklet:
        for t in self.tracklets:
            if t.actor_id == actor_id:
                return t
        raise KeyError(f"clip {self.clip_id} has no actor {actor_id}")

    def group_of(self, actor_id: int) -> GroupAnnotation | None:
        for g in self.groups:
            if actor_id in g.members:
                return g
        return None


def validate_clip(clip: Clip, *, allow_singleton_groups: bool = False, path: str = "") -> None:
    """Check the partition invariants of one clip.

    Raises InvariantError naming the offending actor or group.  With
    ``allow_singleton_groups`` a one-member group is downgraded to a warning.
    """
    where = path or f"clip {clip.clip_id!r}"
    ids = [t.actor_id for t in clip.tracklets]
    if len(set(ids)) != len(ids):
        dup = next(a for a in ids if ids.count(a) > 1)
        raise InvariantError(f"{where}: duplicate actor_id {dup}")
    if clip.width <= 0 or clip.height <= 0:
        raise InvariantError(f"{where}: frame size must be positive")
    if clip.num_frames < 1:
        raise InvariantError(f"{where}: num_frames must be >= 1")
    id_set = set(ids)
    for t in clip.tracklets:
        for f, _ in t.boxes:
            if not (0 <= f < clip.num_frames):
                raise InvariantError(
                    f"{where}: actor {t.actor_id} has a box on frame {f}, "
                    f"outside [0, {clip.num_frames})"
                )
    seen: dict[int, int] = {}
    for g in clip.groups:
        if len(g.members) < 2:
            msg = f"{where}: group {g.group_id} is a singleton"
            if allow_singleton_groups:
                warnings.warn(msg, UserWarning)
            else:
                raise InvariantError(msg)
        for a in g.members:
            if a not in id_set:
                raise InvariantError(
                    f"{where}: group {g.group_id} references unknown actor {a}"
                )
            if a in seen:
                raise InvariantError(
                    f"{where}: actor {a} appears in groups {seen[a]} and {g.group_id}"
                )
            seen[a] = g.group_id
    for a in clip.outliers:
        if a not in id_set:
            raise InvariantError(f"{where}: outlier list references unknown actor {a}")
        if a in seen:
            raise InvariantError(
                f"{where}: actor {a} is both an outlier and a member of group {seen[a]}"
            )
    for a in ids:
        if a not in seen and a not in clip.outliers:
            raise InvariantError(
                f"{where}: actor {a} is neither in a group nor in outliers"
            )


# ---------------------------------------------------------------------------
# dataset JSON

def _require(obj: Mapping, key: str, kind, path: str):
    if not isinstance(obj, Mapping) or key not in obj:
        raise SchemaError(f"{path}: missing field {key!r}")
    val = obj[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise SchemaError(f"{path}.{key}: expected number, got {type(val).__name__}")
        return float(val)
    if kind is int:
        if not isinstance(val, int) or isinstance(val, bool):
            raise SchemaError(f"{path}.{key}: expected int, got {type(val).__name__}")
        return val
    if not isinstance(val, kind):
        raise SchemaError(
            f"{path}.{key}: expected {kind.__name__}, got {type(val).__name__}"
        )
    return val


def _load_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc


def _clip_from_json(obj, path: str, allow_singleton_groups: bool) -> Clip:
    clip_id = _require(obj, "clip_id", str, path)
    width = _require(obj, "width", int, path)
    height = _require(obj, "height", int, path)
    num_frames = _require(obj, "num_frames", int, path)
    actors_raw = _require(obj, "actors", list, path)
    groups_raw = _require(obj, "groups", list, path)
    outliers_raw = _require(obj, "outliers", list, path)

    tracklets = []
    for j, a in enumerate(actors_raw):
        apath = f"{path}.actors[{j}]"
        actor_id = _require(a, "actor_id", int, apath)
        boxes_raw = _require(a, "boxes", list, apath)
        boxes = []
        for k, row in enumerate(boxes_raw):
            bpath = f"{apath}.boxes[{k}]"
            if not isinstance(row, list) or len(row) != 5:
                raise SchemaError(f"{bpath}: expected [frame, x1, y1, x2, y2]")
            frame = row[0]
            if not isinstance(frame, int) or isinstance(frame, bool):
                raise SchemaError(f"{bpath}: frame index must be int")
            try:
                box = BBox(*(float(v) for v in row[1:]))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{bpath}: bad coordinates ({exc})") from exc
            except InvariantError as exc:
                raise InvariantError(f"{bpath}: {exc}") from exc
            boxes.append((frame, box))
        try:
            tracklets.append(Tracklet(actor_id, tuple(boxes)))
        except InvariantError as exc:
            raise InvariantError(f"{apath}: {exc}") from exc

    groups = []
    for j, g in enumerate(groups_raw):
        gpath = f"{path}.groups[{j}]"
        group_id = _require(g, "group_id", int, gpath)
        members = _require(g, "members", list, gpath)
        activity = _require(g, "activity", int, gpath)
        if not all(isinstance(m, int) and not isinstance(m, bool) for m in members):
            raise SchemaError(f"{gpath}.members: expected a list of ints")
        try:
            groups.append(GroupAnnotation(group_id, frozenset(members), activity))
        except InvariantError as exc:
            raise InvariantError(f"{gpath}: {exc}") from exc

    if not all(isinstance(o, int) and not isinstance(o, bool) for o in outliers_raw):
        raise SchemaError(f"{path}.outliers: expected a list of ints")

    clip = Clip(
        clip_id=clip_id,
        width=width,
        height=height,
        num_frames=num_frames,
        tracklets=tuple(tracklets),
        groups=tuple(groups),
        outliers=frozenset(outliers_raw),
    )
    validate_clip(clip, allow_singleton_groups=allow_singleton_groups, path=path)
    return clip


def dataset_from_json(obj, *, allow_singleton_groups: bool = False) -> list[Clip]:
    clips_raw = _require(obj, "clips", list, "$")
    clips = [
        _clip_from_json(c, f"$.clips[{i}]", allow_singleton_groups)
        for i, c in enumerate(clips_raw)
    ]
    ids = [c.clip_id for c in clips]
    if len(set(ids)) != len(ids):
        dup = next(c for c in ids if ids.count(c) > 1)
        raise InvariantError(f"$.clips: duplicate clip_id {dup!r}")
    return clips


def load_dataset(path: str, *, allow_singleton_groups: bool = False) -> list[Clip]:
    return dataset_from_json(_load_json(path), allow_singleton_groups=allow_singleton_groups)


def dataset_to_json(clips: Iterable[Clip]) -> dict:
    return {
        "clips": [
            {
                "clip_id": c.clip_id,
                "width": c.width,
                "height": c.height,
                "num_frames": c.num_frames,
                "actors": [
                    {
                        "actor_id": t.actor_id,
                        "boxes": [[f, b.x1, b.y1, b.x2, b.y2] for f, b in t.boxes],
                    }
                    for t in c.tracklets
                ],
                "groups": [
                    {
                        "group_id": g.group_id,
                        "members": sorted(g.members),
                        "activity": g.activity,
                    }
                    for g in c.groups
                ],
                "outliers": sorted(c.outliers),
            }
            for c in clips
        ]
    }


def save_dataset(clips: Iterable[Clip], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset_to_json(clips), fh)


# ---------------------------------------------------------------------------
# predictions

def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GroupPrediction:
    """Score vectors for one predicted group slot.

    class_scores has length C+1 (index 0 is no-activity), is nonnegative and
    sums to 1.  member_scores has one entry in [0, 1] per actor of the clip,
    in the clip's actor order.
    """

    class_scores: np.ndarray
    member_scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "class_scores", _frozen(self.class_scores))
        object.__setattr__(self, "member_scores", _frozen(self.member_scores))
        cs, ms = self.class_scores, self.member_scores
        if cs.ndim != 1 or cs.size < 2:
            raise InvariantError("class_scores must be a vector over >= 2 classes")
        if np.any(cs < 0) or abs(float(cs.sum()) - 1.0) > 1e-6:
            raise InvariantError("class_scores must be nonnegative and sum to 1")
        if ms.ndim != 1:
            raise InvariantError("member_scores must be a vector")
        if np.any(ms < 0) or np.any(ms > 1):
            raise InvariantError("member_scores must lie in [0, 1]")

    @property
    def num_classes(self) -> int:
        """Number of real activity classes C (score vector has C+1 entries)."""
        return self.class_scores.size - 1


def derive_member_sets(
    member_scores: np.ndarray,
    actor_ids: Sequence[int],
    predicted_outliers: frozenset[int],
    threshold: float = MEMBER_SCORE_THRESHOLD,
) -> tuple[frozenset[int], ...]:
    """Derive disjoint member sets from a (slots x actors) score matrix.

    An actor joins the slot holding its highest score (lowest slot index on
    ties) when that score clears the threshold and the actor is not a
    predicted outlier.
    """
    scores = np.asarray(member_scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != len(actor_ids):
        raise InvariantError(
            f"member score matrix shape {scores.shape} does not cover "
            f"{len(actor_ids)} actors"
        )
    members: list[set[int]] = [set() for _ in range(scores.shape[0])]
    for j, actor in enumerate(actor_ids):
        if actor in predicted_outliers or scores.shape[0] == 0:
            continue
        best = int(np.argmax(scores[:, j]))
        if scores[best, j] >= threshold:
            members[best].add(actor)
    return tuple(frozenset(m) for m in members)


@dataclass(frozen=True)
class ClipPrediction:
    clip_id: str
    actor_ids: tuple[int, ...]
    groups: tuple[GroupPrediction, ...]
    predicted_outliers: frozenset[int]

    def __post_init__(self):
        n = len(self.actor_ids)
        for i, g in enumerate(self.groups):
            if g.member_scores.size != n:
                raise InvariantError(
                    f"clip {self.clip_id!r}: groups[{i}] scores {g.member_scores.size} "
                    f"actors, clip has {n}"
                )
        sizes = {g.class_scores.size for g in self.groups}
        if len(sizes) > 1:
            raise InvariantError(
                f"clip {self.clip_id!r}: groups disagree on class count"
            )
        unknown = self.predicted_outliers - set(self.actor_ids)
        if unknown:
            raise InvariantError(
                f"clip {self.clip_id!r}: predicted outlier {min(unknown)} is not "
                f"an actor of the clip"
            )

    def member_sets(self, threshold: float = MEMBER_SCORE_THRESHOLD) -> tuple[frozenset[int], ...]:
        if not self.groups:
            return ()
        matrix = np.stack([g.member_scores for g in self.groups])
        return derive_member_sets(matrix, self.actor_ids, self.predicted_outliers, threshold)


def predictions_from_json(obj, clips: Sequence[Clip]) -> list[ClipPrediction]:
    by_id = {c.clip_id: c for c in clips}
    clips_raw = _require(obj, "clips", list, "$")
    preds = []
    for i, entry in enumerate(clips_raw):
        path = f"$.clips[{i}]"
        clip_id = _require(entry, "clip_id", str, path)
        if clip_id not in by_id:
            raise SchemaError(f"{path}: prediction for unknown clip {clip_id!r}")
        clip = by_id[clip_id]
        groups_raw = _require(entry, "groups", list, path)
        outliers_raw = _require(entry, "predicted_outliers", list, path)
        if not all(isinstance(o, int) and not isinstance(o, bool) for o in outliers_raw):
            raise SchemaError(f"{path}.predicted_outliers: expected a list of ints")
        groups = []
        for j, g in enumerate(groups_raw):
            gpath = f"{path}.groups[{j}]"
            cs = _require(g, "class_scores", list, gpath)
            ms = _require(g, "member_scores", list, gpath)
            try:
                groups.append(GroupPrediction(np.asarray(cs), np.asarray(ms)))
            except InvariantError as exc:
                raise InvariantError(f"{gpath}: {exc}") from exc
        try:
            preds.append(
                ClipPrediction(
                    clip_id=clip_id,
                    actor_ids=clip.actor_ids,
                    groups=tuple(groups),
                    predicted_outliers=frozenset(outliers_raw),
                )
            )
        except InvariantError as exc:
            raise InvariantError(f"{path}: {exc}") from exc
    return preds


def load_predictions(path: str, clips: Sequence[Clip]) -> list[ClipPrediction]:
    return predictions_from_json(_load_json(path), clips)


def predictions_to_json(preds: Iterable[ClipPrediction]) -> dict:
    return {
        "clips": [
            {
                "clip_id": p.clip_id,
                "groups": [
                    {
                        "class_scores": [float(v) for v in g.class_scores],
                        "member_scores": [float(v) for v in g.member_scores],
                    }
                    for g in p.groups
                ],
                "predicted_outliers": sorted(p.predicted_outliers),
            }
            for p in preds
        ]
    }


def save_predictions(preds: Iterable[ClipPrediction], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(predictions_to_json(preds), fh)


# ---------------------------------------------------------------------------
# features

@dataclass(frozen=True)
class ClipFeatures:
    """Per-frame actor and scene feature matrices for one clip."""

    clip_id: str
    actor_feats: tuple[np.ndarray, ...]   # each (N, D)
    scene_feats: tuple[np.ndarray, ...]   # each (S, D)

    def __post_init__(self):
        object.__setattr__(self, "actor_feats", tuple(_frozen(a) for a in self.actor_feats))
        object.__setattr__(self, "scene_feats", tuple(_frozen(a) for a in self.scene_feats))
        if len(self.actor_feats) != len(self.scene_feats) or not self.actor_feats:
            raise InvariantError(
                f"clip {self.clip_id!r}: actor and scene feature frame counts differ"
            )
        shapes = {a.shape for a in self.actor_feats}
        if len(shapes) != 1 or self.actor_feats[0].ndim != 2:
            raise InvariantError(f"clip {self.clip_id!r}: inconsistent actor feature shapes")
        sshapes = {s.shape for s in self.scene_feats}
        if len(sshapes) != 1 or self.scene_feats[0].ndim != 2:
            raise InvariantError(f"clip {self.clip_id!r}: inconsistent scene feature shapes")
        if self.actor_feats[0].shape[1] != self.scene_feats[0].shape[1]:
            raise InvariantError(
                f"clip {self.clip_id!r}: actor and scene feature widths differ"
            )
        for a in self.actor_feats + self.scene_feats:
            if not np.all(np.isfinite(a)):
                raise InvariantError(f"clip {self.clip_id!r}: non-finite feature value")

    @property
    def num_frames(self) -> int:
        return len(self.actor_feats)

    @property
    def dim(self) -> int:
        return self.actor_feats[0].shape[1]


def features_from_json(obj) -> dict[str, ClipFeatures]:
    clips_raw = _require(obj, "clips", list, "$")
    out: dict[str, ClipFeatures] = {}
    for i, entry in enumerate(clips_raw):
        path = f"$.clips[{i}]"
        clip_id = _require(entry, "clip_id", str, path)
        frames_raw = _require(entry, "frames", list, path)
        actor_frames, scene_frames = [], []
        for j, fr in enumerate(frames_raw):
            fpath = f"{path}.frames[{j}]"
            af = _require(fr, "actor_feats", list, fpath)
            sf = _require(fr, "scene_feats", list, fpath)
            try:
                actor_frames.append(np.asarray(af, dtype=np.float64))
                scene_frames.append(np.asarray(sf, dtype=np.float64))
            except ValueError as exc:
                raise SchemaError(f"{fpath}: ragged feature matrix ({exc})") from exc
        try:
            out[clip_id] = ClipFeatures(clip_id, tuple(actor_frames), tuple(scene_frames))
        except InvariantError as exc:
            raise InvariantError(f"{path}: {exc}") from exc
    return out


def load_features(path: str) -> dict[str, ClipFeatures]:
    return features_from_json(_load_json(path))


def features_to_json(feats: Mapping[str, ClipFeatures]) -> dict:
    return {
        "clips": [
            {
                "clip_id": f.clip_id,
                "frames": [
                    {
                        "actor_feats": f.actor_feats[t].tolist(),
                        "scene_feats": f.scene_feats[t].tolist(),
                    }
                    for t in range(f.num_frames)
                ],
            }
            for f in feats.values()
        ]
    }


def save_features(feats: Mapping[str, ClipFeatures], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(features_to_json(feats), fh)


# ---------------------------------------------------------------------------
# frame sampling and geometry helpers

def sample_frames(
    clip: Clip,
    count: int,
    *,
    mode: str = "midpoint",
    rng: SplitMix64 | None = None,
) -> list[int]:
    """Pick ``count`` frame indices, one per equal temporal segment.

    "midpoint" takes each segment's middle frame and is a pure function of
    (num_frames, count).  "uniform" draws one frame per segment from the
    given RNG.  When count exceeds num_frames, indices repeat.
    """
    if count < 1:
        raise ValueError("frame count must be >= 1")
    f = clip.num_frames
    if mode == "midpoint":
        return [min(((2 * i + 1) * f) // (2 * count), f - 1) for i in range(count)]
    if mode == "uniform":
        if rng is None:
            raise ValueError("uniform sampling requires an explicit rng")
        out = []
        for i in range(count):
            u = rng.uniform()
            out.append(min(int((i + u) * f / count), f - 1))
        return out
    raise ValueError(f"unknown sampling mode {mode!r}")


def box_center_normalized(box: BBox, frame_size: tuple[int, int]) -> tuple[float, float]:
    """Box center in unit-square coordinates."""
    w, h = frame_size
    cx, cy = box.center
    return (cx / w, cy / h)
