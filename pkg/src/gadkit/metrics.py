"""Evaluation: member-set IoU, per-class average precision over clips,
outlier set IoU, and a confusion-matrix protocol for matched groups.

A predicted group counts as a true positive for class c when its member
set reaches the IoU threshold against a not-yet-matched ground-truth group
of class c in the same clip.  Detections for class c are all predicted
groups, ranked by their score for c; average precision integrates the
precision envelope over all recall points.  Per-clip work is independent
and order-free, so clips can be scored concurrently and reduced
deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Clip, ClipPrediction, GroupAnnotation, GroupPrediction
from .errors import InvariantError, MissingPrediction

CONFUSION_IOU_THRESHOLD = 0.5


def group_iou(a: Iterable[int], b: Iterable[int]) -> float:
    """Jaccard index of two actor-id sets.  Two empty sets count as 1.0."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    num_gt: int


@dataclass(frozen=True)
class EvalReport:
    """Scores at one IoU threshold.

    per_class_ap covers exactly the classes with at least one ground-truth
    group; group_map is their arithmetic mean.  APs are fractions in [0, 1].
    """

    theta: float
    per_class_ap: dict[int, float]
    group_map: float
    outlier_miou: float
    counts: dict[int, ClassCounts]

    def to_json(self) -> dict:
        return {
            "theta": self.theta,
            "per_class_ap": {str(c): ap for c, ap in sorted(self.per_class_ap.items())},
            "group_map": self.group_map,
            "group_map_percent": 100.0 * self.group_map,
            "outlier_miou": self.outlier_miou,
            "counts": {
                str(c): {"tp": k.tp, "fp": k.fp, "num_gt": k.num_gt}
                for c, k in sorted(self.counts.items())
            },
        }

    def to_table(self) -> str:
        lines = [f"theta {self.theta:g}"]
        lines.append(f"{'class':>5}  {'ap':>8}  {'tp':>4}  {'fp':>4}  {'gt':>4}")
        for c in sorted(self.per_class_ap):
            k = self.counts[c]
            lines.append(
                f"{c:>5}  {self.per_class_ap[c]:>8.4f}  {k.tp:>4}  {k.fp:>4}  {k.num_gt:>4}"
            )
        lines.append(f"group mAP    {100.0 * self.group_map:.2f}")
        lines.append(f"outlier mIoU {100.0 * self.outlier_miou:.2f}")
        return "\n".join(lines)


def _pair_predictions(
    clips: Sequence[Clip], preds: Sequence[ClipPrediction]
) -> dict[str, ClipPrediction]:
    by_id = {p.clip_id: p for p in preds}
    for clip in clips:
        if clip.clip_id not in by_id:
            raise MissingPrediction(f"no prediction entry for clip {clip.clip_id!r}")
    return by_id


def _num_classes(clips: Sequence[Clip], preds: Sequence[ClipPrediction]) -> int:
    c_pred = 0
    for p in preds:
        if p.groups:
            c_pred = max(c_pred, p.groups[0].num_classes)
    c_gt = max((g.activity for c in clips for g in c.groups), default=0)
    if c_pred and c_gt > c_pred:
        raise InvariantError(
            f"ground truth uses activity {c_gt} but predictions score only "
            f"{c_pred} classes"
        )
    return max(c_pred, c_gt)


def average_precision(tp_flags: Sequence[bool], num_gt: int) -> float:
    """Area under the precision envelope over all recall points.

    ``tp_flags`` is the TP/FP outcome of each detection in ranked order.
    """
    if num_gt <= 0:
        raise InvariantError("average_precision needs num_gt >= 1")
    if not tp_flags:
        return 0.0
    flags = np.asarray(tp_flags, dtype=np.float64)
    ctp = np.cumsum(flags)
    ranks = np.arange(1, flags.size + 1, dtype=np.float64)
    precision = ctp / ranks
    recall = ctp / num_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = 0.0
    area = 0.0
    for i in range(flags.size):
        if recall[i] > prev_recall:
            area += (recall[i] - prev_recall) * envelope[i]
            prev_recall = recall[i]
    return float(area)


def _ranked_detections(
    clips: Sequence[Clip],
    by_id: Mapping[str, ClipPrediction],
    confidence,
) -> list[tuple[float, str, int, frozenset[int]]]:
    """All predicted groups as (confidence, clip_id, slot, member set),
    ranked by confidence with (clip_id, slot) as the deterministic
    tie-break."""
    dets = []
    for clip in clips:
        cp = by_id[clip.clip_id]
        member_sets = cp.member_sets()
        for slot, gp in enumerate(cp.groups):
            dets.append((float(confidence(gp)), cp.clip_id, slot, member_sets[slot]))
    dets.sort(key=lambda d: (-d[0], d[1], d[2]))
    return dets


def _greedy_match(
    dets: Sequence[tuple[float, str, int, frozenset[int]]],
    gt_by_clip: Mapping[str, list[tuple[int, frozenset[int]]]],
    theta: float,
) -> tuple[list[bool], dict[tuple[str, int], tuple[str, int]]]:
    """Confidence-ordered greedy matching of detections to ground-truth
    groups.  Returns per-detection TP flags and the matched pairs as
    {(clip_id, gt index): (clip_id, slot)}."""
    matched_gt: set[tuple[str, int]] = set()
    matches: dict[tuple[str, int], tuple[str, int]] = {}
    flags: list[bool] = []
    for _, clip_id, slot, members in dets:
        best_idx = -1
        best_iou = -1.0
        for gi, gmembers in gt_by_clip.get(clip_id, ()):  # gt index, member set
            if (clip_id, gi) in matched_gt:
                continue
            iou = group_iou(members, gmembers)
            if iou >= theta and iou > best_iou:
                best_iou = iou
                best_idx = gi
        if best_idx >= 0:
            matched_gt.add((clip_id, best_idx))
            matches[(clip_id, best_idx)] = (clip_id, slot)
            flags.append(True)
        else:
            flags.append(False)
    return flags, matches


def group_map(
    clips: Sequence[Clip],
    preds: Sequence[ClipPrediction],
    theta: float,
) -> EvalReport:
    """Mean average precision over activity classes at member-IoU ``theta``.

    For each class the detections are every predicted group in every clip
    with its score for that class as confidence.  Classes with no
    ground-truth group are excluded from the mean.
    """
    if not (0.0 < theta <= 1.0):
        raise InvariantError(f"theta must be in (0, 1], got {theta}")
    by_id = _pair_predictions(clips, preds)
    num_classes = _num_classes(clips, preds)
    per_class_ap: dict[int, float] = {}
    counts: dict[int, ClassCounts] = {}
    for c in range(1, num_classes + 1):
        gt_by_clip: dict[str, list[tuple[int, frozenset[int]]]] = {}
        num_gt = 0
        for clip in clips:
            rows = [
                (gi, frozenset(g.members))
                for gi, g in enumerate(clip.groups)
                if g.activity == c
            ]
            if rows:
                gt_by_clip[clip.clip_id] = rows
                num_gt += len(rows)
        if num_gt == 0:
            continue
        dets = _ranked_detections(clips, by_id, lambda gp: gp.class_scores[c])
        flags, _ = _greedy_match(dets, gt_by_clip, theta)
        tp = sum(flags)
        per_class_ap[c] = average_precision(flags, num_gt)
        counts[c] = ClassCounts(tp=tp, fp=len(flags) - tp, num_gt=num_gt)
    mean_ap = float(np.mean(list(per_class_ap.values()))) if per_class_ap else 0.0
    return EvalReport(
        theta=theta,
        per_class_ap=per_class_ap,
        group_map=mean_ap,
        outlier_miou=outlier_miou(clips, preds),
        counts=counts,
    )


def outlier_miou(clips: Sequence[Clip], preds: Sequence[ClipPrediction]) -> float:
    """Mean per-clip Jaccard index of predicted and true outlier sets."""
    by_id = _pair_predictions(clips, preds)
    per_clip = [
        group_iou(clip.outliers, by_id[clip.clip_id].predicted_outliers)
        for clip in clips
    ]
    if not per_clip:
        raise InvariantError("outlier_miou needs at least one clip")
    return float(np.mean(per_clip))


def confusion_matrix(
    clips: Sequence[Clip],
    preds: Sequence[ClipPrediction],
    *,
    theta: float = CONFUSION_IOU_THRESHOLD,
    num_classes: int | None = None,
) -> np.ndarray:
    """(C+1) x (C+1) count matrix of ground-truth class vs predicted class.

    Groups are matched class-agnostically (confidence is each slot's best
    non-zero-class score) at IoU >= theta.  A matched pair contributes at
    row = true class, column = argmax of the slot's class scores; an
    unmatched ground-truth group lands in column 0 (no activity).
    """
    by_id = _pair_predictions(clips, preds)
    c = num_classes if num_classes is not None else _num_classes(clips, preds)
    mat = np.zeros((c + 1, c + 1), dtype=np.int64)
    dets = _ranked_detections(
        clips, by_id, lambda gp: float(np.max(gp.class_scores[1:]))
    )
    gt_by_clip: dict[str, list[tuple[int, frozenset[int]]]] = {}
    for clip in clips:
        gt_by_clip[clip.clip_id] = [
            (gi, frozenset(g.members)) for gi, g in enumerate(clip.groups)
        ]
    _, matches = _greedy_match(dets, gt_by_clip, theta)
    for clip in clips:
        cp = by_id[clip.clip_id]
        for gi, g in enumerate(clip.groups):
            key = (clip.clip_id, gi)
            if key in matches:
                slot = matches[key][1]
                pred_class = int(np.argmax(cp.groups[slot].class_scores))
            else:
                pred_class = 0
            mat[g.activity, pred_class] += 1
    return mat


def evaluate(
    clips: Sequence[Clip],
    preds: Sequence[ClipPrediction],
    thetas: Sequence[float] = (1.0, 0.5),
) -> list[EvalReport]:
    return [group_map(clips, preds, theta) for theta in thetas]


# ---------------------------------------------------------------------------
# optional preprocessing: score outliers as singleton groups

def outliers_as_singletons(
    clips: Sequence[Clip], preds: Sequence[ClipPrediction]
) -> tuple[list[Clip], list[ClipPrediction]]:
    """Rewrite both sides so each outlier becomes a singleton group of a
    dedicated extra class (C+1), letting group_map score outlier recovery.
    """
    from dataclasses import replace

    c = _num_classes(clips, preds)
    outlier_class = c + 1
    new_clips = []
    for clip in clips:
        extra = tuple(
            GroupAnnotation(group_id=10_000 + a, members=frozenset({a}), activity=outlier_class)
            for a in sorted(clip.outliers)
        )
        new_clips.append(
            replace(clip, groups=clip.groups + extra, outliers=frozenset())
        )
    by_clip = {clip.clip_id: clip for clip in clips}
    new_preds = []
    for p in preds:
        clip = by_clip.get(p.clip_id)
        n = len(p.actor_ids)
        idx = {a: i for i, a in enumerate(p.actor_ids)}
        groups = []
        for g in p.groups:
            scores = np.zeros(outlier_class + 1)
            scores[: c + 1] = g.class_scores
            groups.append(GroupPrediction(scores, g.member_scores))
        for a in sorted(p.predicted_outliers):
            scores = np.zeros(outlier_class + 1)
            scores[outlier_class] = 1.0
            members = np.zeros(n)
            members[idx[a]] = 1.0
            groups.append(GroupPrediction(scores, members))
        new_preds.append(
            ClipPrediction(
                clip_id=p.clip_id,
                actor_ids=p.actor_ids,
                groups=tuple(groups),
                predicted_outliers=frozenset(),
            )
        )
    return new_clips, new_preds
