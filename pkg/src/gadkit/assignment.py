"""Exact bipartite assignment and the matching costs built on it.

The solver is the O(n^3) augmenting-path variant with row/column
potentials.  Cost matrices are plain 2-D float arrays with rows <= cols;
rectangular inputs are padded internally with zero-cost dummy rows.  Among
equally cheap assignments the lexicographically smallest assignment vector
is returned, found by restricting to tight edges of the optimal potentials
and re-matching row by row, so results are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import BBox, GroupAnnotation, GroupPrediction, Tracklet
from .errors import DimError, FrameMismatch, InvariantError, ShapeError

L1_WEIGHT = 5.0
GIOU_WEIGHT = 2.0
IDENTITY_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class AssignmentResult:
    assignment: tuple[int, ...]   # row index -> column index
    total_cost: float


def _solve_square(cost: list[list[float]]) -> tuple[list[int], list[float], list[float]]:
    """Min-cost perfect matching on a square matrix via shortest augmenting
    paths over reduced costs.  Returns (col_of_row, u, v) with feasible
    potentials: cost[i][j] - u[i] - v[j] >= 0, equality on matched edges."""
    n = len(cost)
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)          # p[j]: 1-based row matched to column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            row = cost[i0 - 1]
            ui = u[i0]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - ui - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = [0] * n
    for j in range(1, n + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _lexicographic_refine(
    cost: list[list[float]],
    col_of_row: list[int],
    u: list[float],
    v: list[float],
    real_rows: int,
) -> list[int]:
    """Rewire the matching toward the lexicographically smallest optimal
    assignment vector, moving only along tight edges (zero reduced cost)."""
    n = len(cost)
    scale = 1.0 + max(abs(cost[i][j]) for i in range(n) for j in range(n))
    tol = 1e-9 * scale
    tight = [
        [cost[i][j] - u[i] - v[j] <= tol for j in range(n)] for i in range(n)
    ]
    row_of_col = [-1] * n
    for i, j in enumerate(col_of_row):
        row_of_col[j] = i
    fixed: set[int] = set()

    def augment(r: int, seen: list[bool], immovable: set[int]) -> bool:
        for j in range(n):
            if seen[j] or not tight[r][j]:
                continue
            seen[j] = True
            owner = row_of_col[j]
            if owner == -1:
                col_of_row[r] = j
                row_of_col[j] = r
                return True
            if owner in immovable:
                continue
            if augment(owner, seen, immovable):
                col_of_row[r] = j
                row_of_col[j] = r
                return True
        return False

    for i in range(real_rows):
        for j in range(n):
            if j >= col_of_row[i]:
                break
            if not tight[i][j]:
                continue
            displaced = row_of_col[j]
            if displaced in fixed:
                continue
            old = col_of_row[i]
            col_of_row[i] = j
            row_of_col[j] = i
            row_of_col[old] = -1
            col_of_row[displaced] = -1
            immovable = fixed | {i}
            if augment(displaced, [False] * n, immovable):
                break
            # roll back
            col_of_row[displaced] = j
            row_of_col[j] = displaced
            col_of_row[i] = old
            row_of_col[old] = i
        fixed.add(i)
    return col_of_row


def hungarian(cost_matrix) -> AssignmentResult:
    """Minimum-cost injective assignment of rows to columns.

    Requires rows <= cols and finite entries.  Ties between equally cheap
    assignments are broken toward the lexicographically smallest assignment
    vector.
    """
    c = np.asarray(cost_matrix, dtype=np.float64)
    if c.ndim != 2:
        raise ShapeError(f"cost matrix must be 2-D, got shape {c.shape}")
    rows, cols = c.shape
    if rows == 0:
        return AssignmentResult(assignment=(), total_cost=0.0)
    if rows > cols:
        raise ShapeError(f"cost matrix needs rows <= cols, got {rows}x{cols}")
    if not np.all(np.isfinite(c)):
        raise InvariantError("cost matrix entries must be finite")
    padded = np.zeros((cols, cols), dtype=np.float64)
    padded[:rows] = c
    plist = padded.tolist()
    col_of_row, u, v = _solve_square(plist)
    col_of_row = _lexicographic_refine(plist, col_of_row, u, v, rows)
    assignment = tuple(col_of_row[:rows])
    total = float(np.sum(c[np.arange(rows), list(assignment)]))
    return AssignmentResult(assignment=assignment, total_cost=total)


# ---------------------------------------------------------------------------
# group slot matching cost

def group_matching_cost(
    gt_groups: Sequence[GroupAnnotation | None],
    actor_ids: Sequence[int],
    preds: Sequence[GroupPrediction],
) -> np.ndarray:
    """K x K cost between padded ground-truth groups and predicted slots.

    ``gt_groups`` shorter than the number of slots is padded with None
    (no-activity) rows, which cost 0 against every slot.  A real group
    costs  -class_score[y] + ||m - member_scores||_2  where m is the 0/1
    membership vector over the clip's actors.
    """
    k = len(preds)
    if len(gt_groups) > k:
        raise ShapeError(
            f"{len(gt_groups)} ground-truth groups exceed {k} prediction slots"
        )
    n = len(actor_ids)
    index_of = {a: i for i, a in enumerate(actor_ids)}
    padded: list[GroupAnnotation | None] = list(gt_groups) + [None] * (k - len(gt_groups))
    cost = np.zeros((k, k), dtype=np.float64)
    for j, p in enumerate(preds):
        if p.member_scores.size != n:
            raise DimError(
                f"slot {j} scores {p.member_scores.size} actors, clip has {n}"
            )
    for i, g in enumerate(padded):
        if g is None:
            continue
        m = np.zeros(n, dtype=np.float64)
        for a in g.members:
            if a not in index_of:
                raise InvariantError(f"group {g.group_id} member {a} not in actor list")
            m[index_of[a]] = 1.0
        for j, p in enumerate(preds):
            if g.activity >= p.class_scores.size:
                raise DimError(
                    f"activity {g.activity} outside the {p.class_scores.size} "
                    f"scored classes of slot {j}"
                )
            cost[i, j] = -float(p.class_scores[g.activity]) + float(
                np.linalg.norm(m - p.member_scores)
            )
    return cost


# ---------------------------------------------------------------------------
# box geometry and tracklet costs

def box_iou(a: BBox, b: BBox) -> float:
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU in [-1, 1]: IoU minus the hull area not covered by
    the union, as a fraction of the hull."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    hull = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    return inter / union - (hull - union) / hull


def _normalized(box: BBox, frame_size: tuple[float, float]) -> BBox:
    w, h = frame_size
    return BBox(box.x1 / w, box.y1 / h, box.x2 / w, box.y2 / h)


def tracklet_matching_cost(
    gt: Sequence[Tracklet],
    pred: Sequence[Tracklet],
    frames: Sequence[int],
    frame_size: tuple[float, float],
    *,
    l1_weight: float = L1_WEIGHT,
    giou_weight: float = GIOU_WEIGHT,
) -> np.ndarray:
    """Pairing cost between ground-truth and detected tracklets.

    Per frame: l1_weight * L1 distance of corner coordinates (normalized to
    the unit square) plus giou_weight * (1 - GIoU), summed over the sampled
    frames.  All tracklets must have a box on every requested frame.
    """
    cost = np.zeros((len(gt), len(pred)), dtype=np.float64)
    for i, tg in enumerate(gt):
        for j, tp in enumerate(pred):
            acc = 0.0
            for f in frames:
                bg, bp = tg.box_at(f), tp.box_at(f)
                if bg is None:
                    raise FrameMismatch(f"gt actor {tg.actor_id} has no box on frame {f}")
                if bp is None:
                    raise FrameMismatch(f"pred actor {tp.actor_id} has no box on frame {f}")
                ng, np_ = _normalized(bg, frame_size), _normalized(bp, frame_size)
                l1 = (
                    abs(ng.x1 - np_.x1)
                    + abs(ng.y1 - np_.y1)
                    + abs(ng.x2 - np_.x2)
                    + abs(ng.y2 - np_.y2)
                )
                acc += l1_weight * l1 + giou_weight * (1.0 - giou(ng, np_))
            cost[i, j] = acc
    return cost


def identity_match(
    gt: Sequence[Tracklet],
    pred: Sequence[Tracklet],
    frames: Sequence[int],
    *,
    iou_threshold: float = IDENTITY_IOU_THRESHOLD,
) -> dict[int, int]:
    """Greedy identity transfer from detected to ground-truth tracklets.

    Pairs are taken in descending mean-IoU order (over the sampled frames);
    each side is used at most once and pairs below the threshold stay
    unmatched.  Returns {pred actor_id: gt actor_id}.
    """
    scored = []
    for i, tg in enumerate(gt):
        for j, tp in enumerate(pred):
            total = 0.0
            for f in frames:
                bg, bp = tg.box_at(f), tp.box_at(f)
                if bg is None:
                    raise FrameMismatch(f"gt actor {tg.actor_id} has no box on frame {f}")
                if bp is None:
                    raise FrameMismatch(f"pred actor {tp.actor_id} has no box on frame {f}")
                total += box_iou(bg, bp)
            mean_iou = total / len(frames) if frames else 0.0
            scored.append((-mean_iou, j, i))
    scored.sort()
    used_gt: set[int] = set()
    used_pred: set[int] = set()
    out: dict[int, int] = {}
    for neg_iou, j, i in scored:
        if -neg_iou < iou_threshold:
            break
        if i in used_gt or j in used_pred:
            continue
        used_gt.add(i)
        used_pred.add(j)
        out[pred[j].actor_id] = gt[i].actor_id
    return out
