"""Descriptive statistics over annotated clips.

Geometry is exact: convex hulls come from the monotone chain with shoelace
areas, and box-union areas from a coordinate-compression sweep, so density
fixtures hold to float precision.  The key frame for spatial statistics is
frame 0 by convention (earliest annotated box as fallback).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import BBox, Clip
from .errors import DegenerateHull, InvariantError, NoCounterpart

KEY_FRAME = 0


def aspect_ratio(box: BBox) -> float:
    """Height over width."""
    return box.height / box.width


def convex_hull(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Convex hull in counter-clockwise order (monotone chain).

    Duplicates and interior points are dropped.  Raises DegenerateHull when
    fewer than three distinct non-collinear points remain.
    """
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) < 3:
        raise DegenerateHull(f"need >= 3 distinct points, got {len(pts)}")

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateHull("all points are collinear")
    return hull


def polygon_area(poly: Sequence[tuple[float, float]]) -> float:
    """Shoelace area of a simple polygon given in counter-clockwise order."""
    area = 0.0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return area / 2.0


def box_union_area(boxes: Sequence[BBox]) -> float:
    """Exact area of the union of axis-aligned boxes (grid sweep)."""
    if not boxes:
        return 0.0
    xs = sorted({b.x1 for b in boxes} | {b.x2 for b in boxes})
    ys = sorted({b.y1 for b in boxes} | {b.y2 for b in boxes})
    area = 0.0
    for i in range(len(xs) - 1):
        x_lo, x_hi = xs[i], xs[i + 1]
        if x_hi <= x_lo:
            continue
        x_mid = (x_lo + x_hi) / 2.0
        covering = [b for b in boxes if b.x1 <= x_mid <= b.x2]
        for j in range(len(ys) - 1):
            y_lo, y_hi = ys[j], ys[j + 1]
            if y_hi <= y_lo:
                continue
            y_mid = (y_lo + y_hi) / 2.0
            if any(b.y1 <= y_mid <= b.y2 for b in covering):
                area += (x_hi - x_lo) * (y_hi - y_lo)
    return area


def population_density(clip: Clip, frame_index: int = KEY_FRAME) -> float:
    """Union area of group members' boxes over their convex hull area.

    Only actors belonging to a group participate.  Actors without a box on
    the requested frame are skipped.
    """
    participants = {a for g in clip.groups for a in g.members}
    boxes = [
        t.box_at(frame_index)
        for t in clip.tracklets
        if t.actor_id in participants and t.box_at(frame_index) is not None
    ]
    if not boxes:
        raise InvariantError(
            f"clip {clip.clip_id!r}: no group member has a box on frame {frame_index}"
        )
    corners = []
    for b in boxes:
        corners.extend([(b.x1, b.y1), (b.x2, b.y1), (b.x2, b.y2), (b.x1, b.y2)])
    hull_area = polygon_area(convex_hull(corners))
    return box_union_area(boxes) / hull_area


def inter_group_distance(clips: Sequence[Clip], frame_index: int = KEY_FRAME) -> float:
    """Mean over groups of the distance to the nearest non-member.

    Per group: min over members i and non-members j of the center distance
    ||c_i - c_j||, divided by sqrt of the average box area of the pair, at
    the key frame.  Raises NoCounterpart when a group's clip holds no other
    actor.
    """
    ratios: list[float] = []
    for clip in clips:
        boxes = {t.actor_id: t.key_box(frame_index) for t in clip.tracklets}
        for g in clip.groups:
            others = [a for a in boxes if a not in g.members]
            if not others:
                raise NoCounterpart(
                    f"clip {clip.clip_id!r}: group {g.group_id} covers every actor, "
                    f"no outside actor to measure against"
                )
            best = math.inf
            for i in sorted(g.members):
                ci = boxes[i].center
                ai = boxes[i].area
                for j in sorted(others):
                    cj = boxes[j].center
                    dist = math.hypot(ci[0] - cj[0], ci[1] - cj[1])
                    norm = math.sqrt((ai + boxes[j].area) / 2.0)
                    best = min(best, dist / norm)
            ratios.append(best)
    if not ratios:
        raise InvariantError("inter_group_distance needs at least one group")
    return float(np.mean(ratios))


@dataclass(frozen=True)
class StatsSummary:
    num_clips: int
    group_size_hist: dict[int, int]
    actors_per_clip_hist: dict[int, int]
    aspect_ratio_hist: list[tuple[float, float, int]]   # (bin lo, bin hi, count)
    population_density: float | None
    inter_group_distance: float | None

    def to_json(self) -> dict:
        return {
            "num_clips": self.num_clips,
            "group_size_hist": {str(k): v for k, v in sorted(self.group_size_hist.items())},
            "actors_per_clip_hist": {
                str(k): v for k, v in sorted(self.actors_per_clip_hist.items())
            },
            "aspect_ratio_hist": [
                {"lo": lo, "hi": hi, "count": n} for lo, hi, n in self.aspect_ratio_hist
            ],
            "population_density": self.population_density,
            "inter_group_distance": self.inter_group_distance,
        }

    def write_csvs(self, directory: str) -> list[str]:
        """One CSV per histogram, ready for plotting.  Returns file paths."""
        import os

        os.makedirs(directory, exist_ok=True)
        written = []
        rows_by_name = {
            "group_size_hist": [("size", "count")]
            + [(k, v) for k, v in sorted(self.group_size_hist.items())],
            "actors_per_clip_hist": [("actors", "count")]
            + [(k, v) for k, v in sorted(self.actors_per_clip_hist.items())],
            "aspect_ratio_hist": [("bin_lo", "bin_hi", "count")]
            + [(lo, hi, n) for lo, hi, n in self.aspect_ratio_hist],
        }
        for name, rows in rows_by_name.items():
            path = os.path.join(directory, f"{name}.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                csv.writer(fh).writerows(rows)
            written.append(path)
        return written


def compute_stats(
    clips: Sequence[Clip],
    *,
    frame_index: int = KEY_FRAME,
    ratio_bin_width: float = 0.25,
    ratio_max: float = 5.0,
) -> StatsSummary:
    """Aggregate the dataset-level summary.

    Density is averaged over clips that have groups; the inter-group
    distance is None when the dataset has no group (and still raises
    NoCounterpart when a group has no outside actor, as that is a data
    problem rather than an empty statistic).
    """
    group_size_hist: dict[int, int] = {}
    actors_hist: dict[int, int] = {}
    nbins = int(round(ratio_max / ratio_bin_width))
    ratio_counts = [0] * (nbins + 1)
    densities: list[float] = []
    any_groups = False
    for clip in clips:
        actors_hist[len(clip.tracklets)] = actors_hist.get(len(clip.tracklets), 0) + 1
        for g in clip.groups:
            any_groups = True
            size = len(g.members)
            group_size_hist[size] = group_size_hist.get(size, 0) + 1
        for t in clip.tracklets:
            for _, b in t.boxes:
                r = aspect_ratio(b)
                idx = min(int(r / ratio_bin_width), nbins)
                ratio_counts[idx] += 1
        if clip.groups:
            densities.append(population_density(clip, frame_index))
    ratio_hist = [
        (i * ratio_bin_width, (i + 1) * ratio_bin_width, ratio_counts[i])
        for i in range(nbins)
    ] + [(ratio_max, math.inf, ratio_counts[nbins])]
    return StatsSummary(
        num_clips=len(clips),
        group_size_hist=group_size_hist,
        actors_per_clip_hist=actors_hist,
        aspect_ratio_hist=ratio_hist,
        population_density=float(np.mean(densities)) if densities else None,
        inter_group_distance=inter_group_distance(clips, frame_index) if any_groups else None,
    )
