"""Spectral-clustering group localization baseline.

Clusters actors on an appearance (cosine) or position (rbf) affinity graph
via the normalized Laplacian, then converts the partition into the shared
prediction format: singleton clusters become predicted outliers, larger
clusters become groups.  All linear algebra is closed-form or cyclic-Jacobi
so results are deterministic across platforms.
"""

from __future__ import annotations

import warnings
from typing import Mapping, Sequence

import numpy as np

from .data import Clip, ClipFeatures, ClipPrediction, GroupPrediction, box_center_normalized
from .errors import DegenerateDegree, DimError, InvariantError, ShapeError
from .rng import SplitMix64

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
KMEANS_MAX_ITER = 100


def build_affinity(points: np.ndarray, kind: str = "cosine", bandwidth: float = 1.0) -> np.ndarray:
    """Symmetric nonnegative affinity with zero diagonal.

    cosine: max(0, cos(f_i, f_j)) on row vectors (zero rows stay zero).
    rbf: exp(-||c_i - c_j||^2 / (2 * bandwidth^2)) on coordinates.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError(f"need at least two row vectors, got shape {x.shape}")
    if kind == "cosine":
        norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
        safe = np.where(norms > 0.0, norms, 1.0)
        unit = x / safe
        a = np.maximum(unit @ unit.T, 0.0)
    elif kind == "rbf":
        if bandwidth <= 0:
            raise ShapeError(f"bandwidth must be positive, got {bandwidth}")
        diff = x[:, None, :] - x[None, :, :]
        a = np.exp(-(diff * diff).sum(-1) / (2.0 * bandwidth * bandwidth))
    else:
        raise ValueError(f"unknown affinity kind {kind!r}")
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    return a


def jacobi_eigh(
    sym: np.ndarray,
    tol: float = JACOBI_TOL,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
) -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Returns eigenvalues ascending and the matching eigenvector columns.
    Sweeps stop when the off-diagonal Frobenius mass drops below
    tol * ||A||_F.
    """
    a = np.array(sym, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"matrix must be square, got shape {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-9:
        raise InvariantError("matrix is not symmetric within 1e-9")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    norm = np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0)
        if off <= tol * max(norm, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)  # asymptotic form, theta^2 would overflow
                else:
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], v[:, order]


def kmeans(
    points: np.ndarray,
    k: int,
    rng: SplitMix64,
    max_iter: int = KMEANS_MAX_ITER,
) -> np.ndarray:
    """Lloyd iterations with seeded k-means++ initialization.

    Nearest-center ties go to the lowest center index.  An empty cluster
    steals the point farthest from its center among clusters that can spare
    one.  Deterministic given the rng state.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"points must be a matrix, got shape {x.shape}")
    n = x.shape[0]
    if not (1 <= k <= n):
        raise ShapeError(f"k must be in [1, {n}], got {k}")

    chosen = [rng.randint(n)]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        total = float(d2.sum())
        if total <= 0.0:
            # all remaining points duplicate a center; take the lowest new index
            taken = set(chosen)
            nxt = next(i for i in range(n) if i not in taken)
        else:
            nxt = rng.choice_weighted(d2.tolist())
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))

    centers = x[chosen].copy()
    labels: np.ndarray | None = None
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new_labels = np.argmin(dist, axis=1)
        for c in range(k):
            if np.any(new_labels == c):
                continue
            sizes = np.bincount(new_labels, minlength=k)
            eligible = np.where(sizes[new_labels] >= 2)[0]
            own = dist[eligible, new_labels[eligible]]
            new_labels[eligible[int(np.argmax(own))]] = c
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            centers[c] = x[labels == c].mean(axis=0)
    return labels


def spectral_cluster(affinity: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Partition actors into clusters on the normalized Laplacian.

    Actors with zero total affinity cannot be embedded; they are split off
    into their own singleton clusters (with a DegenerateDegree warning) and
    the remaining budget of clusters is spent on the connected rest.
    Returns one label per actor.
    """
    a = np.asarray(affinity, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"affinity must be square, got shape {a.shape}")
    n = a.shape[0]
    if not (1 <= k <= n):
        raise ShapeError(f"k must be in [1, {n}], got {k}")
    if np.any(a < 0):
        raise InvariantError("affinity entries must be nonnegative")

    deg = a.sum(axis=1)
    isolated = [i for i in range(n) if deg[i] == 0.0]
    core = [i for i in range(n) if deg[i] > 0.0]
    if isolated:
        warnings.warn(
            f"{len(isolated)} actor(s) with zero affinity isolated as singletons",
            DegenerateDegree,
        )
    labels = np.empty(n, dtype=np.int64)
    if not core:
        return np.arange(n, dtype=np.int64)

    k_core = min(max(k - len(isolated), 1), len(core))
    sub = a[np.ix_(core, core)]
    d = sub.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    lap = np.eye(len(core)) - inv_sqrt[:, None] * sub * inv_sqrt[None, :]
    lap = 0.5 * (lap + lap.T)
    _, vecs = jacobi_eigh(lap)
    embed = vecs[:, :k_core]
    norms = np.sqrt((embed * embed).sum(axis=1, keepdims=True))
    embed = embed / np.where(norms > 0.0, norms, 1.0)
    core_labels = kmeans(embed, k_core, SplitMix64(seed))
    for pos, actor in enumerate(core):
        labels[actor] = core_labels[pos]
    for offset, actor in enumerate(isolated):
        labels[actor] = k_core + offset
    return labels


def clusters_to_prediction(
    clip: Clip,
    labels: Sequence[int],
    num_classes: int,
    votes: Mapping[int, int] | None = None,
) -> ClipPrediction:
    """Partition -> prediction: singleton clusters become outliers, larger
    ones become groups.  Group class is a majority vote of the members'
    entries in ``votes`` (ties to the lowest class); without votes the
    class mass is spread uniformly over the real classes."""
    ids = clip.actor_ids
    if len(labels) != len(ids):
        raise DimError(f"{len(labels)} labels for {len(ids)} actors")
    by_label: dict[int, list[int]] = {}
    for idx, lab in enumerate(labels):
        by_label.setdefault(int(lab), []).append(idx)
    clusters = sorted(by_label.values(), key=lambda c: c[0])

    groups = []
    outliers: list[int] = []
    n = len(ids)
    for members in clusters:
        if len(members) < 2:
            outliers.extend(ids[i] for i in members)
            continue
        class_scores = np.zeros(num_classes + 1)
        if votes:
            counts = np.zeros(num_classes + 1)
            for i in members:
                vote = votes.get(ids[i])
                if vote is None:
                    continue
                if not (1 <= vote <= num_classes):
                    raise DimError(f"vote {vote} outside 1..{num_classes}")
                counts[vote] += 1
            if counts.sum() > 0:
                class_scores[int(np.argmax(counts))] = 1.0
        if class_scores.sum() == 0.0:
            class_scores[1:] = 1.0 / num_classes
        member_scores = np.zeros(n)
        member_scores[members] = 1.0
        groups.append(GroupPrediction(class_scores, member_scores))
    return ClipPrediction(
        clip_id=clip.clip_id,
        actor_ids=tuple(ids),
        groups=tuple(groups),
        predicted_outliers=frozenset(outliers),
    )


def baseline_predict(
    clip: Clip,
    feats: ClipFeatures | None,
    k: int,
    *,
    kind: str = "cosine",
    bandwidth: float = 0.5,
    seed: int = 0,
    num_classes: int = 6,
    votes: Mapping[int, int] | None = None,
) -> ClipPrediction:
    """Cluster one clip and wrap the partition as a prediction.

    cosine clusters frame-averaged actor features; rbf clusters normalized
    key-frame box centers (features unused).  k is clamped to the actor
    count."""
    n = len(clip.actor_ids)
    if n == 1:
        return ClipPrediction(
            clip_id=clip.clip_id,
            actor_ids=tuple(clip.actor_ids),
            groups=(),
            predicted_outliers=frozenset(clip.actor_ids),
        )
    if kind == "cosine":
        if feats is None:
            raise DimError("cosine affinity needs actor features")
        points = np.mean([np.asarray(f) for f in feats.actor_feats], axis=0)
    else:
        points = np.array(
            [
                box_center_normalized(t.key_box(0), (clip.width, clip.height))
                for t in clip.tracklets
            ]
        )
    affinity = build_affinity(points, kind=kind, bandwidth=bandwidth)
    labels = spectral_cluster(affinity, min(k, n), seed)
    return clusters_to_prediction(clip, labels, num_classes, votes)
