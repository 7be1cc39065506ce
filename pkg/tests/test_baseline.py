import math

import numpy as np
import pytest

from conftest import make_clip
from gadkit.baseline import (
    baseline_predict,
    build_affinity,
    clusters_to_prediction,
    jacobi_eigh,
    kmeans,
    spectral_cluster,
)
from gadkit.data import ClipFeatures
from gadkit.errors import DegenerateDegree, DimError, InvariantError, ShapeError
from gadkit.rng import SplitMix64


def two_clique_affinity(sizes=(3, 2)) -> np.ndarray:
    n = sum(sizes)
    a = np.zeros((n, n))
    start = 0
    for size in sizes:
        a[start : start + size, start : start + size] = 1.0
        start += size
    np.fill_diagonal(a, 0.0)
    return a


def agree_up_to_relabel(labels, want_groups) -> bool:
    got = {}
    for idx, lab in enumerate(labels):
        got.setdefault(int(lab), set()).add(idx)
    return set(map(frozenset, got.values())) == set(map(frozenset, want_groups))


# ---------------------------------------------------------------------------
# affinity

def test_cosine_affinity_fixtures():
    a = build_affinity(np.array([[0.6, 0.8], [1.2, 1.6], [0.8, -0.6]]))
    assert a[0, 1] == pytest.approx(1.0, abs=1e-12)   # parallel rows
    assert a[0, 2] == 0.0                              # orthogonal
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0.0)


def test_cosine_affinity_clamps_negative_and_zero_rows():
    a = build_affinity(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]]))
    assert a[0, 1] == 0.0      # anti-parallel clamps to zero
    assert np.all(a[2] == 0.0) # zero row cannot vote


def test_rbf_affinity_at_one_bandwidth():
    a = build_affinity(np.array([[0.0, 0.0], [0.3, 0.4]]), kind="rbf", bandwidth=0.5)
    assert a[0, 1] == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_affinity_validation():
    with pytest.raises(ShapeError):
        build_affinity(np.ones((1, 4)))
    with pytest.raises(ShapeError):
        build_affinity(np.ones((3, 2)), kind="rbf", bandwidth=0.0)
    with pytest.raises(ValueError):
        build_affinity(np.ones((3, 2)), kind="chebyshev")


# ---------------------------------------------------------------------------
# eigensolver

def test_jacobi_on_diagonal_matrix_is_exact():
    vals, vecs = jacobi_eigh(np.diag([3.0, -1.0, 2.0]))
    assert np.array_equal(vals, [-1.0, 2.0, 3.0])
    assert np.array_equal(np.abs(vecs), np.eye(3)[:, [1, 2, 0]])


def test_jacobi_matches_lapack_and_residuals():
    rng = SplitMix64(11)
    for n in (2, 3, 5, 8, 13):
        m = rng.normals((n, n))
        sym = 0.5 * (m + m.T)
        vals, vecs = jacobi_eigh(sym)
        ref = np.linalg.eigvalsh(sym)
        assert np.allclose(vals, ref, atol=1e-10)
        assert np.all(np.diff(vals) >= 0.0)
        resid = sym @ vecs - vecs * vals[None, :]
        assert np.max(np.abs(resid)) <= 1e-8
        assert np.allclose(vecs.T @ vecs, np.eye(n), atol=1e-10)


def test_jacobi_validation():
    with pytest.raises(ShapeError):
        jacobi_eigh(np.ones((2, 3)))
    with pytest.raises(InvariantError):
        jacobi_eigh(np.array([[0.0, 1.0], [0.0, 0.0]]))


# ---------------------------------------------------------------------------
# kmeans

def test_kmeans_recovers_separated_blobs():
    rng = SplitMix64(2)
    blob_a = rng.normals((10, 2)) * 0.05
    blob_b = rng.normals((8, 2)) * 0.05 + 10.0
    pts = np.vstack([blob_a, blob_b])
    labels = kmeans(pts, 2, SplitMix64(0))
    assert agree_up_to_relabel(labels, [set(range(10)), set(range(10, 18))])


def test_kmeans_extremes():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    assert np.all(kmeans(pts, 1, SplitMix64(0)) == 0)
    assert set(kmeans(pts, 3, SplitMix64(0)).tolist()) == {0, 1, 2}


def test_kmeans_duplicate_points_fill_every_cluster():
    # two coincident points force the empty-cluster steal
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    labels = kmeans(pts, 3, SplitMix64(0))
    assert set(labels.tolist()) == {0, 1, 2}


def test_kmeans_validation():
    with pytest.raises(ShapeError):
        kmeans(np.ones(4), 1, SplitMix64(0))
    with pytest.raises(ShapeError):
        kmeans(np.ones((3, 2)), 4, SplitMix64(0))


# ---------------------------------------------------------------------------
# spectral clustering

def test_spectral_recovers_two_cliques_many_seeds():
    a = two_clique_affinity((3, 2))
    for seed in range(20):
        labels = spectral_cluster(a, 2, seed)
        assert agree_up_to_relabel(labels, [{0, 1, 2}, {3, 4}]), seed


def test_spectral_permutation_invariance():
    a = two_clique_affinity((3, 3))
    perm = np.array([4, 0, 5, 2, 1, 3])
    shuffled = a[np.ix_(perm, perm)]
    labels = spectral_cluster(shuffled, 2, seed=1)
    inv = {int(p): i for i, p in enumerate(perm)}
    back = [labels[inv[i]] for i in range(6)]
    assert agree_up_to_relabel(back, [{0, 1, 2}, {3, 4, 5}])


def test_spectral_isolates_zero_degree_actor():
    a = two_clique_affinity((2, 2))
    grown = np.zeros((5, 5))
    grown[:4, :4] = a
    with pytest.warns(DegenerateDegree):
        labels = spectral_cluster(grown, 3, seed=0)
    assert agree_up_to_relabel(labels, [{0, 1}, {2, 3}, {4}])
    assert labels[4] == 2  # isolated actors take the trailing labels


def test_spectral_all_isolated():
    with pytest.warns(DegenerateDegree):
        labels = spectral_cluster(np.zeros((3, 3)), 2, seed=0)
    assert labels.tolist() == [0, 1, 2]


def test_spectral_validation():
    with pytest.raises(ShapeError):
        spectral_cluster(np.ones((2, 3)), 1, seed=0)
    with pytest.raises(ShapeError):
        spectral_cluster(two_clique_affinity(), 6, seed=0)
    with pytest.raises(InvariantError):
        spectral_cluster(np.array([[0.0, -1.0], [-1.0, 0.0]]), 1, seed=0)


# ---------------------------------------------------------------------------
# partition -> prediction

def test_clusters_to_prediction_majority_vote():
    clip = make_clip("a", [({1, 2, 3}, 2)], outliers={4})
    pred = clusters_to_prediction(
        clip, [0, 0, 0, 1], num_classes=6, votes={1: 2, 2: 2, 3: 5}
    )
    assert len(pred.groups) == 1
    assert pred.predicted_outliers == frozenset({4})
    assert pred.groups[0].class_scores[2] == 1.0
    assert list(pred.member_sets()) == [{1, 2, 3}]


def test_clusters_to_prediction_vote_tie_prefers_low_class():
    clip = make_clip("a", [({1, 2}, 1)])
    pred = clusters_to_prediction(clip, [0, 0], num_classes=6, votes={1: 5, 2: 3})
    assert pred.groups[0].class_scores[3] == 1.0


def test_clusters_to_prediction_without_votes_is_uniform():
    clip = make_clip("a", [({1, 2}, 1)])
    pred = clusters_to_prediction(clip, [0, 0], num_classes=4)
    np.testing.assert_allclose(pred.groups[0].class_scores, [0.0, 0.25, 0.25, 0.25, 0.25])


def test_clusters_to_prediction_validation():
    clip = make_clip("a", [({1, 2}, 1)])
    with pytest.raises(DimError):
        clusters_to_prediction(clip, [0], num_classes=6)
    with pytest.raises(DimError):
        clusters_to_prediction(clip, [0, 0], num_classes=6, votes={1: 7, 2: 7})


# ---------------------------------------------------------------------------
# end to end

def test_baseline_predict_rbf_recovers_spatial_groups():
    clip = make_clip("a", [({1, 2, 3}, 1), ({20, 21}, 2)])
    pred = baseline_predict(clip, None, k=2, kind="rbf", bandwidth=0.05)
    assert sorted(pred.member_sets(), key=len) == [{20, 21}, {1, 2, 3}]
    assert pred.predicted_outliers == frozenset()


def test_baseline_predict_cosine_uses_features():
    clip = make_clip("a", [({1, 2}, 1), ({3, 4}, 2)])
    u = [1.0, 0.0, 0.0, 0.0]
    v = [0.0, 0.0, 1.0, 0.0]
    frame = np.array([u, u, v, v])
    feats = ClipFeatures("a", (frame, frame), (np.zeros((1, 4)), np.zeros((1, 4))))
    pred = baseline_predict(clip, feats, k=2, kind="cosine")
    assert sorted(map(sorted, pred.member_sets())) == [[1, 2], [3, 4]]
    with pytest.raises(DimError):
        baseline_predict(clip, None, k=2, kind="cosine")


def test_baseline_predict_single_actor_clip():
    clip = make_clip("a", [], extra_actors={9}, outliers={9})
    pred = baseline_predict(clip, None, k=2, kind="rbf")
    assert pred.groups == ()
    assert pred.predicted_outliers == frozenset({9})
