import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from scmine.cluster import (DegenerateClusteringError, KMeans, cluster_topics, davies_bouldin,
                            elbow_sweep, kmeans, knee_point)

FOUR = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])


def blobs(seed, per=100, sigma=1.0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [12.0, 0.0], [6.0, 12.0]])
    X = np.vstack([c + sigma * rng.normal(size=(per, 2)) for c in centers])
    return X, np.repeat(np.arange(3), per)


def db_oracle(X, labels):
    """Davies-Bouldin from its definition, loops only."""
    ks = sorted(set(labels))
    C = {k: X[labels == k].mean(axis=0) for k in ks}
    S = {k: np.mean([np.linalg.norm(x - C[k]) for x in X[labels == k]]) for k in ks}
    total = 0.0
    for i in ks:
        total += max((S[i] + S[j]) / np.linalg.norm(C[i] - C[j]) for j in ks if j != i)
    return total / len(ks)


class TestKMeans:
    def test_four_points(self):
        r = kmeans(FOUR, 2, seed=0)
        assert r.assignments[0] == r.assignments[1] != r.assignments[2] == r.assignments[3]
        got = sorted(map(tuple, np.round(r.centroids, 12)))
        assert got == [(0.0, 0.5), (10.0, 0.5)]
        assert r.inertia == pytest.approx(1.0, abs=1e-12)
        assert r.db_score == pytest.approx(0.1, abs=1e-12)

    def test_k_equals_n(self):
        r = kmeans(FOUR, 4, seed=1)
        assert sorted(r.assignments) == [0, 1, 2, 3] and r.inertia == 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            kmeans(FOUR, 5)
        with pytest.raises(ValueError):
            kmeans(FOUR, 0)
        with pytest.raises(ValueError):
            kmeans(FOUR, 2, n_init=0)

    @pytest.mark.parametrize("seed", range(5))
    def test_recovers_blobs(self, seed):
        X, truth = blobs(seed)
        r = kmeans(X, 3, seed=seed, n_init=10)
        assert adjusted_rand_score(truth, r.assignments) == 1.0

    def test_seeds_agree_up_to_relabeling(self):
        X, _ = blobs(0)
        a, b = kmeans(X, 3, seed=1), kmeans(X, 3, seed=2)
        assert adjusted_rand_score(a.assignments, b.assignments) == 1.0

    def test_inertia_never_increases_and_no_empty_cluster(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            X = rng.normal(size=(40, 3))
            k = int(rng.integers(2, 10))
            r = kmeans(X, k, seed=trial, n_init=3)
            assert np.all(np.diff(r.inertia_trace) <= 1e-12)
            assert sorted(set(r.assignments)) == list(range(k))
            assert r.inertia >= 0

    def test_duplicate_points_still_k_clusters(self):
        X = np.vstack([np.zeros((6, 2)), np.ones((2, 2))])
        r = kmeans(X, 3, seed=0, n_init=2)
        assert sorted(set(r.assignments)) == [0, 1, 2]

    def test_deterministic(self):
        X, _ = blobs(4, per=30)
        a, b = kmeans(X, 4, seed=9, n_init=4), kmeans(X, 4, seed=9, n_init=4)
        assert np.array_equal(a.assignments, b.assignments) and a.inertia == b.inertia

    def test_estimator(self):
        X, truth = blobs(5, per=20)
        est = KMeans(n_clusters=3, n_init=5, random_state=0).fit(X)
        assert adjusted_rand_score(truth, est.labels_) == 1.0
        np.testing.assert_array_equal(est.predict(X), est.labels_)
        assert est.score(X) == pytest.approx(-est.inertia_)


class TestDaviesBouldin:
    def test_four_points(self):
        labels = np.array([0, 0, 1, 1])
        C = np.array([[0.0, 0.5], [10.0, 0.5]])
        assert davies_bouldin(FOUR, labels, C) == pytest.approx(0.1, abs=1e-15)

    def test_singletons(self):
        X = np.array([[0.0], [3.0]])
        assert davies_bouldin(X, [0, 1], X) == 0.0

    def test_scale_invariance(self):
        X, _ = blobs(1, per=20)
        r = kmeans(X, 3, seed=0)
        a = davies_bouldin(X, r.assignments, r.centroids)
        b = davies_bouldin(7.5 * X, r.assignments, 7.5 * r.centroids)
        assert a == pytest.approx(b, rel=1e-12)

    def test_matches_definition(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            X = rng.normal(size=(30, 3))
            labels = rng.integers(0, 4, size=30)
            labels[:4] = [0, 1, 2, 3]
            C = np.vstack([X[labels == k].mean(axis=0) for k in range(4)])
            got = davies_bouldin(X, labels, C)
            assert got == pytest.approx(db_oracle(X, labels), rel=1e-12)
            assert got > 0

    def test_degenerate(self):
        X = np.array([[0.0], [1.0], [0.0], [1.0]])
        with pytest.raises(DegenerateClusteringError, match="degenerate clustering"):
            davies_bouldin(X, [0, 0, 1, 1], np.array([[0.5], [0.5]]))
        with pytest.raises(DegenerateClusteringError):
            davies_bouldin(X, [0, 0, 0, 0], np.array([[0.5]]))


class TestElbow:
    @pytest.mark.parametrize("seed", range(5))
    def test_three_blobs(self, seed):
        X, _ = blobs(seed)
        curve = elbow_sweep(X, 2, 8, seed=seed, n_init=10)
        assert curve.ks == list(range(2, 9))
        assert curve.suggested_k == 3 and curve.best_k == 3

    def test_linear_curve_picks_k_min(self):
        assert knee_point([2, 3, 4, 5, 6], [1.0, 2.0, 3.0, 4.0, 5.0]) == 2

    def test_knee(self):
        assert knee_point([1, 2, 3, 4, 5], [10.0, 3.0, 2.0, 1.5, 1.0]) == 2

    def test_tie_goes_to_smaller_k(self):
        assert knee_point([1, 2, 3, 4], [0.0, 1.0, 1.0, 0.0]) == 2

    def test_sweep_order_independent(self):
        X, _ = blobs(7, per=25)
        full = elbow_sweep(X, 2, 6, seed=3, n_init=3)
        part = elbow_sweep(X, 4, 6, seed=3, n_init=3)
        assert full.scores[2:] == part.scores

    def test_bounds(self):
        with pytest.raises(ValueError):
            elbow_sweep(FOUR, 1, 3)
        with pytest.raises(ValueError):
            elbow_sweep(FOUR, 3, 3)
        with pytest.raises(ValueError):
            elbow_sweep(FOUR, 2, 5)

    def test_degenerate_k_recorded_missing(self):
        X = np.vstack([np.zeros((5, 2)), np.ones((5, 2))])
        curve = elbow_sweep(X, 2, 3, seed=0, n_init=2)
        assert curve.scores[0] == 0.0
        assert curve.scores[1] is None
        assert curve.suggested_k == 2


class TestTopics:
    def test_planted_loan(self):
        rng = np.random.default_rng(0)
        background = [f"w{i}" for i in range(100)]
        tokens, assignments = [], []
        for c in range(5):
            for _ in range(20):
                doc = list(rng.choice(background, size=30))
                if c == 1:
                    doc += ["loan"]
                tokens.append(doc)
                assignments.append(c)
        topics = cluster_topics(assignments, tokens, n_top=10)
        assert topics[1][0][0] == "loan"
        assert len(topics[0]) == 10

    def test_single_cluster(self):
        topics = cluster_topics([0, 0, 0], [["a", "b"], ["a"], ["c"]], n_top=5)
        # m = 3: a -> (2/4) ln(3/2) = 0.203; b, c -> (1/4) ln 3 = 0.275
        assert [t for t, _ in topics[0]] == ["b", "c", "a"]

    def test_empty_comment_cluster(self):
        topics = cluster_topics([0, 1, 1], [[], ["x", "y"], ["z"]])
        assert topics[0] == []
