import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hatewatch.topics import (
    TOPIC_NAMES,
    ClusterTree,
    TopicDistribution,
    TopicVector,
    assign_topics,
    channel_topic_distribution,
    cut_tree,
    hierarchical_cluster,
    js_divergence,
    similarity_matrix,
)


def unit(v):
    v = np.asarray(v, dtype=float)
    return tuple(v / np.linalg.norm(v))


def brute_force_average_linkage(d):
    """Oracle: track explicit member lists, recompute every linkage from the
    original matrix instead of using the recursive update."""
    n = d.shape[0]
    clusters = {i: [i] for i in range(n)}
    merges = []
    next_id = n
    for _ in range(n - 1):
        best = None
        for a in sorted(clusters):
            for b in sorted(clusters):
                if a >= b:
                    continue
                link = np.mean([d[i, j] for i in clusters[a] for j in clusters[b]])
                if best is None or link < best[0] - 1e-15:
                    best = (link, a, b)
        link, a, b = best
        merges.append((a, b, float(link)))
        clusters[next_id] = clusters.pop(a) + clusters.pop(b)
        next_id += 1
    return merges


class TestTopicVector:
    def test_nine_names(self):
        assert len(TOPIC_NAMES) == 9

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError):
            TopicVector("t", (1.0, 1.0))

    def test_unit_accepted(self):
        TopicVector("t", unit([3.0, 4.0]))


class TestAssignTopics:
    def setup_method(self):
        self.topics = [
            TopicVector("x", (1.0, 0.0)),
            TopicVector("y", (0.0, 1.0)),
        ]

    def test_aligned_document(self):
        assert assign_topics((2.0, 0.0), self.topics, theta=0.5) == {"x"}

    def test_diagonal_hits_both(self):
        hits = assign_topics((1.0, 1.0), self.topics, theta=0.5)
        assert hits == {"x", "y"}  # cos = 0.7071 for each

    def test_threshold_is_strict(self):
        doc = (3.0, 4.0)
        sim_x = 3.0 / float(np.linalg.norm(doc))
        # similarity exactly equal to theta must not count as a hit
        assert assign_topics(doc, self.topics, theta=sim_x) == {"y"}

    def test_zero_norm_no_hits(self, caplog):
        with caplog.at_level("WARNING"):
            assert assign_topics((0.0, 0.0), self.topics) == set()
        assert "zero-norm" in caplog.text

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            assign_topics((1.0, 0.0, 0.0), self.topics)

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(1.01, 10))
    @settings(max_examples=50)
    def test_scale_invariance(self, doc, scale):
        if np.linalg.norm(doc) < 1e-6:
            return
        topics = [TopicVector("x", (1.0, 0.0))]
        assert assign_topics(doc, topics) == assign_topics(
            [scale * x for x in doc], topics
        )


class TestChannelDistribution:
    def test_hand_counted(self):
        hits = [{"a"}, {"a", "b"}, {"b"}, set()]
        dist = channel_topic_distribution("c", hits, topic_ids=("a", "b", "c"))
        assert dist.probs == pytest.approx((0.5, 0.5, 0.0))
        assert dist.hit_count == 4

    def test_multi_topic_document_counts_each(self):
        dist = channel_topic_distribution("c", [{"a", "b", "c"}], ("a", "b", "c"))
        assert dist.probs == pytest.approx((1 / 3, 1 / 3, 1 / 3))

    def test_no_hits_zero_sentinel(self):
        dist = channel_topic_distribution("c", [set(), set()], ("a", "b"))
        assert dist.probs == (0.0, 0.0) and dist.hit_count == 0

    def test_unknown_topic_rejected(self):
        with pytest.raises(KeyError):
            channel_topic_distribution("c", [{"zzz"}], ("a", "b"))


class TestJSDivergence:
    def test_identical(self):
        assert js_divergence((0.5, 0.5), (0.5, 0.5)) == 0.0

    def test_disjoint_support_is_one(self):
        assert js_divergence((1.0, 0.0), (0.0, 1.0)) == pytest.approx(1.0)

    def test_hand_computed(self):
        # m = (0.5, 0.5); jsd = 1 - H(0.25)/... worked out directly:
        p, q = (1.0, 0.0), (0.5, 0.5)
        m = (0.75, 0.25)
        expected = 0.5 * (1.0 * math.log2(1.0 / 0.75)) + 0.5 * (
            0.5 * math.log2(0.5 / 0.75) + 0.5 * math.log2(0.5 / 0.25)
        )
        assert js_divergence(p, q) == pytest.approx(expected, abs=1e-12)

    def test_symmetry_and_range_random(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            k = int(rng.integers(2, 10))
            p = rng.dirichlet(np.ones(k))
            q = rng.dirichlet(np.ones(k))
            d = js_divergence(p, q)
            assert 0.0 <= d <= 1.0
            assert d == pytest.approx(js_divergence(q, p), abs=1e-12)

    def test_sqrt_triangle_inequality(self):
        rng = np.random.default_rng(9)
        for _ in range(300):
            p, q, r = rng.dirichlet(np.ones(5), size=3)
            a = math.sqrt(js_divergence(p, q))
            b = math.sqrt(js_divergence(q, r))
            c = math.sqrt(js_divergence(p, r))
            assert c <= a + b + 1e-12

    def test_invalid_distribution(self):
        with pytest.raises(ValueError):
            js_divergence((0.5, 0.6), (0.5, 0.5))


class TestSimilarityMatrix:
    def test_skips_zero_hit_channels(self):
        dists = [
            TopicDistribution("a", (1.0, 0.0), 3),
            TopicDistribution("b", (0.0,) * 2, 0),
            TopicDistribution("c", (0.0, 1.0), 2),
        ]
        mat = similarity_matrix(dists)
        assert mat.shape == (2, 2)
        assert mat[0, 1] == pytest.approx(1.0)

    def test_too_few_channels(self):
        with pytest.raises(ValueError):
            similarity_matrix([TopicDistribution("a", (1.0, 0.0), 1)])


class TestHierarchicalCluster:
    def test_three_point_line(self):
        # points at 0, 1, 5 on a line; merge (0,1) first, then with 2
        d = np.array([[0.0, 1.0, 5.0], [1.0, 0.0, 4.0], [5.0, 4.0, 0.0]])
        tree = hierarchical_cluster(d)
        assert tree.merges[0] == (0, 1, 1.0)
        a, b, dist = tree.merges[1]
        assert {a, b} == {2, 3} and dist == pytest.approx(4.5)

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            n = int(rng.integers(2, 7))
            pts = rng.normal(size=(n, 3))
            d = np.zeros((n, n))
            for i in range(n):
                for j in range(n):
                    d[i, j] = np.linalg.norm(pts[i] - pts[j])
            tree = hierarchical_cluster(d)
            oracle = brute_force_average_linkage(d)
            for (a1, b1, d1), (a2, b2, d2) in zip(tree.merges, oracle):
                assert (a1, b1) == (a2, b2)
                assert d1 == pytest.approx(d2, abs=1e-9)

    def test_tie_break_smallest_pair(self):
        d = np.ones((3, 3)) - np.eye(3)
        tree = hierarchical_cluster(d)
        assert tree.merges[0][:2] == (0, 1)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            hierarchical_cluster(np.array([[0.0, 1.0], [2.0, 0.0]]))

    def test_single_point_rejected(self):
        with pytest.raises(ValueError):
            hierarchical_cluster(np.zeros((1, 1)))


class TestCutTree:
    def setup_method(self):
        d = np.array(
            [
                [0.0, 0.1, 3.0, 3.1],
                [0.1, 0.0, 3.2, 3.3],
                [3.0, 3.2, 0.0, 0.2],
                [3.1, 3.3, 0.2, 0.0],
            ]
        )
        self.tree = hierarchical_cluster(d)

    def test_two_clusters_recovers_blocks(self):
        labels = cut_tree(self.tree, 2)
        assert labels[0] == labels[1] and labels[2] == labels[3]
        assert labels[0] != labels[2]

    def test_n_clusters_is_identity(self):
        assert cut_tree(self.tree, 4) == [0, 1, 2, 3]

    def test_one_cluster(self):
        assert cut_tree(self.tree, 1) == [0, 0, 0, 0]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            cut_tree(self.tree, 5)

    def test_serialization_shape(self):
        d = self.tree.to_dict()
        assert d["n_leaves"] == 4 and len(d["merges"]) == 3
        rebuilt = ClusterTree(d["n_leaves"], tuple(tuple(m) for m in d["merges"]))
        assert rebuilt.merges[0][:2] == self.tree.merges[0][:2]
