"""AUC, Proxy A-distance, MDS, embedding weights and result summaries."""

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from numpy.testing import assert_allclose

from dropout_transfer import evaluation as ev
from dropout_transfer.errors import ShapeError, UndefinedMetricError
from dropout_transfer.evaluation import TransferResult
from oracles import classical_mds_reference, pairwise_auc

labels_and_scores = st.integers(2, 60).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 5).map(float), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n)))


class TestAuc:
    def test_examples(self):
        assert ev.auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert ev.auc([0.3] * 5, [0, 1, 0, 1, 1]) == 0.5
        assert ev.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_errors(self):
        with pytest.raises(UndefinedMetricError):
            ev.auc([0.1, 0.2], [1, 1])
        with pytest.raises(ShapeError):
            ev.auc([0.1, 0.2], [1])

    @given(labels_and_scores)
    def test_matches_pairwise_oracle(self, sl):
        scores, labels = sl
        assume(0 < sum(labels) < len(labels))
        assert ev.auc(scores, labels) == pairwise_auc(scores, labels)

    @given(labels_and_scores)
    def test_monotone_invariance(self, sl):
        scores, labels = sl
        assume(0 < sum(labels) < len(labels))
        s = np.array(scores)
        assert ev.auc(np.exp(3 * s) - 7, labels) == ev.auc(s, labels)

    @given(st.lists(st.booleans(), min_size=2, max_size=50), st.integers(0, 2**31 - 1))
    def test_complement(self, labels, seed):
        assume(0 < sum(labels) < len(labels))
        s = np.random.default_rng(seed).permutation(len(labels)).astype(float)
        assert_allclose(ev.auc(s, labels) + ev.auc(-s, labels), 1.0, rtol=0, atol=1e-12)


class TestPad:
    def test_identical_distributions(self, rng):
        X, Y = rng.normal(size=(2000, 10)), rng.normal(size=(2000, 10))
        res = ev.proxy_a_distance(X, Y)
        assert res.pad <= 0.3 and (res.n_source, res.n_target) == (2000, 2000)
        assert_allclose(res.pad, ev.pad_from_error(res.error))

    def test_disjoint_clusters(self, rng):
        X, Y = rng.normal(size=(500, 4)), rng.normal(size=(500, 4)) + 6
        assert ev.proxy_a_distance(X, Y).pad >= 1.8

    def test_symmetry(self, rng):
        X, Y = rng.normal(size=(2000, 6)), rng.normal(size=(2000, 6)) + 0.3
        assert abs(ev.proxy_a_distance(X, Y).pad - ev.proxy_a_distance(Y, X).pad) <= 0.1

    def test_per_slice_mode(self, rng):
        X = rng.normal(size=(400, 2, 3))
        Y = X.copy()
        Y[:, :, 0] += 10
        res = ev.proxy_a_distance(X, rng.permutation(Y), ev.PadConfig(mode="per-slice", epochs=20))
        assert_allclose(res.pad, (2 * 2.0 + 4 * 0.0) / 6, atol=0.15)

    def test_pad_from_error(self):
        assert ev.pad_from_error(0.0) == 2.0
        assert ev.pad_from_error(0.5) == 0.0
        assert ev.pad_from_error(0.7) == 0.0
        assert ev.pad_from_error(0.25) == 1.0

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            ev.proxy_a_distance(np.zeros((0, 2)), rng.normal(size=(5, 2)))
        with pytest.raises(ShapeError):
            ev.proxy_a_distance(rng.normal(size=(5, 2)), rng.normal(size=(5, 3)))
        with pytest.raises(ValueError, match="degenerate"):
            ev.proxy_a_distance(rng.normal(size=(1, 2)), rng.normal(size=(1, 2)))


class TestMds:
    def test_zero_matrix(self):
        assert_allclose(ev.mds_embed(np.zeros((4, 4))), 0.0)

    def test_equilateral(self):
        D = np.ones((3, 3)) - np.eye(3)
        assert_allclose(ev.pairwise_distances(ev.mds_embed(D)), D, atol=1e-8)

    def test_planted_configuration(self, rng):
        for _ in range(5):
            P = rng.normal(size=(8, 2)) * 3
            D = ev.pairwise_distances(P)
            coords = ev.mds_embed(D)
            assert ev.stress(D, coords) < 1e-6
            ref = classical_mds_reference(D)
            assert_allclose(ev.pairwise_distances(ref), ev.pairwise_distances(coords), atol=1e-8)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            ev.mds_embed(np.array([[0, 1], [2, 0]]))
        with pytest.raises(ValueError):
            ev.mds_embed(np.array([[1.0, 1], [1, 0]]))


class TestFeatureWeights:
    def test_identity_and_zero_column(self):
        w = ev.embedding_feature_weights(np.eye(3), ["a", "b", "c"])
        assert_allclose([x for _, x in w], 1 / 3)
        P = np.array([[1.0, 0.0, 2.0]])
        w = dict(ev.embedding_feature_weights(P, ["a", "b", "c"]))
        assert w["b"] == 0.0
        assert [n for n, _ in ev.embedding_feature_weights(P, ["a", "b", "c"])] == ["c", "a", "b"]

    def test_shape(self):
        with pytest.raises(ShapeError):
            ev.embedding_feature_weights(np.eye(3), ["a"])


def result(source, target, week, method, seed, auc, pad=0.5, ratio=1.0):
    return TransferResult(source, target, week, method, seed, auc, pad, ratio)


class TestSummaries:
    def test_single_result(self):
        s = ev.summarize([result("A", "B", 3, "naive", 0, 0.7)])
        assert s["overall"]["naive"] == {"mean": 0.7, "std": 0.0, "n": 1}

    def test_hand_fixture(self):
        rows = [result("A", "B", 2, "passive", 0, 0.70), result("A", "B", 3, "passive", 0, 0.80),
                result("A", "B", 2, "active", 0, 0.75), result("A", "B", 3, "active", 0, 0.65)]
        s = ev.summarize(rows)
        assert_allclose(s["overall"]["passive"]["mean"], 0.75)
        assert_allclose(s["overall"]["active"]["std"], 0.05)
        assert_allclose(s["per_week"]["active"]["2"]["mean"], 0.75)
        winners = {(r["week"]): r["winner"] for r in s["scatter"]}
        assert winners == {2: "active", 3: "passive"}

    def test_tie_rule(self):
        assert ev.winner(0.800, 0.805) == "tie"
        assert ev.winner(0.80, 0.81) == "active"
        assert ev.winner(0.82, 0.80) == "passive"

    def test_empty(self):
        with pytest.raises(ValueError):
            ev.summarize([])

    def test_auc_range(self):
        with pytest.raises(ValueError):
            result("A", "B", 2, "naive", 0, 1.2)

    def test_csv_round_trip(self, tmp_path):
        rows = [result("A", "B", 2, "naive", 0, 0.123456789), result("A", "B", 3, "naive", 1, float("nan"))]
        ev.write_results(tmp_path / "r.csv", rows, {"config": {"x": 1}})
        back, meta = ev.read_results(tmp_path / "r.csv")
        assert meta == {"config": {"x": 1}}
        assert back[0] == rows[0] and np.isnan(back[1].auc)
