"""CORAL, kernel mean matching and the transfer methods' plumbing."""

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from dropout_transfer import transfer
from dropout_transfer.data import slice_for_week
from dropout_transfer.errors import ShapeError, TrainingDivergedError
from dropout_transfer.evaluation import auc
from dropout_transfer.transfer import MethodConfig, TransferTask, WeeklyPredictor
from oracles import kmm_reference, numeric_gradient

FAST = MethodConfig(epochs=2, ae_epochs=2, kmm_max_iter=100)


class TestCoral:
    def test_identical_is_zero(self, rng):
        E = rng.normal(size=(20, 4))
        assert transfer.coral_loss(E, E)[0] == 0.0

    def test_one_dimensional_hand_case(self):
        loss, _, _ = transfer.coral_loss(np.array([[-1.0], [1.0]]), np.array([[0.0], [0.0]]))
        assert abs(loss - 1.0) <= 1e-12

    def test_gradient(self, rng):
        ES, ET = rng.normal(size=(5, 3)), rng.normal(size=(6, 3)) * 2
        _, gS, gT = transfer.coral_loss(ES, ET)
        assert_allclose(gS, numeric_gradient(lambda X: transfer.coral_loss(X, ET)[0], ES), atol=1e-8)
        assert_allclose(gT, numeric_gradient(lambda X: transfer.coral_loss(ES, X)[0], ET), atol=1e-8)

    @given(arrays(np.float64, (6, 3), elements=st.floats(-5, 5)),
           arrays(np.float64, (4, 3), elements=st.floats(-5, 5)),
           arrays(np.float64, (3,), elements=st.floats(-100, 100)))
    def test_symmetric_and_translation_invariant(self, ES, ET, shift):
        base = transfer.coral_loss(ES, ET)[0]
        assert_allclose(transfer.coral_loss(ET, ES)[0], base, rtol=1e-12, atol=1e-12)
        assert_allclose(transfer.coral_loss(ES + shift, ET)[0], base, rtol=1e-6, atol=1e-6)

    def test_scaled_copy(self, rng):
        E = rng.normal(size=(30, 4))
        C = transfer.covariance(E)
        for c in (0.0, 1.0, 2.0):
            expected = (c * c - 1) ** 2 / (4 * 16) * np.sum(C * C)
            assert_allclose(transfer.coral_loss(E, c * E)[0], expected, rtol=1e-12, atol=1e-15)

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            transfer.coral_loss(rng.normal(size=(1, 3)), rng.normal(size=(4, 3)))
        with pytest.raises(ShapeError):
            transfer.coral_loss(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)))


def kmm_problem(XS, XT, sigma):
    K = transfer.gaussian_kernel(XS, XS, sigma)
    kappa = transfer.gaussian_kernel(XS, XT, sigma).mean(axis=1)
    const = transfer.gaussian_kernel(XT, XT, sigma).mean()
    return K, kappa, const


class TestKmm:
    def test_identical_sample(self, rng):
        X = rng.normal(size=(60, 4))
        w = transfer.kmm_weights(X, X).weights
        assert np.abs(w - 1).max() <= 1e-3

    def test_small_instances_match_reference(self, rng):
        for trial in range(10):
            nS, nT = rng.integers(5, 21, size=2)
            XS = rng.normal(size=(nS, 3))
            XT = rng.normal(size=(nT, 3)) + rng.normal(size=3) * 0.8
            res = transfer.kmm_weights(XS, XT, B=5.0, eps=0.1, max_iter=20000)
            K, kappa, const = kmm_problem(XS, XT, res.sigma)
            _, ref = kmm_reference(K, kappa, nS, 5.0, 0.1)
            assert abs(res.objective - (ref + const)) <= 1e-3, trial

    def test_two_clusters(self, rng):
        XS = np.r_[rng.normal(size=(50, 2)), rng.normal(size=(50, 2)) + 8]
        XT = rng.normal(size=(80, 2))
        w = transfer.kmm_weights(XS, XT).weights
        assert w[:50].mean() > 3 * w[50:].mean()

    def test_constraints(self, rng):
        XS = rng.normal(size=(120, 5))
        XT = rng.normal(size=(90, 5)) + 1.5
        res = transfer.kmm_weights(XS, XT, B=4.0, eps=0.05)
        assert res.weights.min() >= 0 and res.weights.max() <= 4.0 + 1e-12
        assert abs(res.weights.mean() - 1) <= 0.05 + 1e-12

    def test_empty(self, rng):
        with pytest.raises(ValueError):
            transfer.kmm_weights(np.zeros((0, 2)), rng.normal(size=(3, 2)))

    @given(arrays(np.float64, (7,), elements=st.floats(-20, 20)), st.floats(0.5, 5), st.floats(0, 0.3))
    def test_projection_is_feasible_and_closest(self, v, B, eps):
        n = len(v)
        lo, hi = n * (1 - eps), n * (1 + eps)
        if hi < 0 or lo > n * B:
            return
        w = transfer.project_box_sum(v, B, lo, hi)
        assert (w >= 0).all() and (w <= B).all()
        assert lo - 1e-6 <= w.sum() <= hi + 1e-6
        # any feasible point is no closer to v
        rng = np.random.default_rng(0)
        for _ in range(20):
            z = transfer.project_box_sum(rng.uniform(0, B, n), B, lo, hi)
            assert np.linalg.norm(w - v) <= np.linalg.norm(z - v) + 1e-6


class TestTaskHygiene:
    def test_target_labels_are_withheld(self, small_pair):
        S, T = small_pair
        task = TransferTask(S, T, 4, FAST)
        assert task.target.labels.shape[1] == 3
        assert task.target.dropout_week.max() <= 4
        assert slice_for_week(task.target, 4)[1] is None
        # the caller's cohort is untouched
        assert T.labels.shape[1] == 9

    def test_features_identical_after_hiding(self, small_pair):
        S, T = small_pair
        task = TransferTask(S, T, 5, FAST)
        assert_array_equal(task.target_features(), slice_for_week(T, 5)[0])

    def test_validation(self, small_pair):
        S, T = small_pair
        with pytest.raises(ValueError):
            TransferTask(S, T, 1)
        with pytest.raises(ValueError):
            TransferTask(S, T, 10)


class TestMethods:
    def test_naive_deterministic_and_probabilities(self, small_pair):
        S, T = small_pair
        a = transfer.train_naive(TransferTask(S, T, 4, FAST))
        b = transfer.train_naive(TransferTask(S, T, 4, FAST))
        assert_array_equal(a.predictor.theta, b.predictor.theta)
        XT = slice_for_week(T, 4)[0]
        p = a.predict(XT)
        assert ((p >= 0) & (p <= 1)).all()
        one_by_one = np.concatenate([a.predict(XT[i:i + 1]) for i in range(len(XT))])
        assert_allclose(one_by_one, p, rtol=1e-12)
        with pytest.raises(ShapeError):
            a.predict(XT[:, :2])

    def test_uniform_weights_equal_naive(self, small_pair):
        S, _ = small_pair
        X, y, _ = slice_for_week(S, 3)
        a = transfer._train_lstm(X, y, FAST)
        b = transfer._train_lstm(X, y, FAST, weights=np.ones(len(y)))
        assert_array_equal(a.theta, b.theta)

    def test_instance_records_kmm(self, small_pair):
        S, T = small_pair
        p = transfer.train_instance(TransferTask(S, T, 3, FAST))
        assert {"kmm_sigma", "kmm_objective", "kmm_converged"} <= set(p.meta)

    def test_in_situ_windows(self, small_pair):
        S, T = small_pair
        p2 = transfer.train_in_situ(TransferTask(S, T, 2, FAST))
        assert p2.constant is not None and p2.meta["fallback"] == "constant"
        p3 = transfer.train_in_situ(TransferTask(S, T, 3, FAST))
        assert p3.window == 1 and p3.predictor.input_shape == (1, 13)
        cfg = MethodConfig(epochs=2, in_situ_window=2)
        p5 = transfer.train_in_situ(TransferTask(S, T, 5, cfg))
        assert p5.window == 2
        assert p5.predict(slice_for_week(T, 5)[0]).shape == (len(slice_for_week(T, 5)[0]),)
        with pytest.raises(ValueError):
            transfer.train_in_situ(TransferTask(S, T, 3, MethodConfig(epochs=1, in_situ_window=2)))

    def test_in_situ_ignores_source(self, small_pair):
        S, T = small_pair
        a = transfer.train_in_situ(TransferTask(S, T, 4, FAST))
        b = transfer.train_in_situ(TransferTask(T, T, 4, FAST))
        assert_array_equal(a.predictor.theta, b.predictor.theta)

    def test_passive_uses_six_components_per_week(self, small_pair):
        S, T = small_pair
        p = transfer.train_passive(TransferTask(S, T, 4, FAST))
        assert p.predictor.input_shape == (3, 6)
        assert p.representation == "AE+T-PCA"
        XT = slice_for_week(T, 4)[0]
        assert p.features(XT).shape == (len(XT), 3, 6)

    def test_active_trace_and_nan_guard(self, small_pair, monkeypatch):
        S, T = small_pair
        pred, trace = transfer.train_active(TransferTask(S, T, 3, FAST), return_trace=True)
        assert len(trace.total) == 2
        for t, p, r, c in zip(trace.total, trace.prediction, trace.reconstruction, trace.coral):
            assert_allclose(t, 0.008 * p + r + 1000 * c, rtol=1e-9)
        monkeypatch.setattr(transfer, "coral_loss", lambda a, b: (np.nan, 0 * a, 0 * b))
        with pytest.raises(TrainingDivergedError) as exc:
            transfer.train_active(TransferTask(S, T, 3, FAST))
        assert "coral" in exc.value.components and exc.value.epoch == 0

    def test_no_transfer_split(self):
        for n in (5, 99, 1000):
            train, test = transfer.no_transfer_split(n, MethodConfig())
            assert abs(len(train) - 4 * len(test)) <= 4 and len(train) + len(test) == n
        folds = [transfer.no_transfer_split(50, MethodConfig(), f, 5)[1] for f in range(5)]
        assert_array_equal(np.sort(np.concatenate(folds)), np.arange(50))

    def test_bundle_round_trip(self, small_pair, tmp_path):
        S, T = small_pair
        p = transfer.train_passive(TransferTask(S, T, 3, FAST))
        p.save(tmp_path / "m.json")
        q = WeeklyPredictor.load(tmp_path / "m.json")
        XT = slice_for_week(T, 3)[0]
        assert_array_equal(p.predict(XT), q.predict(XT))
        assert q.method == "passive" and q.week == 3


def test_permuted_labels_give_chance_auc():
    from dropout_transfer.synth import GeneratorConfig, generate_cohort
    aucs = []
    for seed in range(5):
        T = generate_cohort(GeneratorConfig(n_students=2000, seed=50 + seed))
        perm = np.random.default_rng(seed).permutation(T.n_students)
        T.dropout_week = T.dropout_week[perm]
        pred, test = transfer.train_no_transfer(T, 3, MethodConfig(epochs=5, seed=seed))
        X, y, _ = slice_for_week(T, 3)
        aucs.append(auc(pred.predict(X[test]), y[test]))
    assert 0.45 <= np.mean(aucs) <= 0.55
