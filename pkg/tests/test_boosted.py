import json

import numpy as np
import pytest

from loadcast.boosted import (
    BoostingError,
    GbdtParams,
    PinballLoss,
    SquaredLoss,
    fit_tree,
    gbdt_fit,
    gbdt_from_json,
    gbdt_predict,
    gbdt_predict_quantiles,
    gbdt_to_json,
    loss_gradients,
)
from loadcast.features import FeatureMatrix


def brute_force_best_gain(X, grad, hess, min_samples_leaf=1):
    """Independent oracle: enumerate every (feature, midpoint) split."""
    G, H = grad.sum(), hess.sum()
    parent = G * G / H
    best = 0.0
    for f in range(X.shape[1]):
        for thr in np.unique(X[:, f]):
            left = X[:, f] <= thr
            if left.all() or not left.any():
                continue
            if left.sum() < min_samples_leaf or (~left).sum() < min_samples_leaf:
                continue
            gl, hl = grad[left].sum(), hess[left].sum()
            gr, hr = G - gl, H - hl
            best = max(best, gl * gl / hl + gr * gr / hr - parent)
    return best


class TestLossGradients:
    def test_squared(self):
        g, h = loss_gradients(SquaredLoss(), np.array([3.0]), np.array([5.0]))
        assert g[0] == 2.0 and h[0] == 1.0

    def test_pinball_under_prediction(self):
        g, h = loss_gradients(PinballLoss(0.9), np.array([10.0]), np.array([8.0]))
        assert g[0] == pytest.approx(-0.9) and h[0] == 1.0

    def test_pinball_median_is_half_sign(self):
        y = np.array([1.0, 5.0, 5.0])
        pred = np.array([3.0, 3.0, 5.0])
        g, _ = loss_gradients(PinballLoss(0.5), y, pred)
        expected = 0.5 * np.where(pred >= y, 1.0, -1.0)
        np.testing.assert_allclose(g, expected)


class TestFitTree:
    def test_root_splits_on_separating_feature(self):
        X = np.array([[1.0, 9.0], [2.0, 7.0], [8.0, 9.0], [9.0, 7.0]])
        grad = np.array([-1.0, -1.0, 1.0, 1.0])  # perfectly separated by x0 < 5
        hess = np.ones(4)
        tree = fit_tree(X, grad, hess, max_depth=1)
        assert tree.feature[0] == 0
        assert tree.threshold[0] == 5.0  # midpoint of 2 and 8
        # hand-computed gain: GL=-2, GR=2 -> 4/2 + 4/2 - 0 = 4
        oracle = brute_force_best_gain(X, grad, hess)
        assert oracle == pytest.approx(4.0)

    def test_constant_gradient_single_leaf(self):
        X = np.random.default_rng(0).uniform(size=(50, 3))
        grad = np.full(50, 0.7)
        tree = fit_tree(X, grad, np.ones(50), max_depth=4)
        assert tree.n_leaves == 1
        assert tree.value[0] == pytest.approx(-0.7)

    def test_xor_gradients_have_no_axis_split(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        grad = np.array([1.0, -1.0, -1.0, 1.0])
        hess = np.ones(4)
        assert brute_force_best_gain(X, grad, hess) == pytest.approx(0.0)
        tree = fit_tree(X, grad, hess, max_depth=1)
        assert tree.n_leaves == 1

    def test_chosen_split_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            X = rng.uniform(size=(40, 4))
            grad = rng.standard_normal(40)
            hess = np.ones(40)
            tree = fit_tree(X, grad, hess, max_depth=1, min_samples_leaf=2)
            oracle = brute_force_best_gain(X, grad, hess, min_samples_leaf=2)
            if tree.n_leaves == 1:
                assert oracle <= 1e-9
                continue
            f, thr = tree.feature[0], tree.threshold[0]
            left = X[:, f] <= thr
            gl, gr = grad[left].sum(), grad[~left].sum()
            hl, hr = hess[left].sum(), hess[~left].sum()
            gain = gl**2 / hl + gr**2 / hr - grad.sum() ** 2 / hess.sum()
            assert gain == pytest.approx(oracle, rel=1e-9)

    def test_depth_limit_respected(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(size=(200, 2))
        grad = rng.standard_normal(200)
        tree = fit_tree(X, grad, np.ones(200), max_depth=3)
        assert tree.n_leaves <= 8

    def test_min_rows_precondition(self):
        with pytest.raises(BoostingError):
            fit_tree(np.ones((3, 1)), np.ones(3), np.ones(3), max_depth=1, min_samples_leaf=2)


def deterministic_dataset(n=512, seed=0):
    rng = np.random.default_rng(seed)
    x = np.tile(np.linspace(0.0, 1.0, 64), n // 64)
    rng.shuffle(x)
    X = x[:, None]
    y = np.sin(3.0 * x) + x  # deterministic function of the single feature
    return X, y


class TestGbdtFit:
    def test_interpolates_deterministic_function(self):
        X, y = deterministic_dataset()
        model = gbdt_fit(
            X[:400], y[:400], X[400:], y[400:],
            params=GbdtParams(n_estimators=200, early_stopping_rounds=200, max_depth=6),
        )
        assert min(model.val_history) < 1e-3

    def test_pure_noise_stops_early(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(size=(300, 3))
        y = rng.standard_normal(300)
        Xv = rng.uniform(size=(150, 3))
        yv = rng.standard_normal(150)
        model = gbdt_fit(X, y, Xv, yv, params=GbdtParams(n_estimators=500, max_depth=3))
        assert model.best_iteration < 50
        train_rmse = SquaredLoss().metric(y, gbdt_predict(model, X))
        val_rmse = SquaredLoss().metric(yv, gbdt_predict(model, Xv))
        # trees memorise train noise but cannot explain validation noise
        assert val_rmse / np.std(yv) >= train_rmse / np.std(y)

    def test_quantile_converges_to_empirical_quantile(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal(4000)
        X = np.ones((4000, 1))  # constant features: no split possible
        model = gbdt_fit(
            X[:3000], y[:3000], X[3000:], y[3000:],
            params=GbdtParams(n_estimators=300, early_stopping_rounds=20),
            loss=PinballLoss(0.95),
        )
        pred = gbdt_predict(model, X[:1])[0]
        oracle = np.quantile(y[:3000], 0.95)  # brute-force empirical quantile
        assert pred == pytest.approx(oracle, abs=0.05)
        assert pred == pytest.approx(1.645, abs=0.08)

    def test_best_iteration_is_argmin(self):
        X, y = deterministic_dataset(seed=5)
        rng = np.random.default_rng(5)
        yn = y + 0.3 * rng.standard_normal(len(y))
        model = gbdt_fit(
            X[:400], yn[:400], X[400:], yn[400:],
            params=GbdtParams(n_estimators=120, max_depth=2, early_stopping_rounds=15),
        )
        assert model.best_iteration == int(np.argmin(model.val_history))

    def test_training_loss_weakly_decreases_squared(self):
        X, y = deterministic_dataset(seed=6)
        model = gbdt_fit(
            X, y, X, y, params=GbdtParams(n_estimators=40, early_stopping_rounds=40, max_depth=3)
        )
        # validation == training here, so the history is the training RMSE
        diffs = np.diff(model.val_history)
        assert (diffs <= 1e-12).all()

    def test_empty_inputs(self):
        with pytest.raises(BoostingError):
            gbdt_fit(np.empty((0, 1)), np.empty(0), np.ones((1, 1)), np.ones(1))


class TestPredict:
    def test_zero_trees_predicts_base(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        X = np.ones((4, 1))
        model = gbdt_fit(X, y, X, y, params=GbdtParams(n_estimators=0))
        np.testing.assert_array_equal(gbdt_predict(model, X), np.full(4, 2.5))

    def test_single_tree_linear_composition(self):
        # one tree, all rows land in a single leaf of value -2
        y = np.full(8, 2.0)
        base_plus = np.full(8, 4.0)  # gradient = pred - y = 2 everywhere -> leaf -2
        X = np.ones((8, 1))
        model = gbdt_fit(X, base_plus, X, base_plus, params=GbdtParams(n_estimators=1))
        del y
        pred = gbdt_predict(model, X)
        assert model.base_score == 4.0
        np.testing.assert_allclose(pred, 4.0 + 0.05 * model.trees[0].value[0])

    def test_feature_order_mismatch(self):
        X = np.random.default_rng(0).uniform(size=(30, 2))
        y = X[:, 0]
        model = gbdt_fit(X, y, X, y, params=GbdtParams(n_estimators=5),
                         feature_order=("a", "b"))
        matrix = FeatureMatrix(tuple(range(3)), np.ones((3, 2)), ("b", "a"), np.ones(3))
        with pytest.raises(BoostingError, match="feature order"):
            gbdt_predict(model, matrix)

    def test_quantile_prediction_monotone(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(size=(500, 2))
        y = X[:, 0] * 10 + rng.standard_normal(500)
        models = {}
        for tau in (0.05, 0.5, 0.95):
            models[tau] = gbdt_fit(
                X[:400], y[:400], X[400:], y[400:],
                params=GbdtParams(n_estimators=50, max_depth=3),
                loss=PinballLoss(tau),
            )
        dist = gbdt_predict_quantiles(models, X[400:])
        assert (dist.q05 <= dist.q50).all()
        assert (dist.q50 <= dist.q95).all()

    def test_quantile_set_validated(self):
        with pytest.raises(BoostingError, match="quantile"):
            gbdt_predict_quantiles({0.1: None, 0.5: None, 0.9: None}, np.ones((1, 1)))


class TestSerialization:
    def test_round_trip_identical_json(self):
        X, y = deterministic_dataset(seed=8)
        model = gbdt_fit(
            X[:400], y[:400], X[400:], y[400:],
            params=GbdtParams(n_estimators=20, early_stopping_rounds=20, max_depth=3),
        )
        text = gbdt_to_json(model)
        clone = gbdt_from_json(text)
        assert gbdt_to_json(clone) == text
        np.testing.assert_array_equal(gbdt_predict(clone, X), gbdt_predict(model, X))

    def test_pinball_loss_survives_round_trip(self):
        X = np.ones((40, 1))
        y = np.arange(40.0)
        model = gbdt_fit(X, y, X, y, params=GbdtParams(n_estimators=3),
                         loss=PinballLoss(0.95))
        clone = gbdt_from_json(gbdt_to_json(model))
        assert isinstance(clone.loss, PinballLoss)
        assert clone.loss.tau == 0.95
        doc = json.loads(gbdt_to_json(model))
        assert doc["loss"] == {"name": "pinball", "tau": 0.95}
