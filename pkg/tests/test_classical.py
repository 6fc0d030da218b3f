import numpy as np
import pytest

from loadcast.classical import (
    ClassicalModelError,
    NearUnitRootWarning,
    SarimaxModel,
    SarimaxOrder,
    difference,
    integrate,
    nelder_mead,
    sarimax_fit,
    sarimax_forecast,
    sarimax_from_json,
    sarimax_to_json,
    seasonal_naive_forecast,
)
from loadcast.metrics import rmse
from loadcast.synth import regime_switching_series


def simulate_ar1(phi, n, sigma=1.0, seed=0, intercept=0.0):
    rng = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = intercept / (1 - phi)
    for t in range(1, n):
        x[t] = intercept + phi * x[t - 1] + sigma * rng.standard_normal()
    return x


class TestSeasonalNaive:
    def test_periodic_fixed_point(self):
        history = np.tile(np.arange(24.0), 10)
        forecast = seasonal_naive_forecast(history, period=24, horizon=24)
        assert rmse(np.arange(24.0), forecast) == 0.0

    def test_second_day_repeats_first(self):
        rng = np.random.default_rng(0)
        history = rng.uniform(0, 100, 72)
        forecast = seasonal_naive_forecast(history, period=24, horizon=48)
        np.testing.assert_array_equal(forecast[24:], forecast[:24])

    def test_one_step_is_last_period_value(self):
        history = np.arange(100.0)
        forecast = seasonal_naive_forecast(history, period=24, horizon=1)
        assert forecast[0] == history[-24]

    def test_short_history_errors(self):
        with pytest.raises(ClassicalModelError):
            seasonal_naive_forecast(np.ones(10), period=24, horizon=1)


class TestDifference:
    def test_linear_ramp(self):
        z, _ = difference([0.0, 1.0, 2.0, 3.0], d=1, D=0, s=1)
        assert z.tolist() == [1.0, 1.0, 1.0]

    def test_seasonal_cancellation(self):
        series = np.tile(np.arange(24.0), 6)
        z, _ = difference(series, d=0, D=1, s=24)
        assert (z == 0.0).all()

    def test_round_trip_integer_valued_exact(self):
        rng = np.random.default_rng(1)
        x = rng.integers(0, 5000, 2000).astype(float)
        z, state = difference(x, d=1, D=1, s=24)
        np.testing.assert_array_equal(integrate(z, state), x)

    def test_round_trip_continuous(self):
        rng = np.random.default_rng(2)
        x = rng.normal(0, 1000, 3000)
        z, state = difference(x, d=1, D=1, s=24)
        np.testing.assert_allclose(integrate(z, state), x, rtol=1e-9, atol=1e-9)

    def test_round_trip_deep_differencing(self):
        # each extra integration stage compounds float rounding drift
        rng = np.random.default_rng(2)
        x = rng.normal(0, 1000, 3000)
        z, state = difference(x, d=2, D=1, s=24)
        np.testing.assert_allclose(integrate(z, state), x, rtol=1e-5)

    def test_too_short(self):
        with pytest.raises(ClassicalModelError):
            difference(np.ones(24), d=1, D=1, s=24)


class TestNelderMead:
    def test_quadratic_minimum(self):
        x, f, _, converged = nelder_mead(lambda v: float((v[0] - 3) ** 2 + (v[1] + 1) ** 2),
                                         np.zeros(2))
        assert converged
        np.testing.assert_allclose(x, [3.0, -1.0], atol=1e-3)

    def test_best_objective_non_increasing(self):
        seen = []

        def func(v):
            val = float((v[0] - 1) ** 2 + v[1] ** 2 + (v[2] + 2) ** 2)
            seen.append(val)
            return val

        _, f_best, _, _ = nelder_mead(func, np.zeros(3))
        running = np.minimum.accumulate(seen)
        assert (np.diff(running) <= 0).all()
        assert f_best == running[-1]

    def test_iteration_cap(self):
        _, _, iters, converged = nelder_mead(
            lambda v: float(np.sum(v**2)), np.full(8, 100.0), max_iter=3
        )
        assert iters == 3 and not converged


class TestSarimaxFit:
    def test_ar1_consistency(self):
        x = simulate_ar1(0.7, 5000, seed=0)
        order = SarimaxOrder(p=1, d=0, q=0, P=0, D=0, Q=0, s=1)
        model = sarimax_fit(x, order=order)
        assert 0.6 <= model.ar[0] <= 0.8
        assert model.sigma2 == pytest.approx(1.0, rel=0.1)

    def test_white_noise_intercept_is_mean(self):
        rng = np.random.default_rng(3)
        x = rng.normal(5.0, 1.0, 4000)
        order = SarimaxOrder(p=0, d=0, q=0, P=0, D=0, Q=0, s=1)
        model = sarimax_fit(x, order=order)
        assert model.intercept == pytest.approx(np.mean(x), abs=2.0 / np.sqrt(len(x)))

    def test_perfect_exog_regressor(self):
        rng = np.random.default_rng(4)
        x = rng.normal(0, 10, 2000)
        order = SarimaxOrder(p=0, d=0, q=0, P=0, D=0, Q=0, s=1)
        model = sarimax_fit(x, exog=x.copy(), order=order)
        assert model.beta[0] == pytest.approx(1.0, abs=1e-3)
        assert model.sigma2 < 1e-4

    def test_ma1_recovery(self):
        rng = np.random.default_rng(5)
        eps = rng.standard_normal(6000)
        x = eps[1:] + 0.6 * eps[:-1]
        order = SarimaxOrder(p=0, d=0, q=1, P=0, D=0, Q=0, s=1)
        model = sarimax_fit(x, order=order)
        assert model.ma[0] == pytest.approx(0.6, abs=0.1)

    def test_too_short_after_differencing(self):
        order = SarimaxOrder(p=1, d=1, q=1, P=1, D=1, Q=0, s=24)
        with pytest.raises(ClassicalModelError, match="10 x"):
            sarimax_fit(np.ones(50), order=order)

    def test_near_unit_root_warning(self):
        x = np.cumsum(np.random.default_rng(6).standard_normal(3000))  # random walk
        order = SarimaxOrder(p=1, d=0, q=0, P=0, D=0, Q=0, s=1)
        with pytest.warns(NearUnitRootWarning):
            sarimax_fit(x, order=order)

    def test_serialization_round_trip(self):
        x = simulate_ar1(0.5, 1500, seed=7)
        order = SarimaxOrder(p=1, d=1, q=1, P=0, D=0, Q=0, s=1)
        model = sarimax_fit(x, order=order)
        clone = sarimax_from_json(sarimax_to_json(model))
        np.testing.assert_array_equal(clone.ar, model.ar)
        np.testing.assert_array_equal(clone.w_tail, model.w_tail)
        fc_a = sarimax_forecast(model, 12)
        fc_b = sarimax_forecast(clone, 12)
        np.testing.assert_array_equal(fc_a, fc_b)


def ar1_model(phi, last_value):
    order = SarimaxOrder(p=1, d=0, q=0, P=0, D=0, Q=0, s=1)
    return SarimaxModel(
        order=order, ar=np.array([phi]), ma=np.empty(0), sar=np.empty(0), sma=np.empty(0),
        beta=np.empty(0), intercept=0.0, sigma2=1.0, exog_names=(),
        w_tail=np.array([last_value]), eps_tail=np.array([0.0]),
        endog_tail=np.array([last_value]), exog_tail=np.empty((0, 0)),
    )


class TestSarimaxForecast:
    def test_pure_ar1_closed_form(self):
        model = ar1_model(0.5, 8.0)
        np.testing.assert_allclose(sarimax_forecast(model, 3), [4.0, 2.0, 1.0])

    def test_all_zero_coefficients_constant_intercept(self):
        order = SarimaxOrder(p=0, d=0, q=0, P=0, D=0, Q=0, s=1)
        model = SarimaxModel(
            order=order, ar=np.empty(0), ma=np.empty(0), sar=np.empty(0), sma=np.empty(0),
            beta=np.empty(0), intercept=7.5, sigma2=1.0, exog_names=(),
            w_tail=np.array([0.0]), eps_tail=np.array([0.0]),
            endog_tail=np.array([3.0]), exog_tail=np.empty((0, 0)),
        )
        np.testing.assert_array_equal(sarimax_forecast(model, 4), np.full(4, 7.5))

    def test_flat_continuation_under_d1(self):
        order = SarimaxOrder(p=0, d=1, q=0, P=0, D=0, Q=0, s=1)
        model = SarimaxModel(
            order=order, ar=np.empty(0), ma=np.empty(0), sar=np.empty(0), sma=np.empty(0),
            beta=np.empty(0), intercept=0.0, sigma2=1.0, exog_names=(),
            w_tail=np.array([0.0]), eps_tail=np.array([0.0]),
            endog_tail=np.array([42.0]), exog_tail=np.empty((0, 0)),
        )
        np.testing.assert_array_equal(sarimax_forecast(model, 5), np.full(5, 42.0))

    def test_missing_exog_future_errors(self):
        order = SarimaxOrder(p=0, d=0, q=0, P=0, D=0, Q=0, s=1)
        model = SarimaxModel(
            order=order, ar=np.empty(0), ma=np.empty(0), sar=np.empty(0), sma=np.empty(0),
            beta=np.array([2.0]), intercept=0.0, sigma2=1.0, exog_names=("hour",),
            w_tail=np.array([0.0]), eps_tail=np.array([0.0]),
            endog_tail=np.array([1.0]), exog_tail=np.zeros((1, 1)),
        )
        with pytest.raises(ClassicalModelError, match="exog_future"):
            sarimax_forecast(model, 2)

    def test_forecast_fit_round_trip_on_seasonal_series(self):
        series = np.tile(np.arange(24.0) * 10, 40) + 100
        order = SarimaxOrder(p=1, d=0, q=0, P=0, D=1, Q=0, s=24)
        model = sarimax_fit(series, order=order)
        forecast = sarimax_forecast(model, 48)
        # a perfectly periodic series forecasts its own next cycles
        np.testing.assert_allclose(forecast, np.concatenate([series[:24], series[:24]]), atol=1e-6)


class TestQualitativeOrdering:
    def test_sarimax_worse_than_seasonal_naive_on_regime_switch(self):
        series = regime_switching_series(8 * 168, noise=0.0)
        values = series.channel(0)
        n_train = int(len(values) * 0.8)
        train, test = values[:n_train], values[n_train:]

        naive = np.concatenate([train[-24:], test])[: len(test)]
        naive_rmse = rmse(test, naive)

        order = SarimaxOrder(p=1, d=1, q=1, P=1, D=1, Q=0, s=24)
        model = sarimax_fit(train[-720:], order=order)
        sarimax_pred = sarimax_forecast(model, len(test))
        assert rmse(test, sarimax_pred) > naive_rmse
