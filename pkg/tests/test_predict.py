"""Input assembly, linear fit, and masked metric tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demandgrid.errors import DataError
from demandgrid.mask import apply_mask
from demandgrid.predict import (
    LinearModel,
    build_input,
    compute_norm_factor,
    evaluate,
    evaluate_config,
    fit_linear,
    masked_metrics,
    persistence_forecast,
    predict,
    read_model,
    targets,
    write_model,
)


def oracle_metrics(pred_img, truth_img, mask, eps=1e-8):
    """Brute-force reference: explicit loops over channels and pixels."""
    cells = [(r, c) for r in range(mask.shape[0]) for c in range(mask.shape[1]) if mask[r, c]]
    n = 2 * len(cells)
    sse = sae = 0.0
    maxae = 0.0
    sst = 0.0
    for ch in range(2):
        mean_ch = sum(truth_img[ch, r, c] for r, c in cells) / len(cells)
        for r, c in cells:
            e = pred_img[ch, r, c] - truth_img[ch, r, c]
            sse += e * e
            sae += abs(e)
            maxae = max(maxae, abs(e))
            sst += (truth_img[ch, r, c] - mean_ch) ** 2
    return sse / n, sae / n, maxae, 1.0 - sse / (sst + eps)


class TestNormFactor:
    def test_max_over_both_channels(self):
        p = np.array([[1.0, 2.0], [3.0, 0.0]])
        d = np.array([[9.0, 0.0], [1.0, 1.0]])
        assert compute_norm_factor(p, d) == 9.0

    def test_upto_restricts_scan(self):
        p = np.array([[1.0, 2.0], [50.0, 0.0]])
        d = np.zeros((2, 2))
        assert compute_norm_factor(p, d, upto=0) == 2.0

    def test_zero_activity_rejected(self):
        with pytest.raises(DataError, match="zero"):
            compute_norm_factor(np.zeros((3, 2)), np.zeros((3, 2)))


class TestBuildInput:
    def setup_method(self):
        T, k = 10, 3
        self.p = np.arange(T * k, dtype=float).reshape(T, k)
        self.d = self.p + 100.0

    def test_channel_order_and_scaling(self):
        x = build_input(self.p, self.d, 5, [1, 3], norm_factor=2.0)
        assert x.shape == (4, 3)
        np.testing.assert_array_equal(x[0], self.p[4] / 2.0)
        np.testing.assert_array_equal(x[1], self.p[2] / 2.0)
        np.testing.assert_array_equal(x[2], self.d[4] / 2.0)
        np.testing.assert_array_equal(x[3], self.d[2] / 2.0)

    def test_history_guard(self):
        with pytest.raises(DataError):
            build_input(self.p, self.d, 2, [3], 1.0)

    def test_duplicate_lags(self):
        with pytest.raises(DataError):
            build_input(self.p, self.d, 5, [1, 1], 1.0)

    def test_targets_unscaled(self):
        y = targets(self.p, self.d, [4, 7])
        assert y.shape == (2, 2, 3)
        np.testing.assert_array_equal(y[0, 0], self.p[4])
        np.testing.assert_array_equal(y[1, 1], self.d[7])


def linear_world(T=80, k=6, seed=0):
    """Series where later frames follow an exact linear rule on lags 1 and 3."""
    rng = np.random.default_rng(seed)
    p = rng.uniform(1, 5, size=(T, k))
    d = rng.uniform(1, 5, size=(T, k))
    for t in range(10, T):
        p[t] = 0.7 * p[t - 1] + 0.2 * d[t - 3] + 1.0
        d[t] = 0.1 * p[t - 1] + 0.3 * d[t - 3] + 0.5
    return p, d


class TestFitPredict:
    def test_recovers_exact_linear_rule(self):
        p, d = linear_world()
        ts = np.arange(20, 60)
        model = fit_linear(p, d, ts, [1, 3], norm_factor=1.0, lam=0.0)
        eval_ts = np.arange(60, 80)
        preds = predict(model, p, d, eval_ts)
        truth = targets(p, d, eval_ts)
        np.testing.assert_allclose(preds, truth, atol=1e-8)
        # pickup channel weights: p lag 1 then p lag 3, d lag 1 then d lag 3, bias
        np.testing.assert_allclose(
            model.weights[0], [0.7, 0.0, 0.0, 0.2, 1.0], atol=1e-8
        )

    def test_norm_factor_rescales_weights_not_predictions(self):
        p, d = linear_world()
        ts = np.arange(20, 60)
        m1 = fit_linear(p, d, ts, [1, 3], norm_factor=1.0, lam=0.0)
        m2 = fit_linear(p, d, ts, [1, 3], norm_factor=4.0, lam=0.0)
        eval_ts = np.arange(60, 80)
        np.testing.assert_allclose(
            predict(m1, p, d, eval_ts), predict(m2, p, d, eval_ts), atol=1e-7
        )
        np.testing.assert_allclose(m2.weights[0][:4], m1.weights[0][:4] * 4.0, atol=1e-7)

    def test_singular_without_ridge(self):
        rng = np.random.default_rng(2)
        p = rng.uniform(0, 3, size=(30, 4))
        with pytest.raises(DataError, match="lam > 0"):
            fit_linear(p, p.copy(), np.arange(5, 25), [1, 2], 1.0, lam=0.0)
        fit_linear(p, p.copy(), np.arange(5, 25), [1, 2], 1.0, lam=1e-6)

    def test_ridge_shrinks_weights(self):
        rng = np.random.default_rng(3)
        p = rng.uniform(0, 3, size=(60, 5))
        d = rng.uniform(0, 3, size=(60, 5))
        ts = np.arange(10, 50)
        w0 = fit_linear(p, d, ts, [1, 2], 1.0, lam=0.0).weights
        w9 = fit_linear(p, d, ts, [1, 2], 1.0, lam=1e4).weights
        assert np.linalg.norm(w9[:, :-1]) < np.linalg.norm(w0[:, :-1])

    def test_negative_predictions_clamped(self):
        model = LinearModel(
            lags=(1,), norm_factor=1.0, lam=0.0,
            weights=np.array([[0.0, 0.0, -5.0], [0.0, 0.0, -5.0]]),
        )
        p = np.ones((4, 3))
        preds = predict(model, p, p, [2, 3])
        assert (preds == 0.0).all()

    def test_persistence(self):
        p, d = linear_world(T=30)
        preds = persistence_forecast(p, d, [10, 11], lag=3)
        np.testing.assert_array_equal(preds[0, 0], p[7])
        np.testing.assert_array_equal(preds[1, 1], d[8])
        with pytest.raises(DataError):
            persistence_forecast(p, d, [2], lag=3)


class TestMaskedMetrics:
    def test_hand_example(self):
        pred = np.array([[1.0, 2.0], [3.0, 4.0]])
        truth = np.array([[0.0, 2.0], [5.0, 1.0]])
        m = masked_metrics(pred, truth)
        # errors 1, 0, -2, 3 over 4 slots
        assert m.mse == pytest.approx((1 + 0 + 4 + 9) / 4)
        assert m.mae == pytest.approx((1 + 0 + 2 + 3) / 4)
        assert m.maxae == pytest.approx(3.0)
        # per-channel means 1 and 3: sst = 1+1+4+4 = 10
        assert m.r2 == pytest.approx(1 - 14 / (10 + 1e-8))

    def test_perfect_prediction(self):
        truth = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        m = masked_metrics(truth.copy(), truth)
        assert m.mse == 0.0 and m.mae == 0.0 and m.maxae == 0.0
        assert m.r2 == pytest.approx(1.0)

    def test_constant_truth_does_not_crash(self):
        truth = np.full((2, 4), 3.0)
        pred = truth + 1.0
        m = masked_metrics(pred, truth)
        assert m.mse == pytest.approx(1.0)
        assert m.r2 < 0  # eps keeps the ratio finite

    def test_random_images_match_bruteforce_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            pred = rng.uniform(0, 50, size=(2, 7, 5))
            truth = rng.uniform(0, 50, size=(2, 7, 5))
            mask = rng.integers(0, 2, size=(7, 5)).astype(np.uint8)
            if mask.sum() == 0:
                mask[rng.integers(0, 7), rng.integers(0, 5)] = 1
            m = masked_metrics(apply_mask(pred, mask), apply_mask(truth, mask))
            mse, mae, maxae, r2 = oracle_metrics(pred, truth, mask)
            assert abs(m.mse - mse) <= 1e-12 * max(1, abs(mse))
            assert abs(m.mae - mae) <= 1e-12 * max(1, abs(mae))
            assert abs(m.maxae - maxae) <= 1e-12 * max(1, abs(maxae))
            assert abs(m.r2 - r2) <= 1e-12 * max(1, abs(r2))

    def test_cell_permutation_invariance(self):
        rng = np.random.default_rng(5)
        pred = rng.uniform(0, 9, size=(2, 10))
        truth = rng.uniform(0, 9, size=(2, 10))
        perm = rng.permutation(10)
        a = masked_metrics(pred, truth)
        b = masked_metrics(pred[:, perm], truth[:, perm])
        assert a.mse == pytest.approx(b.mse)
        assert a.r2 == pytest.approx(b.r2)

    def test_shape_checks(self):
        with pytest.raises(DataError):
            masked_metrics(np.zeros((3, 4)), np.zeros((3, 4)))
        with pytest.raises(DataError):
            masked_metrics(np.zeros((2, 4)), np.zeros((2, 5)))


class TestEvaluate:
    def test_aggregate_is_mean_of_per_sample(self):
        rng = np.random.default_rng(6)
        pred = rng.uniform(0, 9, size=(5, 2, 7))
        truth = rng.uniform(0, 9, size=(5, 2, 7))
        res = evaluate(pred, truth)
        assert len(res.per_sample) == 5
        assert res.aggregate.mse == pytest.approx(
            np.mean([m.mse for m in res.per_sample])
        )
        assert res.sample_mse.shape == (5,)

    def test_evaluate_config_end_to_end(self):
        p, d = linear_world(T=100, seed=9)
        model, res = evaluate_config(
            p, d, [1, 3], train_ts=np.arange(20, 60), eval_ts=np.arange(70, 90),
            lam=0.0, norm_upto=-1,
        )
        assert model.norm_factor == pytest.approx(
            max(p[:60].max(), d[:60].max())
        )
        assert res.aggregate.mse == pytest.approx(0.0, abs=1e-10)
        assert res.aggregate.r2 == pytest.approx(1.0, abs=1e-6)


class TestModelPersistence:
    def test_roundtrip_exact(self, tmp_path):
        p, d = linear_world()
        model = fit_linear(p, d, np.arange(20, 60), [1, 3], 2.5, lam=1e-6)
        path = tmp_path / "model.csv"
        write_model(model, path)
        back = read_model(path)
        assert back.lags == model.lags
        assert back.norm_factor == model.norm_factor
        assert back.lam == model.lam
        np.testing.assert_array_equal(back.weights, model.weights)

    def test_missing_weight_detected(self, tmp_path):
        path = tmp_path / "model.csv"
        path.write_text(
            "row_type,name,channel,value\n"
            "meta,lags,,1\nmeta,norm_factor,,1.0\nmeta,lam,,0.0\n"
            "weight,p_lag_1,pickup,0.5\n"
        )
        with pytest.raises(DataError, match="missing weight"):
            read_model(path)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 9999))
def test_metric_symmetry_property(seed):
    # mse/mae/maxae are symmetric in prediction and truth
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 10, size=(2, 6))
    b = rng.uniform(0, 10, size=(2, 6))
    m1 = masked_metrics(a, b)
    m2 = masked_metrics(b, a)
    assert m1.mse == pytest.approx(m2.mse)
    assert m1.mae == pytest.approx(m2.mae)
    assert m1.maxae == pytest.approx(m2.maxae)
