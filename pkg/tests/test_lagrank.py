"""Lag scoring and rank aggregation tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demandgrid.errors import DataError
from demandgrid.lagrank import (
    LagMetrics,
    compute_lag_metrics,
    lag_metrics,
    pearson_masked,
    rank_lags,
    rank_metrics,
    read_ranking,
    top_k,
    write_ranking,
)


def metrics_row(lag, same=0.5, cross=0.4, mae=1.0, var=0.1):
    return LagMetrics(
        lag=lag,
        same_corr=same,
        cross_corr=cross,
        mae=mae,
        abs_diff=mae * 10,
        mae_var=var,
        n_valid_same=10,
        n_valid_cross=10,
    )


class TestPearson:
    def test_matches_corrcoef(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.normal(size=20)
            b = rng.normal(size=20)
            got = pearson_masked(a, b)
            want = np.corrcoef(a, b)[0, 1]
            assert got == pytest.approx(want, abs=1e-12)

    def test_perfect_and_inverse(self):
        a = np.array([1.0, 2.0, 3.0])
        assert pearson_masked(a, 2 * a + 5) == pytest.approx(1.0)
        assert pearson_masked(a, -a) == pytest.approx(-1.0)

    def test_constant_input_undefined(self):
        assert pearson_masked([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) is None
        assert pearson_masked([1.0, 2.0], [7.0, 7.0]) is None

    def test_too_short(self):
        with pytest.raises(DataError):
            pearson_masked([1.0], [2.0])
        with pytest.raises(DataError):
            pearson_masked([1.0, 2.0], [1.0, 2.0, 3.0])


def planted_series(period=6, T=120, k=8, seed=3, noise=0.0):
    """Each hour's image repeats every `period` hours, optionally noised."""
    rng = np.random.default_rng(seed)
    patterns = rng.uniform(1, 10, size=(period, k))
    idx = np.arange(T) % period
    p = patterns[idx] + noise * rng.normal(size=(T, k))
    d = patterns[(idx + 2) % period] + noise * rng.normal(size=(T, k))
    return p, d


class TestLagMetrics:
    def test_exact_period_scores_perfectly(self):
        p, d = planted_series(period=6)
        ts = np.arange(12, 120)
        m = lag_metrics(p, d, ts, 6)
        assert m.same_corr == pytest.approx(1.0)
        assert m.mae == pytest.approx(0.0, abs=1e-12)
        assert m.mae_var == pytest.approx(0.0, abs=1e-12)

    def test_mae_hand_computed(self):
        p = np.array([[0.0, 0.0], [2.0, 4.0], [3.0, 1.0]])
        d = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 1.0]])
        m = lag_metrics(p, d, [2], 1)
        # pickup |3-2| + |1-4| = 4; dropoff |5-1| + |1-1| = 4; over 2*2 cells
        assert m.mae == pytest.approx(8 / 4)
        assert m.abs_diff == pytest.approx(8.0)

    def test_abs_diff_is_scaled_mae(self):
        p, d = planted_series(noise=0.5)
        m = lag_metrics(p, d, np.arange(10, 120), 3)
        assert m.abs_diff == pytest.approx(m.mae * 2 * p.shape[1])

    def test_constant_frame_drops_from_correlation(self):
        p, d = planted_series(period=4, T=40, k=5, noise=0.1)
        p[9] = 3.0  # constant image: correlation undefined there
        ts = [8, 9, 10]
        m = lag_metrics(p, d, ts, 4)
        assert m.n_valid_same == 2 * 3 - 1
        assert not np.isnan(m.same_corr)

    def test_history_guard(self):
        p, d = planted_series()
        with pytest.raises(DataError, match="lacks history"):
            compute_lag_metrics(p, d, [4], [5])

    def test_sample_beyond_series(self):
        p, d = planted_series(T=50)
        with pytest.raises(DataError):
            compute_lag_metrics(p, d, [50], [5])

    def test_sample_order_invariance(self):
        p, d = planted_series(noise=0.3)
        ts = np.arange(10, 120)
        rng = np.random.default_rng(1)
        shuffled = rng.permutation(ts)
        a = lag_metrics(p, d, ts, 7)
        b = lag_metrics(p, d, shuffled, 7)
        assert a.same_corr == pytest.approx(b.same_corr)
        assert a.mae == pytest.approx(b.mae)
        assert a.mae_var == pytest.approx(b.mae_var)

    def test_shift_leaves_scores_unchanged(self):
        p, d = planted_series(noise=0.3)
        ts = np.arange(10, 120)
        a = lag_metrics(p, d, ts, 7)
        b = lag_metrics(p + 100.0, d + 100.0, ts, 7)
        assert b.same_corr == pytest.approx(a.same_corr, abs=1e-9)
        assert b.mae == pytest.approx(a.mae, abs=1e-9)


class TestRanking:
    def test_planted_period_ranks_first(self):
        p, d = planted_series(period=6, noise=0.2)
        ranking = rank_lags(p, d, np.arange(12, 120), lags=range(1, 13))
        assert ranking[0].lag in (6, 12)
        top = top_k(ranking, 2)
        assert top == [6, 12]

    def test_rank_positions_are_a_permutation(self):
        p, d = planted_series(noise=0.4)
        ranking = rank_lags(p, d, np.arange(12, 120), lags=range(1, 13))
        finals = sorted(r.rank_final for r in ranking)
        assert finals == list(range(1, 13))

    def test_metric_ranks_hand_example(self):
        rows = [
            metrics_row(1, same=0.9, cross=0.8, mae=1.0),
            metrics_row(2, same=0.5, cross=0.6, mae=2.0),
            metrics_row(3, same=0.1, cross=0.4, mae=3.0),
        ]
        ranked = {r.lag: r for r in rank_metrics(rows)}
        assert ranked[1].rank_final == 1
        assert ranked[2].rank_final == 2
        assert ranked[3].rank_final == 3
        assert ranked[1].rank_avg == pytest.approx(1.0)

    def test_tied_scores_get_average_rank(self):
        rows = [
            metrics_row(1, same=0.5, cross=0.5, mae=1.0),
            metrics_row(2, same=0.5, cross=0.5, mae=1.0),
            metrics_row(3, same=0.5, cross=0.5, mae=1.0),
        ]
        ranked = rank_metrics(rows)
        assert all(r.rank_same == 2.0 for r in ranked)
        assert all(r.rank_avg == 2.0 for r in ranked)

    def test_tie_broken_by_error_variance(self):
        rows = [
            metrics_row(10, var=0.5),
            metrics_row(20, var=0.1),
        ]
        ranked = rank_metrics(rows)
        assert ranked[0].lag == 20 and ranked[0].rank_final == 1

    def test_tie_broken_by_smaller_lag_last(self):
        rows = [metrics_row(30, var=0.2), metrics_row(7, var=0.2)]
        ranked = rank_metrics(rows)
        assert ranked[0].lag == 7

    def test_nan_scores_rank_last(self):
        rows = [
            metrics_row(1, same=float("nan"), cross=float("nan"), mae=0.5),
            metrics_row(2, same=0.2, cross=0.2, mae=5.0),
        ]
        ranked = {r.lag: r for r in rank_metrics(rows)}
        assert ranked[1].rank_same == 2.0
        assert ranked[2].rank_same == 1.0

    def test_duplicate_lags_rejected(self):
        with pytest.raises(DataError):
            rank_metrics([metrics_row(1), metrics_row(1)])

    def test_top_k_ascending_presentation(self):
        rows = [
            metrics_row(168, same=0.95, mae=0.1, cross=0.9),
            metrics_row(24, same=0.90, mae=0.2, cross=0.8),
            metrics_row(7, same=0.1, mae=9.0, cross=0.1),
        ]
        ranked = rank_metrics(rows)
        assert top_k(ranked, 2) == [24, 168]
        with pytest.raises(DataError):
            top_k(ranked, 0)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        p, d = planted_series(noise=0.3)
        ranking = rank_lags(p, d, np.arange(12, 120), lags=range(1, 13))
        path = tmp_path / "ranking.csv"
        write_ranking(ranking, path)
        back = read_ranking(path)
        assert [r.lag for r in back] == [r.lag for r in ranking]
        assert [r.rank_final for r in back] == [r.rank_final for r in ranking]
        for a, b in zip(back, ranking):
            assert a.metrics.mae == pytest.approx(b.metrics.mae, rel=1e-9)

    def test_rejects_foreign_csv(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(DataError, match="ranking"):
            read_ranking(path)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 5000))
def test_scaling_preserves_order(seed):
    # positive rescaling of both channels preserves the final ordering
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 5, size=(60, 6))
    d = rng.uniform(0, 5, size=(60, 6))
    ts = np.arange(8, 60)
    a = rank_lags(p, d, ts, lags=range(1, 9))
    b = rank_lags(p * 3.5, d * 3.5, ts, lags=range(1, 9))
    assert [r.lag for r in a] == [r.lag for r in b]
