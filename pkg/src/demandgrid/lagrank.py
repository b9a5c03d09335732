"""Historical lag scoring and rank aggregation.

For every candidate lag tau, each sample hour t is compared with hour t-tau
over the active cells: same-channel and cross-channel Pearson correlation,
plus mean absolute difference. Per-lag aggregates are ranked per metric
(average ranks on ties) and the mean rank across metrics orders the lags.
Final ties break toward the lag with steadier per-sample error, then the
smaller lag.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "LagMetrics",
    "RankedLag",
    "pearson_masked",
    "lag_metrics",
    "compute_lag_metrics",
    "rank_metrics",
    "rank_lags",
    "top_k",
    "write_ranking",
    "read_ranking",
]

DEFAULT_LAGS = range(1, 505)

# metric names usable in the rank aggregation
RANK_METRICS = ("same_corr", "cross_corr", "mae")


@dataclass(frozen=True)
class LagMetrics:
    lag: int
    same_corr: float  # mean same-channel correlation, pairwise deletion
    cross_corr: float  # mean cross-channel correlation, pairwise deletion
    mae: float  # mean per-sample masked MAE over both channels
    abs_diff: float  # mae restated as a per-sample pixel sum, diagnostic
    mae_var: float  # population variance of per-sample MAE, tie-breaker
    n_valid_same: int  # defined correlations out of 2 * n_samples
    n_valid_cross: int


@dataclass(frozen=True)
class RankedLag:
    metrics: LagMetrics
    rank_same: float
    rank_cross: float
    rank_mae: float
    rank_avg: float
    rank_final: int  # 1 = best

    @property
    def lag(self) -> int:
        return self.metrics.lag


def _row_corr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson correlation of paired rows; NaN where either row is constant."""
    const = (a.max(axis=1) == a.min(axis=1)) | (b.max(axis=1) == b.min(axis=1))
    a0 = a - a.mean(axis=1, keepdims=True)
    b0 = b - b.mean(axis=1, keepdims=True)
    num = (a0 * b0).sum(axis=1)
    den = np.sqrt((a0 * a0).sum(axis=1) * (b0 * b0).sum(axis=1))
    out = np.full(a.shape[0], np.nan)
    np.divide(num, den, out=out, where=~const & (den > 0))
    return out


def pearson_masked(a: np.ndarray, b: np.ndarray) -> float | None:
    """Correlation of two masked vectors; None when either is constant."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DataError("pearson_masked: length mismatch")
    if a.size < 2:
        raise DataError("pearson_masked: need at least 2 active cells")
    r = _row_corr(a[None, :], b[None, :])[0]
    return None if np.isnan(r) else float(r)


def _check_inputs(p, d, sample_ts, lags) -> tuple[np.ndarray, np.ndarray]:
    if p.shape != d.shape:
        raise DataError("pickup and dropoff series must share a shape")
    if p.ndim != 2 or p.shape[1] < 2:
        raise DataError("series must be (T, n_cells) with at least 2 active cells")
    ts = np.asarray(list(sample_ts), dtype=np.int64)
    lag_arr = np.asarray(list(lags), dtype=np.int64)
    if ts.size == 0 or lag_arr.size == 0:
        raise DataError("need at least one sample and one lag")
    if lag_arr.min() < 1:
        raise DataError("lags must be >= 1")
    if ts.min() - lag_arr.max() < 0:
        raise DataError(
            f"sample hour {ts.min()} lacks history for lag {lag_arr.max()}"
        )
    if ts.max() >= p.shape[0]:
        raise DataError("sample hour beyond end of series")
    return ts, lag_arr


def compute_lag_metrics(
    p: np.ndarray,
    d: np.ndarray,
    sample_ts: Sequence[int],
    lags: Sequence[int] = DEFAULT_LAGS,
) -> list[LagMetrics]:
    """Per-lag aggregates over the sample hours."""
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    ts, lag_arr = _check_inputs(p, d, sample_ts, lags)
    k = p.shape[1]
    pt, dt = p[ts], d[ts]
    out = []
    for lag in lag_arr:
        pl, dl = p[ts - lag], d[ts - lag]
        same = np.concatenate([_row_corr(pt, pl), _row_corr(dt, dl)])
        cross = np.concatenate([_row_corr(pt, dl), _row_corr(dt, pl)])
        per_sample_mae = (
            np.abs(pt - pl).sum(axis=1) + np.abs(dt - dl).sum(axis=1)
        ) / (2 * k)
        mae = float(per_sample_mae.mean())
        out.append(
            LagMetrics(
                lag=int(lag),
                same_corr=float(np.nanmean(same)) if (~np.isnan(same)).any() else float("nan"),
                cross_corr=float(np.nanmean(cross)) if (~np.isnan(cross)).any() else float("nan"),
                mae=mae,
                abs_diff=float(mae * 2 * k),
                mae_var=float(per_sample_mae.var()),
                n_valid_same=int((~np.isnan(same)).sum()),
                n_valid_cross=int((~np.isnan(cross)).sum()),
            )
        )
    return out


def lag_metrics(
    p: np.ndarray, d: np.ndarray, sample_ts: Sequence[int], lag: int
) -> LagMetrics:
    return compute_lag_metrics(p, d, sample_ts, [lag])[0]


def _average_ranks(scores: np.ndarray, descending: bool) -> np.ndarray:
    """1-based ranks, average on ties; NaN scores rank behind everything."""
    key = -scores if descending else scores.copy()
    key = np.where(np.isnan(key), np.inf, key)
    order = np.argsort(key, kind="stable")
    ranks = np.empty(len(key), dtype=np.float64)
    sorted_key = key[order]
    i = 0
    while i < len(key):
        j = i
        while j + 1 < len(key) and sorted_key[j + 1] == sorted_key[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def rank_metrics(
    metrics: Sequence[LagMetrics], use: Sequence[str] = RANK_METRICS
) -> list[RankedLag]:
    """Aggregate metric ranks; break rank ties by error variance, then lag.

    use selects which metrics enter the average (all three by default);
    per-metric ranks are reported for every metric regardless.
    """
    if not metrics:
        raise DataError("rank_metrics: no lags")
    if not use or len(set(use)) != len(use):
        raise ConfigError("rank_metrics: use must name distinct metrics")
    unknown = set(use) - set(RANK_METRICS)
    if unknown:
        raise ConfigError(f"rank_metrics: unknown metrics {sorted(unknown)}")
    lags = np.array([m.lag for m in metrics])
    if len(np.unique(lags)) != len(lags):
        raise DataError("rank_metrics: duplicate lags")
    r_same = _average_ranks(np.array([m.same_corr for m in metrics]), descending=True)
    r_cross = _average_ranks(np.array([m.cross_corr for m in metrics]), descending=True)
    r_mae = _average_ranks(np.array([m.mae for m in metrics]), descending=False)
    by_name = {"same_corr": r_same, "cross_corr": r_cross, "mae": r_mae}
    r_avg = np.mean([by_name[name] for name in use], axis=0)
    keys = sorted(
        range(len(metrics)),
        key=lambda i: (r_avg[i], metrics[i].mae_var, metrics[i].lag),
    )
    final = np.empty(len(metrics), dtype=np.int64)
    for pos, i in enumerate(keys):
        final[i] = pos + 1
    ranked = [
        RankedLag(
            metrics=m,
            rank_same=float(r_same[i]),
            rank_cross=float(r_cross[i]),
            rank_mae=float(r_mae[i]),
            rank_avg=float(r_avg[i]),
            rank_final=int(final[i]),
        )
        for i, m in enumerate(metrics)
    ]
    ranked.sort(key=lambda r: r.rank_final)
    return ranked


def rank_lags(
    p: np.ndarray,
    d: np.ndarray,
    sample_ts: Sequence[int],
    lags: Sequence[int] = DEFAULT_LAGS,
    use: Sequence[str] = RANK_METRICS,
) -> list[RankedLag]:
    return rank_metrics(compute_lag_metrics(p, d, sample_ts, lags), use)


def top_k(ranking: Sequence[RankedLag], k: int) -> list[int]:
    """The k best lags, presented in ascending lag order."""
    if k < 1:
        raise DataError("top_k: k must be >= 1")
    best = sorted(ranking, key=lambda r: r.rank_final)[:k]
    return sorted(r.lag for r in best)


_COLUMNS = [
    "lag",
    "same_corr",
    "cross_corr",
    "mae",
    "abs_diff",
    "mae_var",
    "n_valid_same",
    "n_valid_cross",
    "rank_same",
    "rank_cross",
    "rank_mae",
    "rank_avg",
    "rank_final",
]


def write_ranking(ranking: Sequence[RankedLag], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_COLUMNS)
        for r in sorted(ranking, key=lambda r: r.rank_final):
            m = r.metrics
            w.writerow(
                [
                    m.lag,
                    f"{m.same_corr:.10g}",
                    f"{m.cross_corr:.10g}",
                    f"{m.mae:.10g}",
                    f"{m.abs_diff:.10g}",
                    f"{m.mae_var:.10g}",
                    m.n_valid_same,
                    m.n_valid_cross,
                    f"{r.rank_same:.10g}",
                    f"{r.rank_cross:.10g}",
                    f"{r.rank_mae:.10g}",
                    f"{r.rank_avg:.10g}",
                    r.rank_final,
                ]
            )


def read_ranking(path: str | Path) -> list[RankedLag]:
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(_COLUMNS) - set(reader.fieldnames):
            raise DataError(f"{path}: not a lag ranking file")
        for row in reader:
            m = LagMetrics(
                lag=int(row["lag"]),
                same_corr=float(row["same_corr"]),
                cross_corr=float(row["cross_corr"]),
                mae=float(row["mae"]),
                abs_diff=float(row["abs_diff"]),
                mae_var=float(row["mae_var"]),
                n_valid_same=int(row["n_valid_same"]),
                n_valid_cross=int(row["n_valid_cross"]),
            )
            out.append(
                RankedLag(
                    metrics=m,
                    rank_same=float(row["rank_same"]),
                    rank_cross=float(row["rank_cross"]),
                    rank_mae=float(row["rank_mae"]),
                    rank_avg=float(row["rank_avg"]),
                    rank_final=int(row["rank_final"]),
                )
            )
    if not out:
        raise DataError(f"{path}: empty ranking")
    return sorted(out, key=lambda r: r.rank_final)
