"""Input assembly, linear forecasting, and masked evaluation metrics.

A temporal input configuration is a list of lags. The input for target hour
t stacks the pick-up images at t - tau for each lag, then the drop-off
images in the same lag order, every channel divided by a normalization
factor taken from training data. Targets stay in raw counts. The forecaster
is a per-cell linear readout with weights shared across cells and hours,
fitted by ridge-regularized normal equations; predictions are clamped to be
non-negative. All metrics run over active cells only and are averaged
per sample first.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "LinearModel",
    "MetricSet",
    "EvalResult",
    "compute_norm_factor",
    "build_input",
    "targets",
    "fit_linear",
    "predict",
    "persistence_forecast",
    "masked_metrics",
    "evaluate",
    "evaluate_config",
    "write_model",
    "read_model",
]


@dataclass(frozen=True)
class LinearModel:
    lags: tuple[int, ...]
    norm_factor: float
    lam: float
    weights: np.ndarray  # (2, 2n+1); feature order p lags, d lags, bias last

    @property
    def n_features(self) -> int:
        return 2 * len(self.lags) + 1


@dataclass(frozen=True)
class MetricSet:
    mse: float
    mae: float
    maxae: float
    r2: float


@dataclass
class EvalResult:
    per_sample: list[MetricSet]
    aggregate: MetricSet

    @property
    def sample_mse(self) -> np.ndarray:
        return np.array([m.mse for m in self.per_sample])


def _check_series(p: np.ndarray, d: np.ndarray) -> None:
    if p.shape != d.shape or p.ndim != 2:
        raise DataError("series must be matching (T, n_cells) arrays")
    if p.shape[1] < 1:
        raise DataError("no active cells")


def _check_lags(lags: Sequence[int]) -> tuple[int, ...]:
    lag_t = tuple(int(x) for x in lags)
    if not lag_t:
        raise DataError("need at least one lag")
    if any(x < 1 for x in lag_t):
        raise DataError("lags must be >= 1")
    if len(set(lag_t)) != len(lag_t):
        raise DataError("duplicate lags in configuration")
    return lag_t


def compute_norm_factor(
    p: np.ndarray, d: np.ndarray, upto: int | None = None
) -> float:
    """Largest pixel count over both channels, by default over all hours.

    Passing upto restricts the scan to hours 0..upto, which keeps the factor
    blind to anything after the training block.
    """
    _check_series(p, d)
    sl = slice(None) if upto is None else slice(0, int(upto) + 1)
    m = max(float(p[sl].max(initial=0.0)), float(d[sl].max(initial=0.0)))
    if m <= 0:
        raise DataError("normalization factor is zero: no activity in range")
    return m


def build_input(
    p: np.ndarray,
    d: np.ndarray,
    t: int,
    lags: Sequence[int],
    norm_factor: float,
) -> np.ndarray:
    """(2n, n_cells) scaled input: pick-up lags first, then drop-off lags."""
    _check_series(p, d)
    lag_t = _check_lags(lags)
    if norm_factor <= 0:
        raise DataError("norm_factor must be positive")
    t = int(t)
    if t - max(lag_t) < 0 or t >= p.shape[0]:
        raise DataError(f"target hour {t} lacks history for lags {lag_t}")
    rows = [p[t - tau] for tau in lag_t] + [d[t - tau] for tau in lag_t]
    return np.stack(rows, axis=0) / norm_factor


def targets(p: np.ndarray, d: np.ndarray, ts: Sequence[int]) -> np.ndarray:
    """(S, 2, n_cells) raw-count targets: channel 0 pick-up, 1 drop-off."""
    _check_series(p, d)
    idx = np.asarray(list(ts), dtype=np.int64)
    if idx.size == 0:
        raise DataError("no target hours")
    if idx.min() < 0 or idx.max() >= p.shape[0]:
        raise DataError("target hour outside series")
    return np.stack([p[idx], d[idx]], axis=1)


def fit_linear(
    p: np.ndarray,
    d: np.ndarray,
    train_ts: Sequence[int],
    lags: Sequence[int],
    norm_factor: float,
    lam: float = 0.0,
) -> LinearModel:
    """Ridge fit of the per-cell linear readout via normal equations.

    The bias term is never penalized. A singular system with lam == 0 is
    reported as such; a small positive lam makes it solvable.
    """
    lag_t = _check_lags(lags)
    if lam < 0:
        raise DataError("lam must be >= 0")
    ts = np.asarray(list(train_ts), dtype=np.int64)
    if ts.size == 0:
        raise DataError("no training hours")
    nf = 2 * len(lag_t) + 1
    gram = np.zeros((nf, nf))
    rhs = np.zeros((nf, 2))
    for t in ts:
        x = build_input(p, d, int(t), lag_t, norm_factor)  # (2n, k)
        xb = np.vstack([x, np.ones((1, x.shape[1]))])  # (2n+1, k)
        gram += xb @ xb.T
        y = np.stack([p[t], d[t]], axis=0)  # (2, k)
        rhs += xb @ y.T
    reg = np.eye(nf) * lam
    reg[-1, -1] = 0.0
    try:
        w = np.linalg.solve(gram + reg, rhs)
    except np.linalg.LinAlgError as exc:
        if lam == 0:
            raise DataError(
                "normal equations are singular; refit with lam > 0"
            ) from exc
        raise
    return LinearModel(
        lags=lag_t, norm_factor=float(norm_factor), lam=float(lam), weights=w.T
    )


def predict(
    model: LinearModel, p: np.ndarray, d: np.ndarray, ts: Sequence[int]
) -> np.ndarray:
    """(S, 2, n_cells) forecasts, clamped at zero."""
    idx = np.asarray(list(ts), dtype=np.int64)
    out = np.empty((idx.size, 2, p.shape[1]))
    for i, t in enumerate(idx):
        x = build_input(p, d, int(t), model.lags, model.norm_factor)
        xb = np.vstack([x, np.ones((1, x.shape[1]))])
        out[i] = model.weights @ xb
    np.maximum(out, 0.0, out=out)
    return out


def persistence_forecast(
    p: np.ndarray, d: np.ndarray, ts: Sequence[int], lag: int
) -> np.ndarray:
    """Repeat the frame from `lag` hours earlier, per channel."""
    if lag < 1:
        raise DataError("persistence lag must be >= 1")
    idx = np.asarray(list(ts), dtype=np.int64)
    if idx.min() - lag < 0:
        raise DataError("persistence lag reaches before the series start")
    return np.stack([p[idx - lag], d[idx - lag]], axis=1)


def masked_metrics(
    pred: np.ndarray, truth: np.ndarray, eps: float = 1e-8
) -> MetricSet:
    """Metrics for one sample over active cells, both channels pooled.

    MSE and MAE divide by 2 * n_cells; the goodness-of-fit score compares the
    squared error against per-channel variance around each channel's own
    masked mean, with eps guarding all-constant targets.
    """
    pr = np.asarray(pred, dtype=np.float64)
    tr = np.asarray(truth, dtype=np.float64)
    if pr.shape != tr.shape or pr.ndim != 2 or pr.shape[0] != 2:
        raise DataError("masked_metrics expects matching (2, n_cells) arrays")
    if pr.shape[1] < 1:
        raise DataError("no active cells")
    err = pr - tr
    n = 2 * pr.shape[1]
    sse = float((err * err).sum())
    sst = float(((tr - tr.mean(axis=1, keepdims=True)) ** 2).sum())
    return MetricSet(
        mse=sse / n,
        mae=float(np.abs(err).sum()) / n,
        maxae=float(np.abs(err).max()),
        r2=1.0 - sse / (sst + eps),
    )


def evaluate(pred: np.ndarray, truth: np.ndarray, eps: float = 1e-8) -> EvalResult:
    """Per-sample metrics plus their across-sample means."""
    pr = np.asarray(pred, dtype=np.float64)
    tr = np.asarray(truth, dtype=np.float64)
    if pr.shape != tr.shape or pr.ndim != 3:
        raise DataError("evaluate expects matching (S, 2, n_cells) arrays")
    per = [masked_metrics(pr[i], tr[i], eps=eps) for i in range(pr.shape[0])]
    agg = MetricSet(
        mse=float(np.mean([m.mse for m in per])),
        mae=float(np.mean([m.mae for m in per])),
        maxae=float(np.mean([m.maxae for m in per])),
        r2=float(np.mean([m.r2 for m in per])),
    )
    return EvalResult(per_sample=per, aggregate=agg)


def evaluate_config(
    p: np.ndarray,
    d: np.ndarray,
    lags: Sequence[int],
    train_ts: Sequence[int],
    eval_ts: Sequence[int],
    lam: float = 1e-6,
    norm_upto: int | None = -1,
) -> tuple[LinearModel, EvalResult]:
    """Fit on train hours, score on eval hours.

    norm_upto=-1 (default) scales by the maximum seen up to the last training
    hour; None uses the whole series instead.
    """
    ts = np.asarray(list(train_ts), dtype=np.int64)
    if norm_upto is not None and norm_upto == -1:
        norm_upto = int(ts.max())
    norm = compute_norm_factor(p, d, upto=norm_upto)
    model = fit_linear(p, d, ts, lags, norm, lam=lam)
    preds = predict(model, p, d, eval_ts)
    truth = targets(p, d, eval_ts)
    return model, evaluate(preds, truth)


def _term_names(lags: Sequence[int]) -> list[str]:
    return (
        [f"p_lag_{tau}" for tau in lags]
        + [f"d_lag_{tau}" for tau in lags]
        + ["bias"]
    )


def write_model(model: LinearModel, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row_type", "name", "channel", "value"])
        w.writerow(["meta", "lags", "", ";".join(str(x) for x in model.lags)])
        w.writerow(["meta", "norm_factor", "", repr(model.norm_factor)])
        w.writerow(["meta", "lam", "", repr(model.lam)])
        names = _term_names(model.lags)
        for ch_idx, channel in enumerate(("pickup", "dropoff")):
            for j, name in enumerate(names):
                w.writerow(
                    ["weight", name, channel, repr(float(model.weights[ch_idx, j]))]
                )


def read_model(path: str | Path) -> LinearModel:
    meta: dict[str, str] = {}
    weights: dict[tuple[str, str], float] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["row_type"] == "meta":
                meta[row["name"]] = row["value"]
            elif row["row_type"] == "weight":
                weights[(row["channel"], row["name"])] = float(row["value"])
            else:
                raise DataError(f"{path}: unknown row type {row['row_type']!r}")
    try:
        lags = tuple(int(x) for x in meta["lags"].split(";"))
        norm = float(meta["norm_factor"])
        lam = float(meta["lam"])
    except KeyError as exc:
        raise DataError(f"{path}: missing model metadata {exc}") from exc
    names = _term_names(lags)
    w = np.empty((2, len(names)))
    for ch_idx, channel in enumerate(("pickup", "dropoff")):
        for j, name in enumerate(names):
            if (channel, name) not in weights:
                raise DataError(f"{path}: missing weight {channel}/{name}")
            w[ch_idx, j] = weights[(channel, name)]
    return LinearModel(lags=lags, norm_factor=norm, lam=lam, weights=w)
