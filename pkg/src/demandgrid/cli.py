"""Command-line pipeline driver: trip records in, validated lag configurations out.

The pipeline is a chain of commands, each persisting its result for the next
stage under one output directory:

    synth      trips.csv + tracts.geojson (synthetic data with planted periods)
    ingest     trips_clean.csv, centroids.csv, located.csv, filter_report.*
    rasterize  store/ with hourly 16-bit PNG frames, manifest, grid spec
    mask       mask/ with the activity mask PNG and active-cell CSV
    split      split.csv assigning target hours to train/val/test
    rank-lags  ranking_<horizon>.csv/.txt with per-lag metrics and ranks
    ablate     ablation_<horizon>.csv/.txt with the minimal non-inferior depth
    compare    comparison_<horizon>.csv/.txt with Holm-corrected pairwise tests
    evaluate   model + metric reports for one named lag configuration
    plot       RGB heatmap of any stored frame or of the mask

Settings come from an INI file (--config) and every setting is overridable
with a command-line flag; all randomness flows from the single seed. Exit
codes: 0 success, 1 data error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path

import numpy as np

from . import geo, ingest, lagrank, plotting, predict, raster, stats, synth
from . import mask as maskmod
from . import split as splitmod
from .errors import ConfigError, DataError, DemandGridError

__all__ = ["RunConfig", "main"]

HORIZONS = ("next-hour", "next-24h")
PRESET_NAMES = ("proposed", "recent-adjacent", "fixed-period")

# lags per channel for each horizon's configurations
TOP_K = {"next-hour": 18, "next-24h": 9}

PRESET_LAGS = {
    ("recent-adjacent", "next-hour"): tuple(range(1, 19)),
    ("recent-adjacent", "next-24h"): tuple(range(24, 33)),
    ("fixed-period", "next-hour"): tuple(range(1, 410, 24)),
    ("fixed-period", "next-24h"): tuple(range(24, 217, 24)),
}

STORE_DIR = "store"
MASK_DIR = "mask"
SPLIT_FILE = "split.csv"
LOCATED_FILE = "located.csv"


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    trips: Path | None
    tracts: Path | None
    boundary: Path | None
    centroids: Path | None
    out_dir: Path
    filters: ingest.FilterConfig
    projection: geo.ProjectionSpec
    cell_w: float
    cell_h: float
    timezone: str
    split_spec: splitmod.SplitSpec
    lag_min: int
    lag_max: int
    metrics: tuple[str, ...]
    horizon: str
    predictor: str
    lam: float
    alpha: float
    margin_frac: float
    seed: int
    threads: int


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    cp = configparser.ConfigParser()
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config file {path}: {exc}")

    def get(section: str, key: str, cast, default):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key)
        try:
            if cast is bool:
                return cp.getboolean(section, key)
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"config [{section}] {key}={raw!r}: {exc}")

    def get_path(section: str, key: str):
        val = get(section, key, str, None)
        return Path(val) if val else None

    filters = ingest.FilterConfig(
        mode=get("filters", "mode", str, "scooter"),
        year=get("filters", "year", int, 2019),
        duration_bounds=(
            get("filters", "duration_min", float, 1.0),
            get("filters", "duration_max", float, 120.0),
        ),
        distance_bounds=(
            get("filters", "distance_min", float, 0.1),
            get("filters", "distance_max", float, 35.0),
        ),
        speed_bounds=(
            get("filters", "speed_min", float, 2.0),
            get("filters", "speed_max", float, 26.0),
        ),
    )
    projection = geo.ProjectionSpec(
        utm_zone=get("projection", "utm_zone", int, 14),
        north=get("projection", "north", bool, True),
    )
    split_spec = splitmod.SplitSpec(
        max_lag=get("split", "max_lag", int, 504),
        buffer=get("split", "buffer", int, 1),
        fractions=(
            get("split", "train_frac", float, 0.5164),
            get("split", "val_frac", float, 0.2417),
            get("split", "test_frac", float, 0.2418),
        ),
    )
    metrics = tuple(
        s.strip()
        for s in get("lags", "metrics", str, ",".join(lagrank.RANK_METRICS)).split(",")
        if s.strip()
    )

    cfg = RunConfig(
        trips=get_path("paths", "trips"),
        tracts=get_path("paths", "tracts"),
        boundary=get_path("paths", "boundary"),
        centroids=get_path("paths", "centroids"),
        out_dir=get_path("paths", "out_dir") or Path("out"),
        filters=filters,
        projection=projection,
        cell_w=get("grid", "cell_w", float, 240.0),
        cell_h=get("grid", "cell_h", float, 220.0),
        timezone=get("grid", "timezone", str, ""),
        split_spec=split_spec,
        lag_min=get("lags", "lag_min", int, 1),
        lag_max=get("lags", "lag_max", int, 504),
        metrics=metrics,
        horizon=get("run", "horizon", str, "next-hour"),
        predictor=get("predict", "predictor", str, "linear"),
        lam=get("predict", "lam", float, 1e-6),
        alpha=get("stats", "alpha", float, 0.05),
        margin_frac=get("stats", "margin_frac", float, 0.02),
        seed=get("run", "seed", int, 0),
        threads=get("run", "threads", int, 1),
    )
    if getattr(args, "out_dir", None):
        cfg.out_dir = Path(args.out_dir)
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    if cfg.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {cfg.threads}")
    if cfg.horizon not in HORIZONS:
        raise ConfigError(f"horizon must be one of {HORIZONS}, got {cfg.horizon!r}")
    if cfg.predictor not in ("linear", "persistence"):
        raise ConfigError(f"unknown predictor {cfg.predictor!r}")
    return cfg


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------

def _slug(horizon: str) -> str:
    return horizon.replace("-", "_")


def _pick_horizon(args: argparse.Namespace, cfg: RunConfig) -> str:
    h = getattr(args, "horizon", None) or cfg.horizon
    if h not in HORIZONS:
        raise ConfigError(f"horizon must be one of {HORIZONS}, got {h!r}")
    return h


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DataError(f"{path} not found; run `demandgrid {hint}` first")
    return path


def _write_located(located: dict, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "end", "x_s", "y_s", "x_e", "y_e"])
        for i in range(located["start"].size):
            w.writerow(
                [
                    str(located["start"][i]),
                    str(located["end"][i]),
                    repr(float(located["x_s"][i])),
                    repr(float(located["y_s"][i])),
                    repr(float(located["x_e"][i])),
                    repr(float(located["y_e"][i])),
                ]
            )


def _read_located(path: Path) -> dict:
    cols: dict[str, list] = {k: [] for k in ("start", "end", "x_s", "y_s", "x_e", "y_e")}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(cols) - set(reader.fieldnames):
            raise DataError(f"{path}: not a located-trips file")
        for row in reader:
            for k in cols:
                cols[k].append(row[k])
    out = {
        "start": np.array(cols["start"], dtype="datetime64[s]"),
        "end": np.array(cols["end"], dtype="datetime64[s]"),
    }
    for k in ("x_s", "y_s", "x_e", "y_e"):
        out[k] = np.array([float(v) for v in cols[k]], dtype=np.float64)
    return out


def _store_span(store_dir: Path) -> tuple[date, int]:
    """(first day, frame count) from the manifest, without reading frames."""
    manifest = _require(store_dir / "manifest.csv", "rasterize")
    days: set[date] = set()
    n = 0
    with open(manifest, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["channel"] == "pickup":
                days.add(date.fromisoformat(row["date"]))
                n += 1
    if n == 0:
        raise DataError(f"{manifest}: no pickup frames listed")
    return min(days), n


def _load_series(cfg: RunConfig):
    store_dir = cfg.out_dir / STORE_DIR
    _require(store_dir / "manifest.csv", "rasterize")
    store = raster.read_store(store_dir)
    mask_dir = cfg.out_dir / MASK_DIR
    _require(mask_dir / "mask.png", "mask")
    m = maskmod.read_mask(mask_dir)
    if m.shape != (store.grid.rows, store.grid.cols):
        raise DataError(
            f"mask shape {m.shape} does not match grid "
            f"({store.grid.rows}, {store.grid.cols}); rerun `demandgrid mask`"
        )
    p, d = maskmod.masked_series(store, m)
    return store, m, p, d


def _load_split(cfg: RunConfig) -> splitmod.Split:
    path = _require(cfg.out_dir / SPLIT_FILE, "split")
    return splitmod.read_split(path, cfg.split_spec)


def _parse_lag_list(text: str) -> tuple[int, ...]:
    try:
        lags = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"bad lag list {text!r}; expected comma-separated integers")
    if not lags:
        raise ConfigError("empty lag list")
    return lags


def _resolve_lag_set(
    cfg: RunConfig, horizon: str, preset: str | None, lags_text: str | None
) -> tuple[str, tuple[int, ...]]:
    if lags_text is not None:
        lags = _parse_lag_list(lags_text)
        if horizon == "next-24h" and min(lags) < 24:
            raise ConfigError("next-24h lags must all be >= 24")
        return "custom", lags
    preset = preset or "proposed"
    if preset not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {preset!r}; choices: {PRESET_NAMES}")
    if preset != "proposed":
        return preset, PRESET_LAGS[(preset, horizon)]
    ranking_path = _require(
        cfg.out_dir / f"ranking_{_slug(horizon)}.csv",
        f"rank-lags --horizon {horizon}",
    )
    ranking = lagrank.read_ranking(ranking_path)
    return "proposed", tuple(lagrank.top_k(ranking, TOP_K[horizon]))


def _evaluate_one(
    cfg: RunConfig,
    horizon: str,
    lags: tuple[int, ...],
    train_ts: np.ndarray,
    eval_ts: np.ndarray,
    p: np.ndarray,
    d: np.ndarray,
    lam: float,
    predictor: str,
):
    """(model or None, EvalResult) for one lag configuration."""
    if predictor == "persistence":
        base_lag = 1 if horizon == "next-hour" else 24
        preds = predict.persistence_forecast(p, d, eval_ts, base_lag)
        truth = predict.targets(p, d, eval_ts)
        return None, predict.evaluate(preds, truth)
    model, result = predict.evaluate_config(p, d, lags, train_ts, eval_ts, lam=lam)
    return model, result


def _write_eval_reports(
    out_dir: Path,
    tag: str,
    name: str,
    horizon: str,
    subset: str,
    lags: tuple[int, ...],
    predictor: str,
    lam: float,
    eval_ts: np.ndarray,
    start_day: date,
    result,
) -> None:
    agg = result.aggregate
    samples_path = out_dir / f"{tag}_samples.csv"
    with open(samples_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["sample_index", "target_hour_index", "target_timestamp",
             "mse", "mae", "maxae", "r2"]
        )
        for i, (t, m) in enumerate(zip(eval_ts, result.per_sample)):
            ts = splitmod.target_timestamp(start_day, int(t)).isoformat()
            w.writerow(
                [i, int(t), ts, f"{m.mse:.10g}", f"{m.mae:.10g}",
                 f"{m.maxae:.10g}", f"{m.r2:.10g}"]
            )
    summary_path = out_dir / f"{tag}.csv"
    rows = [
        ("configuration", name),
        ("horizon", horizon),
        ("subset", subset),
        ("predictor", predictor),
        ("lambda", repr(lam)),
        ("lags", ";".join(str(x) for x in lags)),
        ("n_samples", len(result.per_sample)),
        ("mse", f"{agg.mse:.10g}"),
        ("mae", f"{agg.mae:.10g}"),
        ("r2", f"{agg.r2:.10g}"),
        ("maxae", f"{agg.maxae:.10g}"),
    ]
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["field", "value"])
        w.writerows(rows)
    text_path = out_dir / f"{tag}.txt"
    lag_text = ",".join(str(x) for x in lags)
    text = (
        f"configuration {name} ({horizon}, {subset} subset)\n"
        f"predictor {predictor}, lambda {lam}, "
        f"{2 * len(lags)} input channels\n"
        f"lags: {lag_text}\n"
        f"samples: {len(result.per_sample)}\n"
        f"masked metrics, mean per sample:\n"
        f"  MSE   {agg.mse:.6g}\n"
        f"  MAE   {agg.mae:.6g}\n"
        f"  R2    {agg.r2:.6g}\n"
        f"  MaxAE {agg.maxae:.6g}\n"
    )
    text_path.write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.days is not None and args.weeks is not None:
        raise ConfigError("pass --days or --weeks, not both")
    kwargs = {}
    if args.weeks is not None:
        kwargs["n_days"] = 7 * args.weeks
    if args.days is not None:
        kwargs["n_days"] = args.days
    if args.tracts is not None:
        kwargs["n_tracts"] = args.tracts
    if args.base_rate is not None:
        kwargs["base_rate"] = args.base_rate
    if args.daily_amp is not None:
        kwargs["daily_amp"] = args.daily_amp
    if args.weekly_amp is not None:
        kwargs["weekly_amp"] = args.weekly_amp
    if args.trend_amp is not None:
        kwargs["trend_amp"] = args.trend_amp
    if args.trend_period is not None:
        kwargs["trend_period_hours"] = args.trend_period
    if args.start_day is not None:
        kwargs["start_day"] = date.fromisoformat(args.start_day)
    seed = args.seed if args.seed is not None else cfg.seed
    scfg = synth.SynthConfig(seed=seed, **kwargs)
    data = synth.generate(scfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    trips_path, geo_path = synth.write_synth(data, cfg.out_dir)
    print(
        f"generated {data.n_trips} trips over {scfg.n_days} days "
        f"x {scfg.n_tracts} tracts (seed {seed})"
    )
    print(f"wrote {trips_path} and {geo_path}")
    return 0


def cmd_ingest(args: argparse.Namespace, cfg: RunConfig) -> int:
    trips_path = Path(args.trips) if args.trips else (cfg.trips or cfg.out_dir / "trips.csv")
    if not trips_path.exists():
        raise DataError(
            f"{trips_path} not found; run `demandgrid synth` or pass --trips"
        )
    rows, errors = ingest.parse_trips(trips_path)
    kept, report = ingest.filter_trips(rows, cfg.filters)
    if errors:
        rejections = dict(report.rejections)
        rejections["malformed"] = rejections.get("malformed", 0) + len(errors)
        report = replace(
            report,
            input_count=report.input_count + len(errors),
            rejections=rejections,
        )

    centroids_path = Path(args.centroids) if args.centroids else cfg.centroids
    polygons = None
    if centroids_path is not None:
        table = geo.read_centroid_table(_require_input(centroids_path), cfg.projection)
    else:
        tracts_path = Path(args.tracts) if args.tracts else (
            cfg.tracts or cfg.out_dir / "tracts.geojson"
        )
        if not tracts_path.exists():
            raise DataError(
                f"{tracts_path} not found; run `demandgrid synth` or pass --tracts"
            )
        polygons = geo.load_feature_collection(tracts_path)
        table = geo.build_centroid_table(polygons, cfg.projection)

    boundary = None
    boundary_path = Path(args.boundary) if args.boundary else cfg.boundary
    if boundary_path is not None:
        boundary = geo.load_feature_collection(_require_input(boundary_path))
    located, rejections = geo.geolocate_trips(
        kept, table, boundary=boundary, containment=args.containment,
        polygons=polygons,
    )
    n_located = int(located["start"].size)
    if n_located == 0:
        raise DataError("no trips survived filtering and geolocation")

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    ingest.write_trips(kept, cfg.out_dir / "trips_clean.csv")
    geo.write_centroid_table(table, cfg.out_dir / "centroids.csv")
    _write_located(located, cfg.out_dir / LOCATED_FILE)
    ingest.write_filter_report(
        report,
        cfg.out_dir / "filter_report.csv",
        cfg.out_dir / "filter_report.txt",
        extra_rejections=rejections,
    )
    dropped = report.input_count - report.kept_count
    print(
        f"kept {report.kept_count}/{report.input_count} trips "
        f"({dropped} filtered), {n_located} geolocated"
    )
    if rejections["unresolved_geoid"] or rejections["outside_boundary"]:
        print(
            f"geolocation dropped {rejections['unresolved_geoid']} unresolved, "
            f"{rejections['outside_boundary']} outside boundary"
        )
    return 0


def _require_input(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    return path


def cmd_rasterize(args: argparse.Namespace, cfg: RunConfig) -> int:
    located = _read_located(_require(cfg.out_dir / LOCATED_FILE, "ingest"))
    cell_w = args.cell_w if args.cell_w is not None else cfg.cell_w
    cell_h = args.cell_h if args.cell_h is not None else cfg.cell_h
    if args.bounds is not None:
        parts = [float(s) for s in args.bounds.split(",")]
        if len(parts) != 4:
            raise ConfigError("--bounds expects min_x,min_y,max_x,max_y")
        grid = raster.build_grid(tuple(parts), cell_w, cell_h)
    else:
        grid = raster.build_grid(located, cell_w, cell_h)

    if args.start_day is not None:
        start_day = date.fromisoformat(args.start_day)
    else:
        start_day = located["start"].min().item().date()
    if args.end_day is not None:
        end_day = date.fromisoformat(args.end_day)
    else:
        end_day = located["start"].max().item().date()
    tz = args.timezone if args.timezone is not None else cfg.timezone

    store = raster.rasterize_range(
        located, grid, start_day, end_day, tz_name=tz or None
    )
    store_dir = cfg.out_dir / STORE_DIR
    raster.write_store(store, store_dir)
    with open(store_dir / "dropped.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["reason", "count"])
        for reason, count in store.dropped.items():
            w.writerow([reason, count])
    total = int(store.pickup.sum())
    n_dropped = sum(store.dropped.values())
    print(
        f"rasterized {total} pick-ups onto a {grid.rows}x{grid.cols} grid, "
        f"{store.n_hours} hourly frames ({start_day}..{end_day})"
    )
    if n_dropped:
        print(f"dropped {n_dropped} trip endpoints (see {store_dir / 'dropped.csv'})")
    return 0


def cmd_mask(args: argparse.Namespace, cfg: RunConfig) -> int:
    store_dir = cfg.out_dir / STORE_DIR
    _require(store_dir / "manifest.csv", "rasterize")
    store = raster.read_store(store_dir)
    hours = None
    if args.subset != "all":
        split = _load_split(cfg)
        hours = split.subsets[args.subset]
    m = maskmod.build_mask(store, hours)
    png_path, csv_path = maskmod.write_mask(m, cfg.out_dir / MASK_DIR)
    active = int(m.sum())
    print(
        f"mask: {active}/{m.size} active cells "
        f"({100.0 * active / m.size:.1f}%), wrote {png_path} and {csv_path}"
    )
    return 0


def cmd_split(args: argparse.Namespace, cfg: RunConfig) -> int:
    spec = cfg.split_spec
    if args.max_lag is not None or args.buffer is not None or args.fractions:
        fractions = spec.fractions
        if args.fractions:
            parts = tuple(float(s) for s in args.fractions.split(","))
            if len(parts) != 3:
                raise ConfigError("--fractions expects train,val,test")
            fractions = parts
        spec = splitmod.SplitSpec(
            max_lag=args.max_lag if args.max_lag is not None else spec.max_lag,
            buffer=args.buffer if args.buffer is not None else spec.buffer,
            fractions=fractions,
        )
    start_day, n_hours = _store_span(cfg.out_dir / STORE_DIR)
    split = splitmod.make_split(n_hours, spec)
    splitmod.verify_no_leakage(split)
    path = cfg.out_dir / SPLIT_FILE
    splitmod.write_split(split, path, start_day)
    n_train, n_val, n_test = split.sizes()
    print(
        f"split {n_hours} hours -> train {n_train}, val {n_val}, "
        f"test {n_test} targets "
        f"(lookback {spec.max_lag}, buffer {spec.buffer}); wrote {path}"
    )
    return 0


def cmd_rank_lags(args: argparse.Namespace, cfg: RunConfig) -> int:
    horizon = _pick_horizon(args, cfg)
    _, _, p, d = _load_series(cfg)
    lag_lo = args.lag_min if args.lag_min is not None else cfg.lag_min
    lag_hi = args.lag_max if args.lag_max is not None else cfg.lag_max
    if horizon == "next-24h":
        lag_lo = max(lag_lo, 24)
    if not 1 <= lag_lo <= lag_hi:
        raise ConfigError(f"bad lag universe [{lag_lo}, {lag_hi}]")
    if args.subset == "all":
        ts = np.arange(lag_hi, p.shape[0], dtype=np.int64)
        if ts.size == 0:
            raise DataError("series shorter than the largest candidate lag")
    else:
        split = _load_split(cfg)
        ts = split.subsets[args.subset]
    metrics = tuple(args.metrics.split(",")) if args.metrics else cfg.metrics
    ranking = lagrank.rank_lags(p, d, ts, range(lag_lo, lag_hi + 1), use=metrics)
    slug = _slug(horizon)
    csv_path = cfg.out_dir / f"ranking_{slug}.csv"
    lagrank.write_ranking(ranking, csv_path)

    k = min(TOP_K[horizon], len(ranking))
    lines = [
        f"lag ranking ({horizon}, {args.subset} targets, "
        f"universe {lag_lo}..{lag_hi}, metrics {','.join(metrics)})",
        f"{'rank':>4} {'lag':>4} {'rank_avg':>9} {'same_corr':>10} "
        f"{'cross_corr':>10} {'mae':>10}",
    ]
    for r in ranking[:k]:
        m = r.metrics
        lines.append(
            f"{r.rank_final:>4} {m.lag:>4} {r.rank_avg:>9.2f} "
            f"{m.same_corr:>10.4f} {m.cross_corr:>10.4f} {m.mae:>10.4f}"
        )
    text_path = cfg.out_dir / f"ranking_{slug}.txt"
    text_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    top = lagrank.top_k(ranking, k)
    print(f"ranked {len(ranking)} lags; top {k}: {','.join(str(x) for x in top)}")
    print(f"wrote {csv_path} and {text_path}")
    return 0


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    horizon = _pick_horizon(args, cfg)
    name, lags = _resolve_lag_set(cfg, horizon, args.preset, args.lags)
    if args.name:
        name = args.name
    store_dir = cfg.out_dir / STORE_DIR
    start_day, _ = _store_span(store_dir)
    _, _, p, d = _load_series(cfg)
    split = _load_split(cfg)
    eval_ts = split.subsets[args.subset]
    if eval_ts.size == 0:
        raise DataError(f"subset {args.subset!r} is empty")
    lam = args.lam if args.lam is not None else cfg.lam
    predictor = args.predictor or cfg.predictor
    model, result = _evaluate_one(
        cfg, horizon, lags, split.train, eval_ts, p, d, lam, predictor
    )
    slug = _slug(horizon)
    if model is not None:
        models_dir = cfg.out_dir / "models"
        models_dir.mkdir(parents=True, exist_ok=True)
        predict.write_model(model, models_dir / f"{name}_{slug}.csv")
    tag = f"eval_{name}_{slug}_{args.subset}"
    _write_eval_reports(
        cfg.out_dir, tag, name, horizon, args.subset, lags, predictor, lam,
        eval_ts, start_day, result,
    )
    agg = result.aggregate
    print(
        f"{name} ({horizon}, {args.subset}): MSE {agg.mse:.6g}, "
        f"MAE {agg.mae:.6g}, R2 {agg.r2:.6g}, MaxAE {agg.maxae:.6g} "
        f"over {len(result.per_sample)} samples"
    )
    print(f"wrote {cfg.out_dir / tag}.csv/.txt and {cfg.out_dir / tag}_samples.csv")
    return 0


def cmd_compare(args: argparse.Namespace, cfg: RunConfig) -> int:
    horizon = _pick_horizon(args, cfg)
    presets = tuple(args.preset) if args.preset else PRESET_NAMES
    resolved = [_resolve_lag_set(cfg, horizon, name, None) for name in presets]
    for name, lags in resolved:
        print(
            f"preset {name} ({horizon}, {2 * len(lags)} channels) "
            f"lags: {','.join(str(x) for x in lags)}"
        )
    if len(resolved) == 1:
        return 0

    start_day, _ = _store_span(cfg.out_dir / STORE_DIR)
    _, _, p, d = _load_series(cfg)
    split = _load_split(cfg)
    eval_ts = split.subsets[args.subset]
    if eval_ts.size == 0:
        raise DataError(f"subset {args.subset!r} is empty")
    lam = args.lam if args.lam is not None else cfg.lam
    alpha = args.alpha if args.alpha is not None else cfg.alpha

    sample_mse: dict[str, np.ndarray] = {}
    aggregates = {}
    for name, lags in resolved:
        _, result = _evaluate_one(
            cfg, horizon, lags, split.train, eval_ts, p, d, lam, "linear"
        )
        sample_mse[name] = result.sample_mse
        aggregates[name] = result.aggregate
    pairs = stats.compare_configs(sample_mse, alpha=alpha)

    slug = _slug(horizon)
    csv_path = cfg.out_dir / f"comparison_{slug}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["pair", "mean_a", "mean_b", "statistic", "raw_p", "adjusted_p",
             "n_effective", "better", "decision", "shapiro_p"]
        )
        for c in pairs:
            decision = "significant" if c.adjusted_p < alpha else "not significant"
            shapiro = f"{c.shapiro_p:.6g}" if c.shapiro_p is not None else ""
            w.writerow(
                [f"{c.name_a} vs {c.name_b}", f"{c.mean_a:.10g}",
                 f"{c.mean_b:.10g}", f"{c.statistic:.10g}", f"{c.pvalue:.6g}",
                 f"{c.adjusted_p:.6g}", c.n_effective, c.better, decision, shapiro]
            )

    lines = [
        f"pairwise signed-rank tests on per-sample masked MSE "
        f"({horizon}, {args.subset} subset, {eval_ts.size} samples, "
        f"alpha {alpha}, Holm step-down)",
        "",
        "mean per-sample MSE by configuration:",
    ]
    for name, _ in resolved:
        lines.append(f"  {name:<16} {aggregates[name].mse:.6g}")
    lines.append("")
    for c in pairs:
        decision = "significant" if c.adjusted_p < alpha else "not significant"
        lines.append(
            f"{c.name_a} vs {c.name_b}: better {c.better}, W+ {c.statistic:g}, "
            f"raw p {c.pvalue:.4g}, Holm p {c.adjusted_p:.4g} -> {decision}"
        )
    text_path = cfg.out_dir / f"comparison_{slug}.txt"
    text_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    for line in lines[2:]:
        if line:
            print(line)
    print(f"wrote {csv_path} and {text_path}")
    return 0


def cmd_ablate(args: argparse.Namespace, cfg: RunConfig) -> int:
    horizon = _pick_horizon(args, cfg)
    slug = _slug(horizon)
    ranking_path = _require(
        cfg.out_dir / f"ranking_{slug}.csv", f"rank-lags --horizon {horizon}"
    )
    ranking = lagrank.read_ranking(ranking_path)
    max_depth = args.max_depth if args.max_depth is not None else TOP_K[horizon]
    if not 1 <= max_depth <= len(ranking):
        raise ConfigError(
            f"--max-depth must be in 1..{len(ranking)}, got {max_depth}"
        )
    _, _, p, d = _load_series(cfg)
    split = _load_split(cfg)
    if split.val.size == 0:
        raise DataError("validation subset is empty")
    lam = args.lam if args.lam is not None else cfg.lam
    alpha = args.alpha if args.alpha is not None else cfg.alpha
    margin = args.margin if args.margin is not None else cfg.margin_frac

    lags_by_depth = {}
    errors_by_depth = {}
    for depth in range(1, max_depth + 1):
        lags = tuple(lagrank.top_k(ranking, depth))
        lags_by_depth[depth] = lags
        _, result = _evaluate_one(
            cfg, horizon, lags, split.train, split.val, p, d, lam, "linear"
        )
        errors_by_depth[depth] = result.sample_mse
    res = stats.ablate_depth(errors_by_depth, alpha=alpha, margin_frac=margin)

    csv_path = cfg.out_dir / f"ablation_{slug}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["depth", "channels", "lags", "mean_val_mse", "raw_p",
             "adjusted_p", "decision"]
        )
        for depth in range(1, max_depth + 1):
            if depth == res.best_depth:
                decision, raw, adj = "best", "", ""
            elif depth in res.raw_p:
                accepted = res.adjusted_p[depth] < alpha
                decision = "non-inferior" if accepted else "inferior"
                raw = f"{res.raw_p[depth]:.6g}"
                adj = f"{res.adjusted_p[depth]:.6g}"
            else:
                decision, raw, adj = "deeper than best", "", ""
            w.writerow(
                [depth, 2 * depth,
                 ";".join(str(x) for x in lags_by_depth[depth]),
                 f"{res.mean_error[depth]:.10g}", raw, adj, decision]
            )

    minimal_lags = lags_by_depth[res.minimal_depth]
    lines = [
        f"temporal depth ablation ({horizon}, validation subset, "
        f"alpha {alpha}, margin {margin:g} of best mean MSE)",
        f"best depth {res.best_depth} ({2 * res.best_depth} channels), "
        f"mean val MSE {res.mean_error[res.best_depth]:.6g}",
        f"minimal non-inferior depth {res.minimal_depth} "
        f"-> {res.minimal_channels} channels",
        f"lags: {','.join(str(x) for x in minimal_lags)}",
    ]
    text_path = cfg.out_dir / f"ablation_{slug}.txt"
    text_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines[1:]:
        print(line)
    print(f"wrote {csv_path} and {text_path}")
    return 0


def cmd_plot(args: argparse.Namespace, cfg: RunConfig) -> int:
    plots_dir = cfg.out_dir / "plots"
    if args.what == "mask":
        mask_dir = cfg.out_dir / MASK_DIR
        _require(mask_dir / "mask.png", "mask")
        arr = maskmod.read_mask(mask_dir)
        out_path = Path(args.out) if args.out else plots_dir / "mask.png"
    else:
        if args.date is None or args.hour is None:
            raise ConfigError("plotting a frame requires --date and --hour")
        if not 0 <= args.hour <= 23:
            raise ConfigError(f"--hour must be in 0..23, got {args.hour}")
        day = date.fromisoformat(args.date)
        filename = raster.frame_filename(args.channel, day, args.hour)
        frame_path = cfg.out_dir / STORE_DIR / "frames" / filename
        if not frame_path.exists():
            raise DataError(
                f"{frame_path} not found; run `demandgrid rasterize` first "
                f"or check --channel/--date/--hour"
            )
        arr = raster.read_image16(frame_path)
        out_path = Path(args.out) if args.out else plots_dir / filename
    out_path.parent.mkdir(parents=True, exist_ok=True)
    png, legend = plotting.write_heatmap(
        arr, out_path, colormap=args.colormap, vmax=args.vmax
    )
    print(f"wrote {png} and {legend}")
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demandgrid",
        description="hourly demand imaging, lag ranking, and temporal "
        "input validation",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI settings file")
    common.add_argument("--out-dir", help="pipeline output directory")
    common.add_argument(
        "--threads", type=int,
        help="worker cap for parallel stages (current stages run "
        "single-threaded; the cap applies to any future pools)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "synth", parents=[common],
        help="generate synthetic trips with planted daily/weekly structure",
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--weeks", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--tracts", type=int)
    p.add_argument("--base-rate", type=float)
    p.add_argument("--daily-amp", type=float)
    p.add_argument("--weekly-amp", type=float)
    p.add_argument("--trend-amp", type=float)
    p.add_argument("--trend-period", type=float)
    p.add_argument("--start-day", help="first day, YYYY-MM-DD")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "ingest", parents=[common],
        help="parse, filter, and geolocate a trip export",
    )
    p.add_argument("--trips", help="trip CSV (default: <out-dir>/trips.csv)")
    p.add_argument("--tracts", help="tract GeoJSON (default: <out-dir>/tracts.geojson)")
    p.add_argument("--boundary", help="optional boundary GeoJSON")
    p.add_argument("--centroids", help="precomputed centroid CSV, skips tracts")
    p.add_argument(
        "--containment", choices=("centroid", "any-vertex"), default="centroid",
        help="boundary test applied to each tract",
    )
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser(
        "rasterize", parents=[common],
        help="aggregate located trips into hourly demand frames",
    )
    p.add_argument("--cell-w", type=float, help="cell width, meters")
    p.add_argument("--cell-h", type=float, help="cell height, meters")
    p.add_argument("--bounds", help="explicit extent min_x,min_y,max_x,max_y")
    p.add_argument("--start-day", help="first frame day, YYYY-MM-DD")
    p.add_argument("--end-day", help="last frame day, YYYY-MM-DD")
    p.add_argument("--timezone", help="IANA zone for nonexistent-hour handling")
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser(
        "mask", parents=[common],
        help="build the activity mask over the stored frames",
    )
    p.add_argument(
        "--subset", choices=("all", "train", "val", "test"), default="all",
        help="hours contributing to the mask (non-all requires split.csv)",
    )
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser(
        "split", parents=[common],
        help="assign target hours to train/val/test blocks",
    )
    p.add_argument("--max-lag", type=int, help="lookback horizon, hours")
    p.add_argument("--buffer", type=int, help="extra gap hours between subsets")
    p.add_argument("--fractions", help="train,val,test fractions")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser(
        "rank-lags", parents=[common],
        help="score and rank candidate historical lags",
    )
    p.add_argument("--horizon", choices=HORIZONS)
    p.add_argument(
        "--subset", choices=("train", "val", "test", "all"), default="train",
        help="target hours the metrics are computed over",
    )
    p.add_argument("--lag-min", type=int)
    p.add_argument("--lag-max", type=int)
    p.add_argument(
        "--metrics",
        help=f"comma list from {','.join(lagrank.RANK_METRICS)} "
        "entering the rank average",
    )
    p.set_defaults(func=cmd_rank_lags)

    p = sub.add_parser(
        "evaluate", parents=[common],
        help="fit and score one lag configuration",
    )
    p.add_argument("--horizon", choices=HORIZONS)
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--lags", help="explicit comma-separated lag set")
    p.add_argument("--name", help="label for the report files")
    p.add_argument(
        "--subset", choices=("train", "val", "test"), default="test",
        help="evaluation subset (training always uses train)",
    )
    p.add_argument("--predictor", choices=("linear", "persistence"))
    p.add_argument("--lam", type=float, help="ridge strength")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "compare", parents=[common],
        help="pairwise statistical comparison of preset lag configurations",
    )
    p.add_argument("--horizon", choices=HORIZONS)
    p.add_argument(
        "--preset", action="append", choices=PRESET_NAMES,
        help="repeatable; default compares all three; a single preset "
        "just resolves and prints its lag set",
    )
    p.add_argument(
        "--subset", choices=("val", "test"), default="test",
        help="subset the per-sample errors come from",
    )
    p.add_argument("--alpha", type=float)
    p.add_argument("--lam", type=float, help="ridge strength")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser(
        "ablate", parents=[common],
        help="find the minimal non-inferior temporal depth",
    )
    p.add_argument("--horizon", choices=HORIZONS)
    p.add_argument("--max-depth", type=int, help="deepest configuration tried")
    p.add_argument("--alpha", type=float)
    p.add_argument("--margin", type=float, help="non-inferiority margin fraction")
    p.add_argument("--lam", type=float, help="ridge strength")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser(
        "plot", parents=[common],
        help="render a stored frame or the mask as a color heatmap",
    )
    p.add_argument("--what", choices=("frame", "mask"), default="frame")
    p.add_argument("--channel", choices=("pickup", "dropoff"), default="pickup")
    p.add_argument("--date", help="frame day, YYYY-MM-DD")
    p.add_argument("--hour", type=int, help="frame hour, 0..23")
    p.add_argument(
        "--colormap", choices=tuple(sorted(plotting.COLORMAPS)), default="viridis"
    )
    p.add_argument("--vmax", type=float, help="count mapped to the ramp top")
    p.add_argument("--out", help="output PNG path")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_run_config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DemandGridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
