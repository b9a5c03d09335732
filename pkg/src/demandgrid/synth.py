"""Synthetic trip generation with planted temporal structure.

Pseudo-tracts are laid out on a small lattice. Each tract's hourly trip
count is Poisson with rate

    base * profile(h mod 24) * (1 + daily_amp * cos(2 pi h / 24 + phi_i))
         * (1 + weekly_amp * cos(2 pi h / 168))
         * (1 + trend_amp * cos(2 pi h / P + psi_i))

The slow third factor breaks the exact exchangeability of lags that agree
in both daily and weekly phase (for a pure daily-plus-weekly rate, hours
t - 168 and t - 336 are statistically identical); with trend_amp = 0 the
rate reduces to the plain periodic form. Trip attributes are fillers chosen
to pass the standard filters. Each tract draws from its own seeded stream,
so a tract's pickup-side trips do not depend on how many tracts exist
(destination choices do, since they sample the tract universe).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geo import ProjectionSpec, TractPolygon, wgs84_to_utm

__all__ = [
    "SynthConfig",
    "SynthData",
    "planted_profile",
    "expected_rate",
    "generate",
    "write_synth",
]

TRIP_HEADER = [
    "device_id",
    "vehicle_type",
    "start_time",
    "end_time",
    "duration_min",
    "distance_km",
    "origin_geoid",
    "dest_geoid",
]


@dataclass(frozen=True)
class SynthConfig:
    n_tracts: int = 25
    n_days: int = 182  # 26 weeks: long enough to split with the 504 h lookback
    start_day: date = date(2019, 1, 7)  # a Monday; keeps clear of DST changes
    base_rate: float = 2.0
    daily_amp: float = 0.8
    weekly_amp: float = 0.5
    trend_amp: float = 0.3
    trend_period_hours: float | None = None  # None: twice the generated span
    stay_prob: float = 0.7
    seed: int = 0
    center_lat: float = 30.27
    center_lon: float = -97.74
    lat_spacing: float = 0.004
    lon_spacing: float = 0.006
    tract_prefix: str = "99001"
    profile_lo: float = 0.5
    profile_hi: float = 1.5
    duration_lo: float = 6.0  # minutes
    duration_hi: float = 30.0
    speed_lo: float = 5.0  # km/h
    speed_hi: float = 20.0

    def __post_init__(self) -> None:
        if self.n_tracts < 2:
            raise ConfigError("need at least 2 tracts")
        if self.n_days < 1:
            raise ConfigError("need at least 1 day")
        for name in ("daily_amp", "weekly_amp", "trend_amp"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.base_rate <= 0:
            raise ConfigError("base_rate must be positive")
        if not 0.0 <= self.stay_prob <= 1.0:
            raise ConfigError("stay_prob must lie in [0, 1]")
        if len(self.tract_prefix) != 5 or not self.tract_prefix.isdigit():
            raise ConfigError("tract_prefix must be 5 digits")
        if not 0 < self.profile_lo <= self.profile_hi:
            raise ConfigError("profile bounds must be positive and ordered")

    @property
    def n_hours(self) -> int:
        return self.n_days * 24

    @property
    def trend_period(self) -> float:
        return (
            float(self.trend_period_hours)
            if self.trend_period_hours is not None
            else 2.0 * self.n_hours
        )

    def geoid(self, i: int) -> str:
        return f"{self.tract_prefix}{(i + 1) * 100:06d}"


@dataclass
class SynthData:
    config: SynthConfig
    geoids: list[str]
    centroids_lonlat: np.ndarray  # (n, 2): lon, lat
    polygons: list[TractPolygon]
    expected: np.ndarray  # (T, n) planted rates
    trips: dict[str, np.ndarray] = field(repr=False)

    @property
    def n_trips(self) -> int:
        return self.trips["start"].size


def _global_stream(cfg: SynthConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed))


def _tract_stream(cfg: SynthConfig, i: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(cfg.seed, spawn_key=(i + 1,))
    )


def planted_profile(cfg: SynthConfig) -> np.ndarray:
    """The 24-hour base profile shared by every tract."""
    rng = _global_stream(cfg)
    return rng.uniform(cfg.profile_lo, cfg.profile_hi, size=24)


def _tract_phases(cfg: SynthConfig, i: int) -> tuple[float, float]:
    rng = _tract_stream(cfg, i)
    phi = float(rng.uniform(0, 2 * math.pi))
    psi = float(rng.uniform(0, 2 * math.pi))
    return phi, psi


def expected_rate(cfg: SynthConfig) -> np.ndarray:
    """(T, n_tracts) planted Poisson rates in closed form."""
    T = cfg.n_hours
    h = np.arange(T, dtype=np.float64)
    profile = planted_profile(cfg)[np.arange(T) % 24]
    weekly = 1.0 + cfg.weekly_amp * np.cos(2 * np.pi * h / 168.0)
    out = np.empty((T, cfg.n_tracts))
    for i in range(cfg.n_tracts):
        phi, psi = _tract_phases(cfg, i)
        daily = 1.0 + cfg.daily_amp * np.cos(2 * np.pi * h / 24.0 + phi)
        trend = 1.0 + cfg.trend_amp * np.cos(
            2 * np.pi * h / cfg.trend_period + psi
        )
        out[:, i] = cfg.base_rate * profile * daily * weekly * trend
    return out


def _lattice(cfg: SynthConfig) -> np.ndarray:
    """(n, 2) lon/lat tract centers on a square lattice."""
    side = math.ceil(math.sqrt(cfg.n_tracts))
    out = np.empty((cfg.n_tracts, 2))
    for i in range(cfg.n_tracts):
        row, col = divmod(i, side)
        out[i, 0] = cfg.center_lon + (col - (side - 1) / 2) * cfg.lon_spacing
        out[i, 1] = cfg.center_lat + (row - (side - 1) / 2) * cfg.lat_spacing
    return out


def _square_polygon(cfg: SynthConfig, geoid: str, lon: float, lat: float) -> TractPolygon:
    hw_lon = 0.4 * cfg.lon_spacing
    hw_lat = 0.4 * cfg.lat_spacing
    ring = [
        (lon - hw_lon, lat - hw_lat),
        (lon + hw_lon, lat - hw_lat),
        (lon + hw_lon, lat + hw_lat),
        (lon - hw_lon, lat + hw_lat),
        (lon - hw_lon, lat - hw_lat),
    ]
    return TractPolygon(geoid=geoid, rings=[ring])


def generate(cfg: SynthConfig) -> SynthData:
    """Draw one synthetic trip table plus the geometry that locates it."""
    centers = _lattice(cfg)
    geoids = [cfg.geoid(i) for i in range(cfg.n_tracts)]
    polygons = [
        _square_polygon(cfg, geoids[i], centers[i, 0], centers[i, 1])
        for i in range(cfg.n_tracts)
    ]
    expected = expected_rate(cfg)
    proj = ProjectionSpec()
    cx, cy = wgs84_to_utm(centers[:, 1], centers[:, 0], proj)

    t0 = np.datetime64(datetime.combine(cfg.start_day, time()).isoformat())
    hour_starts = t0 + np.arange(cfg.n_hours) * np.timedelta64(3600, "s")

    per_tract = []
    for i in range(cfg.n_tracts):
        rng = _tract_stream(cfg, i)
        rng.uniform(0, 2 * math.pi)  # phi, psi consumed first, in this order
        rng.uniform(0, 2 * math.pi)
        counts = rng.poisson(expected[:, i])
        m = int(counts.sum())
        if m == 0:
            continue
        hours = np.repeat(np.arange(cfg.n_hours), counts)
        offsets = rng.integers(0, 3600, size=m)
        dur_sec = np.rint(
            rng.uniform(cfg.duration_lo, cfg.duration_hi, size=m) * 60.0
        ).astype(np.int64)
        speed = rng.uniform(cfg.speed_lo, cfg.speed_hi, size=m)
        stay = rng.random(size=m) < cfg.stay_prob
        dest = np.where(stay, i, rng.integers(0, cfg.n_tracts, size=m))
        start = hour_starts[hours] + offsets * np.timedelta64(1, "s")
        per_tract.append(
            {
                "start": start.astype("datetime64[s]"),
                "end": (start + dur_sec * np.timedelta64(1, "s")).astype(
                    "datetime64[s]"
                ),
                "duration_min": dur_sec / 60.0,
                "distance_km": speed * (dur_sec / 3600.0),
                "origin": np.full(m, i, dtype=np.int64),
                "dest": dest.astype(np.int64),
            }
        )
    if not per_tract:
        cols = {
            "start": np.array([], dtype="datetime64[s]"),
            "end": np.array([], dtype="datetime64[s]"),
            "duration_min": np.array([]),
            "distance_km": np.array([]),
            "origin": np.array([], dtype=np.int64),
            "dest": np.array([], dtype=np.int64),
        }
    else:
        cols = {
            k: np.concatenate([t[k] for t in per_tract]) for k in per_tract[0]
        }
    order = np.argsort(cols["start"], kind="stable")
    cols = {k: v[order] for k, v in cols.items()}
    cols["x_s"] = cx[cols["origin"]] if cols["origin"].size else np.array([])
    cols["y_s"] = cy[cols["origin"]] if cols["origin"].size else np.array([])
    cols["x_e"] = cx[cols["dest"]] if cols["dest"].size else np.array([])
    cols["y_e"] = cy[cols["dest"]] if cols["dest"].size else np.array([])
    return SynthData(
        config=cfg,
        geoids=geoids,
        centroids_lonlat=centers,
        polygons=polygons,
        expected=expected,
        trips=cols,
    )


def write_synth(data: SynthData, directory: str | Path) -> tuple[Path, Path]:
    """trips.csv in the standard parse layout plus tracts.geojson."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    trips_path = directory / "trips.csv"
    geo_path = directory / "tracts.geojson"
    t = data.trips
    with open(trips_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRIP_HEADER)
        for j in range(data.n_trips):
            w.writerow(
                [
                    f"d{j:07d}",
                    "scooter",
                    str(t["start"][j]),
                    str(t["end"][j]),
                    repr(float(t["duration_min"][j])),
                    repr(float(t["distance_km"][j])),
                    data.geoids[int(t["origin"][j])],
                    data.geoids[int(t["dest"][j])],
                ]
            )
    features = []
    for poly in data.polygons:
        coords = [[[x, y] for x, y in ring] for ring in poly.rings]
        features.append(
            {
                "type": "Feature",
                "properties": {"GEOID": poly.geoid},
                "geometry": {"type": "Polygon", "coordinates": coords},
            }
        )
    geo_path.write_text(
        json.dumps({"type": "FeatureCollection", "features": features}),
        encoding="utf-8",
    )
    return trips_path, geo_path
