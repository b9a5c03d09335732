"""Uniform metric grid construction and hourly demand rasterization.

Located trips are aggregated into per-hour pick-up and drop-off count images
on a fixed grid (row 0 = north), stored as 16-bit grayscale PNGs with a
sidecar manifest. Cells tile the plane half-open: [west, east) x (south,
north], so every in-grid point belongs to exactly one cell. Points lying
exactly on the grid's east or south bounding edge fall outside; that can only
happen when the data extent is an exact multiple of the cell size.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from zoneinfo import ZoneInfo

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

__all__ = [
    "GridSpec",
    "DemandFrame",
    "FrameStore",
    "build_grid",
    "point_to_cell",
    "rasterize_hour",
    "rasterize_range",
    "find_missing_hours",
    "write_frame",
    "read_frame",
    "write_image16",
    "read_image16",
    "write_store",
    "read_store",
]

MAX_PIXEL = 65535  # 16-bit PNG ceiling


@dataclass(frozen=True)
class GridSpec:
    """Grid anchored at its north-west corner, cells in meters."""

    origin_x: float
    origin_y: float
    rows: int
    cols: int
    cell_w: float = 240.0
    cell_h: float = 220.0

    def __post_init__(self) -> None:
        if self.cell_w <= 0 or self.cell_h <= 0:
            raise ConfigError("cell dimensions must be positive")
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("grid must have at least one row and column")

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.cell_w, self.cell_h))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)


@dataclass
class DemandFrame:
    day: date
    hour: int
    pickup: np.ndarray  # (H, W) uint16
    dropoff: np.ndarray  # (H, W) uint16
    missing: bool = False


@dataclass
class FrameStore:
    """Gap-free hourly frame sequence over a calendar range.

    pickup/dropoff are (T, H, W) uint16 arrays; missing marks DST
    spring-forward hours that do not exist on the local clock.
    """

    grid: GridSpec
    start_day: date
    pickup: np.ndarray
    dropoff: np.ndarray
    missing: np.ndarray  # (T,) bool
    dropped: dict[str, int] = field(default_factory=dict)

    @property
    def n_hours(self) -> int:
        return self.pickup.shape[0]

    def hour_index(self, day: date, hour: int) -> int:
        return (day - self.start_day).days * 24 + hour

    def timestamp(self, index: int) -> datetime:
        return datetime.combine(self.start_day, time()) + timedelta(hours=index)

    def frame(self, index: int) -> DemandFrame:
        ts = self.timestamp(index)
        return DemandFrame(
            day=ts.date(),
            hour=ts.hour,
            pickup=self.pickup[index],
            dropoff=self.dropoff[index],
            missing=bool(self.missing[index]),
        )


def build_grid(
    points_or_bounds,
    cell_w: float = 240.0,
    cell_h: float = 220.0,
) -> GridSpec:
    """Grid tightly covering the data, expanded to whole cells.

    Accepts a located-trip column mapping (x_s, y_s, x_e, y_e) or an explicit
    (min_x, min_y, max_x, max_y) tuple. A degenerate (point) extent yields one
    cell; inverted or empty bounds are errors.
    """
    if isinstance(points_or_bounds, Mapping):
        cols = points_or_bounds
        xs = np.concatenate([np.atleast_1d(cols["x_s"]), np.atleast_1d(cols["x_e"])])
        ys = np.concatenate([np.atleast_1d(cols["y_s"]), np.atleast_1d(cols["y_e"])])
        if xs.size == 0:
            raise DataError("build_grid: no points")
        min_x, max_x = float(xs.min()), float(xs.max())
        min_y, max_y = float(ys.min()), float(ys.max())
    else:
        min_x, min_y, max_x, max_y = map(float, points_or_bounds)
    if not (np.isfinite([min_x, min_y, max_x, max_y]).all()):
        raise DataError("build_grid: non-finite bounds")
    if max_x < min_x or max_y < min_y:
        raise DataError("build_grid: zero-extent (inverted) bounds")
    cols_n = max(1, int(np.ceil((max_x - min_x) / cell_w - 1e-12)))
    rows_n = max(1, int(np.ceil((max_y - min_y) / cell_h - 1e-12)))
    return GridSpec(
        origin_x=min_x,
        origin_y=max_y,
        rows=rows_n,
        cols=cols_n,
        cell_w=cell_w,
        cell_h=cell_h,
    )


def _cells(g: GridSpec, x: np.ndarray, y: np.ndarray):
    """Vectorized cell assignment; returns (r, c, in_grid)."""
    c = np.floor((x - g.origin_x) / g.cell_w).astype(np.int64)
    r = np.floor((g.origin_y - y) / g.cell_h).astype(np.int64)
    ok = (r >= 0) & (r < g.rows) & (c >= 0) & (c < g.cols)
    return r, c, ok


def point_to_cell(g: GridSpec, x: float, y: float) -> tuple[int, int] | None:
    """Cell (r, c) for a point, or None when outside the grid."""
    r, c, ok = _cells(g, np.asarray([x], float), np.asarray([y], float))
    if not ok[0]:
        return None
    return int(r[0]), int(c[0])


def _accumulate(g: GridSpec, x, y, out: np.ndarray) -> int:
    """Add one count per point into out (H, W); returns dropped count."""
    r, c, ok = _cells(g, np.asarray(x, float), np.asarray(y, float))
    flat = r[ok] * g.cols + c[ok]
    if flat.size:
        binned = np.bincount(flat, minlength=g.rows * g.cols)
        if binned.max() + int(out.max()) > MAX_PIXEL:
            raise DataError("cell count exceeds 16-bit range")
        out += binned.astype(out.dtype).reshape(g.rows, g.cols)
    return int((~ok).sum())


def _hour_offsets(ts: np.ndarray, t0: datetime) -> np.ndarray:
    base = np.datetime64(t0.isoformat())
    return ((ts - base) // np.timedelta64(1, "h")).astype(np.int64)


def rasterize_hour(located: Mapping, g: GridSpec, d: date, h: int) -> DemandFrame:
    """One frame: pickups start in (d, h), dropoffs end in (d, h)."""
    t0 = datetime.combine(d, time(hour=h))
    start_off = _hour_offsets(located["start"], t0)
    end_off = _hour_offsets(located["end"], t0)
    pickup = np.zeros((g.rows, g.cols), dtype=np.uint16)
    dropoff = np.zeros((g.rows, g.cols), dtype=np.uint16)
    sel_p = start_off == 0
    sel_d = end_off == 0
    _accumulate(g, located["x_s"][sel_p], located["y_s"][sel_p], pickup)
    _accumulate(g, located["x_e"][sel_d], located["y_e"][sel_d], dropoff)
    return DemandFrame(day=d, hour=h, pickup=pickup, dropoff=dropoff)


def find_missing_hours(
    start_day: date, end_day: date, tz_name: str
) -> list[tuple[date, int]]:
    """Local clock hours that do not exist (DST spring-forward)."""
    tz = ZoneInfo(tz_name)
    out = []
    d = start_day
    while d <= end_day:
        for h in range(24):
            naive = datetime.combine(d, time(hour=h))
            mapped = naive.replace(tzinfo=tz).astimezone(timezone.utc).astimezone(tz)
            if mapped.replace(tzinfo=None) != naive:
                out.append((d, h))
        d += timedelta(days=1)
    return out


def rasterize_range(
    located: Mapping,
    g: GridSpec,
    start_day: date,
    end_day: date,
    missing_hours: Iterable[tuple[date, int]] | None = None,
    tz_name: str | None = None,
) -> FrameStore:
    """FrameStore with one frame per hour of [start_day, end_day].

    Trips outside the range or the grid are dropped and tallied. Missing
    (nonexistent local) hours come out all-zero with missing=True; pass them
    explicitly or supply tz_name to derive them from the calendar.
    """
    if missing_hours is None:
        missing_hours = (
            find_missing_hours(start_day, end_day, tz_name) if tz_name else ()
        )
    n_days = (end_day - start_day).days + 1
    if n_days < 1:
        raise DataError("rasterize_range: end_day precedes start_day")
    T = n_days * 24
    hw = g.rows * g.cols
    pickup = np.zeros((T, g.rows, g.cols), dtype=np.uint16)
    dropoff = np.zeros((T, g.rows, g.cols), dtype=np.uint16)
    dropped = {
        "start_out_of_range": 0,
        "end_out_of_range": 0,
        "start_out_of_grid": 0,
        "end_out_of_grid": 0,
        "start_in_missing_hour": 0,
        "end_in_missing_hour": 0,
    }

    t0 = datetime.combine(start_day, time())
    missing = np.zeros(T, dtype=bool)
    for d, h in missing_hours:
        idx = (d - start_day).days * 24 + h
        if 0 <= idx < T:
            missing[idx] = True

    def scatter(ts, xs, ys, target: np.ndarray, tag: str) -> None:
        if ts.size == 0:
            return
        off = _hour_offsets(ts, t0)
        in_range = (off >= 0) & (off < T)
        dropped[f"{tag}_out_of_range"] += int((~in_range).sum())
        off, xs, ys = off[in_range], xs[in_range], ys[in_range]
        in_missing = missing[off]
        dropped[f"{tag}_in_missing_hour"] += int(in_missing.sum())
        off, xs, ys = off[~in_missing], xs[~in_missing], ys[~in_missing]
        r, c, ok = _cells(g, xs, ys)
        dropped[f"{tag}_out_of_grid"] += int((~ok).sum())
        flat = off[ok] * hw + r[ok] * g.cols + c[ok]
        uniq, counts = np.unique(flat, return_counts=True)
        if counts.size and counts.max() > MAX_PIXEL:
            raise DataError("cell count exceeds 16-bit range")
        target.reshape(-1)[uniq] = counts.astype(np.uint16)

    scatter(located["start"], located["x_s"], located["y_s"], pickup, "start")
    scatter(located["end"], located["x_e"], located["y_e"], dropoff, "end")
    return FrameStore(
        grid=g,
        start_day=start_day,
        pickup=pickup,
        dropoff=dropoff,
        missing=missing,
        dropped=dropped,
    )


# --------------------------------------------------------------------------
# PNG + manifest persistence
# --------------------------------------------------------------------------

def write_image16(arr: np.ndarray, path: str | Path) -> None:
    """Write a 2-D count array as 16-bit grayscale non-interlaced PNG."""
    a = np.asarray(arr)
    if a.ndim != 2:
        raise DataError("write_image16: expected a 2-D array")
    if a.min() < 0 or a.max() > MAX_PIXEL:
        raise DataError("pixel values outside 0..65535")
    img = Image.fromarray(a.astype(np.uint16))
    if img.mode != "I;16":
        raise DataError(f"unexpected image mode {img.mode} for 16-bit write")
    img.save(path, format="PNG")


def read_image16(path: str | Path) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if img.mode not in ("I;16", "I"):
        raise DataError(f"{path}: expected 16-bit grayscale, got mode {img.mode}")
    return np.asarray(img, dtype=np.uint16)


def frame_filename(channel: str, day: date, hour: int) -> str:
    return f"{channel}_{day.strftime('%Y%m%d')}_{hour:02d}.png"


def write_frame(frame: DemandFrame, directory: str | Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    p_path = directory / frame_filename("pickup", frame.day, frame.hour)
    d_path = directory / frame_filename("dropoff", frame.day, frame.hour)
    write_image16(frame.pickup, p_path)
    write_image16(frame.dropoff, d_path)
    return p_path, d_path


def read_frame(directory: str | Path, day: date, hour: int) -> DemandFrame:
    directory = Path(directory)
    pickup = read_image16(directory / frame_filename("pickup", day, hour))
    dropoff = read_image16(directory / frame_filename("dropoff", day, hour))
    return DemandFrame(day=day, hour=hour, pickup=pickup, dropoff=dropoff)


def write_gridspec(g: GridSpec, path: str | Path) -> None:
    lines = [
        f"origin_x={g.origin_x!r}",
        f"origin_y={g.origin_y!r}",
        f"rows={g.rows}",
        f"cols={g.cols}",
        f"cell_w={g.cell_w!r}",
        f"cell_h={g.cell_h!r}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_gridspec(path: str | Path) -> GridSpec:
    kv = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        kv[key.strip()] = val.strip()
    try:
        return GridSpec(
            origin_x=float(kv["origin_x"]),
            origin_y=float(kv["origin_y"]),
            rows=int(kv["rows"]),
            cols=int(kv["cols"]),
            cell_w=float(kv["cell_w"]),
            cell_h=float(kv["cell_h"]),
        )
    except KeyError as exc:
        raise DataError(f"grid spec file {path} missing key {exc}") from exc


def write_store(store: FrameStore, directory: str | Path) -> None:
    """Frames as PNGs plus manifest.csv and gridspec.txt."""
    directory = Path(directory)
    frames_dir = directory / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    write_gridspec(store.grid, directory / "gridspec.txt")
    with open(directory / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["channel", "date", "hour", "filename", "missing"])
        for i in range(store.n_hours):
            frame = store.frame(i)
            for channel in ("pickup", "dropoff"):
                name = frame_filename(channel, frame.day, frame.hour)
                w.writerow(
                    [
                        channel,
                        frame.day.isoformat(),
                        frame.hour,
                        f"frames/{name}",
                        int(frame.missing),
                    ]
                )
            write_frame(frame, frames_dir)


def read_store(directory: str | Path) -> FrameStore:
    directory = Path(directory)
    grid = read_gridspec(directory / "gridspec.txt")
    manifest = directory / "manifest.csv"
    if not manifest.exists():
        raise DataError(f"no manifest.csv under {directory}")
    entries: dict[tuple[date, int], dict[str, tuple[str, bool]]] = {}
    with open(manifest, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            d = date.fromisoformat(row["date"])
            key = (d, int(row["hour"]))
            entries.setdefault(key, {})[row["channel"]] = (
                row["filename"],
                bool(int(row["missing"])),
            )
    if not entries:
        raise DataError(f"{manifest}: empty manifest")
    keys = sorted(entries)
    start_day = keys[0][0]
    t_last = (keys[-1][0] - start_day).days * 24 + keys[-1][1]
    T = t_last + 1
    pickup = np.zeros((T, grid.rows, grid.cols), dtype=np.uint16)
    dropoff = np.zeros((T, grid.rows, grid.cols), dtype=np.uint16)
    missing = np.zeros(T, dtype=bool)
    for (d, h), channels in entries.items():
        idx = (d - start_day).days * 24 + h
        for channel, (fname, miss) in channels.items():
            arr = read_image16(directory / fname)
            if arr.shape != grid.shape:
                raise DataError(f"{fname}: shape {arr.shape} != grid {grid.shape}")
            (pickup if channel == "pickup" else dropoff)[idx] = arr
            missing[idx] = miss
    return FrameStore(
        grid=grid, start_day=start_day, pickup=pickup, dropoff=dropoff, missing=missing
    )
