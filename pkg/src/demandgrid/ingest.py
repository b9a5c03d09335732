"""Trip-record parsing, validation, and multi-stage filtering.

Raw delimiter-separated trip exports are parsed into typed rows, then
filtered on vehicle mode, calendar year, duration, distance, and derived
speed bounds. Every rejected row is attributed to exactly one reason (the
first failing criterion in a fixed evaluation order) so reports are
deterministic and auditable.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

from .errors import ConfigError, DataError, SchemaError

__all__ = [
    "ParseSchema",
    "RawTripRow",
    "RowError",
    "TripRecord",
    "FilterConfig",
    "FilterReport",
    "TripSummary",
    "parse_trips",
    "filter_trips",
    "trip_summary",
    "write_trips",
    "write_filter_report",
]

# first-failing-criterion attribution order for filter_trips
REJECT_ORDER = ("mode", "year", "duration", "distance", "speed", "malformed")


@dataclass(frozen=True)
class ParseSchema:
    """Column-name map plus unit hints for the raw export."""

    device_id: str = "device_id"
    vehicle_type: str = "vehicle_type"
    start_time: str = "start_time"
    end_time: str = "end_time"
    duration: str = "duration_min"
    distance: str = "distance_km"
    origin_geoid: str = "origin_geoid"
    dest_geoid: str = "dest_geoid"
    timestamp_format: str | None = None  # None -> ISO 8601
    duration_unit: str = "minutes"  # or "seconds"
    distance_unit: str = "km"  # or "meters" | "miles"

    def __post_init__(self) -> None:
        if self.duration_unit not in ("minutes", "seconds"):
            raise ConfigError(f"unknown duration unit: {self.duration_unit}")
        if self.distance_unit not in ("km", "meters", "miles"):
            raise ConfigError(f"unknown distance unit: {self.distance_unit}")

    def duration_to_minutes(self, value: float) -> float:
        return value / 60.0 if self.duration_unit == "seconds" else value

    def distance_to_km(self, value: float) -> float:
        if self.distance_unit == "meters":
            return value / 1000.0
        if self.distance_unit == "miles":
            return value * 1.609344
        return value


@dataclass(slots=True)
class RawTripRow:
    row_index: int
    device_id: str
    vehicle_type: str
    start_time: datetime
    end_time: datetime
    duration: float | None  # minutes; None when the column is absent/blank
    distance: float  # km
    origin_geoid: str
    dest_geoid: str


@dataclass(slots=True)
class RowError:
    row_index: int
    reason: str


@dataclass(slots=True)
class TripRecord:
    row_index: int
    device_id: str
    vehicle_type: str
    start_time: datetime
    end_time: datetime
    duration: float  # minutes
    distance: float  # km
    speed: float  # km/h
    origin_geoid: str
    dest_geoid: str


@dataclass(frozen=True)
class FilterConfig:
    mode: str = "scooter"
    year: int = 2019
    duration_bounds: tuple[float, float] = (1.0, 120.0)
    distance_bounds: tuple[float, float] = (0.1, 35.0)
    speed_bounds: tuple[float, float] = (2.0, 26.0)

    def __post_init__(self) -> None:
        for name in ("duration_bounds", "distance_bounds", "speed_bounds"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"{name}: min must be < max, got ({lo}, {hi})")


@dataclass
class TripSummary:
    mean_duration: float
    median_duration: float
    mean_distance: float
    median_distance: float
    mean_speed: float
    median_speed: float


@dataclass
class FilterReport:
    input_count: int
    kept_count: int
    rejections: dict[str, int]
    details: dict[str, int] = field(default_factory=dict)
    summary: TripSummary | None = None

    @property
    def retention_ratio(self) -> float:
        """kept / all rows fed to the filter."""
        return self.kept_count / self.input_count if self.input_count else 0.0

    @property
    def candidate_count(self) -> int:
        """Rows surviving the mode and year stages, the base for quality cuts."""
        return self.input_count - self.rejections["mode"] - self.rejections["year"]

    @property
    def retention_vs_candidates(self) -> float:
        return self.kept_count / self.candidate_count if self.candidate_count else 0.0


def _parse_timestamp(text: str, fmt: str | None) -> datetime:
    if fmt is None:
        return datetime.fromisoformat(text)
    return datetime.strptime(text, fmt)


def parse_trips(
    source: IO[str] | str | Path | Iterable[str],
    schema: ParseSchema = ParseSchema(),
) -> tuple[list[RawTripRow], list[RowError]]:
    """Parse a header-bearing CSV into raw rows plus per-row errors.

    Unparsable cells skip the row with a structured error; a missing
    mandatory column aborts with SchemaError. Row order is preserved and
    row_index counts data rows from 0.
    """
    close_after = False
    if isinstance(source, (str, Path)):
        fh: IO[str] = open(source, "r", newline="", encoding="utf-8")
        close_after = True
    elif isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        fh = source  # type: ignore[assignment]
    else:
        fh = io.StringIO("\n".join(source))

    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("input has no header row")
        header = set(reader.fieldnames)
        mandatory = {
            schema.vehicle_type,
            schema.start_time,
            schema.end_time,
            schema.distance,
            schema.origin_geoid,
            schema.dest_geoid,
        }
        missing = sorted(mandatory - header)
        if missing:
            raise SchemaError(f"missing mandatory column(s): {', '.join(missing)}")
        has_duration = schema.duration in header
        has_device = schema.device_id in header

        rows: list[RawTripRow] = []
        errors: list[RowError] = []
        for idx, rec in enumerate(reader):
            try:
                start = _parse_timestamp(
                    rec[schema.start_time].strip(), schema.timestamp_format
                )
            except (ValueError, AttributeError):
                errors.append(RowError(idx, "malformed:start_time"))
                continue
            try:
                end = _parse_timestamp(
                    rec[schema.end_time].strip(), schema.timestamp_format
                )
            except (ValueError, AttributeError):
                errors.append(RowError(idx, "malformed:end_time"))
                continue

            duration: float | None = None
            if has_duration:
                cell = (rec[schema.duration] or "").strip()
                if cell:
                    try:
                        duration = schema.duration_to_minutes(float(cell))
                    except ValueError:
                        errors.append(RowError(idx, "malformed:duration"))
                        continue
            try:
                distance = schema.distance_to_km(float(rec[schema.distance].strip()))
            except (ValueError, AttributeError):
                errors.append(RowError(idx, "malformed:distance"))
                continue

            rows.append(
                RawTripRow(
                    row_index=idx,
                    device_id=(rec.get(schema.device_id) or "") if has_device else "",
                    vehicle_type=(rec[schema.vehicle_type] or "").strip(),
                    start_time=start,
                    end_time=end,
                    duration=duration,
                    distance=distance,
                    origin_geoid=(rec[schema.origin_geoid] or "").strip(),
                    dest_geoid=(rec[schema.dest_geoid] or "").strip(),
                )
            )
        return rows, errors
    finally:
        if close_after:
            fh.close()


def _first_failure(row: RawTripRow, cfg: FilterConfig) -> tuple[str | None, str | None, float]:
    """(reason, detail, effective_duration); reason None means kept."""
    if row.vehicle_type.lower() != cfg.mode.lower():
        return "mode", None, 0.0
    if row.start_time.year != cfg.year:
        return "year", None, 0.0

    derived = (row.end_time - row.start_time).total_seconds() / 60.0
    if row.end_time < row.start_time:
        return "malformed", "malformed:timestamps", 0.0
    if row.duration is None:
        duration = derived
    else:
        duration = row.duration
        if abs(duration - derived) > 1.0:
            # column disagrees with timestamps by more than a minute
            return "malformed", "malformed:duration", 0.0
    lo, hi = cfg.duration_bounds
    if not lo <= duration <= hi:
        return "duration", None, duration

    lo, hi = cfg.distance_bounds
    if not lo <= row.distance <= hi:
        return "distance", None, duration

    speed = row.distance / (duration / 60.0) if duration > 0 else float("inf")
    lo, hi = cfg.speed_bounds
    if not lo <= speed <= hi:
        return "speed", None, duration

    if not row.origin_geoid or not row.dest_geoid:
        return "malformed", "malformed:geoid", duration
    return None, None, duration


def filter_trips(
    rows: Sequence[RawTripRow], cfg: FilterConfig = FilterConfig()
) -> tuple[list[TripRecord], FilterReport]:
    """Apply the filtering criteria; rejections are data, not errors."""
    kept: list[TripRecord] = []
    rejections = {reason: 0 for reason in REJECT_ORDER}
    details: dict[str, int] = {}
    for row in rows:
        reason, detail, duration = _first_failure(row, cfg)
        if reason is not None:
            rejections[reason] += 1
            if detail:
                details[detail] = details.get(detail, 0) + 1
            continue
        kept.append(
            TripRecord(
                row_index=row.row_index,
                device_id=row.device_id,
                vehicle_type=row.vehicle_type,
                start_time=row.start_time,
                end_time=row.end_time,
                duration=duration,
                distance=row.distance,
                speed=row.distance / (duration / 60.0) if duration > 0 else float("inf"),
                origin_geoid=row.origin_geoid,
                dest_geoid=row.dest_geoid,
            )
        )
    report = FilterReport(
        input_count=len(rows),
        kept_count=len(kept),
        rejections=rejections,
        details=details,
        summary=trip_summary(kept) if kept else None,
    )
    return kept, report


def trip_summary(records: Sequence[TripRecord]) -> TripSummary:
    if not records:
        raise DataError("trip_summary: empty record set")
    durations = [r.duration for r in records]
    distances = [r.distance for r in records]
    speeds = [r.speed for r in records]
    return TripSummary(
        mean_duration=statistics.fmean(durations),
        median_duration=statistics.median(durations),
        mean_distance=statistics.fmean(distances),
        median_distance=statistics.median(distances),
        mean_speed=statistics.fmean(speeds),
        median_speed=statistics.median(speeds),
    )


# --------------------------------------------------------------------------
# file interfaces
# --------------------------------------------------------------------------

TRIP_COLUMNS = (
    "device_id",
    "vehicle_type",
    "start_time",
    "end_time",
    "duration_min",
    "distance_km",
    "speed_kmh",
    "origin_geoid",
    "dest_geoid",
)


def write_trips(records: Iterable[TripRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRIP_COLUMNS)
        for r in records:
            w.writerow(
                [
                    r.device_id,
                    r.vehicle_type,
                    r.start_time.isoformat(sep=" "),
                    r.end_time.isoformat(sep=" "),
                    f"{r.duration:.4f}",
                    f"{r.distance:.4f}",
                    f"{r.speed:.4f}",
                    r.origin_geoid,
                    r.dest_geoid,
                ]
            )


def write_filter_report(
    report: FilterReport,
    csv_path: str | Path,
    text_path: str | Path | None = None,
    extra_rejections: dict[str, int] | None = None,
) -> None:
    """Persist the report as CSV and optional human-readable text.

    extra_rejections lets the caller fold in downstream counts
    (unresolved_geoid / outside_boundary) from geolocation.
    """
    rows = [("input_rows", report.input_count)]
    rows += [(f"rejected_{k}", v) for k, v in report.rejections.items()]
    if extra_rejections:
        rows += [(f"rejected_{k}", v) for k, v in extra_rejections.items()]
    rows.append(("kept", report.kept_count))
    rows.append(("retention_vs_input", f"{report.retention_ratio:.6f}"))
    rows.append(("candidate_rows", report.candidate_count))
    rows.append(("retention_vs_candidates", f"{report.retention_vs_candidates:.6f}"))
    for k, v in sorted(report.details.items()):
        rows.append((f"detail_{k}", v))
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["field", "value"])
        w.writerows(rows)
    if text_path is not None:
        lines = ["trip filtering report", "---------------------"]
        lines += [f"{k:28s} {v}" for k, v in rows]
        if report.summary is not None:
            s = report.summary
            lines += [
                "",
                "kept-trip summary",
                f"duration min  mean {s.mean_duration:.2f}  median {s.median_duration:.2f}",
                f"distance km   mean {s.mean_distance:.2f}  median {s.median_distance:.2f}",
                f"speed km/h    mean {s.mean_speed:.2f}  median {s.median_speed:.2f}",
            ]
        Path(text_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
