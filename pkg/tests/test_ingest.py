import io
import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demandgrid import ingest
from demandgrid.errors import ConfigError, DataError, SchemaError

HEADER = (
    "device_id,vehicle_type,start_time,end_time,"
    "duration_min,distance_km,origin_geoid,dest_geoid"
)


def make_csv(*rows):
    return io.StringIO("\n".join([HEADER, *rows]) + "\n")


GOOD = "dev1,scooter,2019-03-01 10:00:00,2019-03-01 10:30:00,30,5.0,48453000101,48453000202"


def row_with(**kw):
    base = {
        "device_id": "dev1",
        "vehicle_type": "scooter",
        "start_time": "2019-03-01 10:00:00",
        "end_time": "2019-03-01 10:30:00",
        "duration_min": "30",
        "distance_km": "5.0",
        "origin_geoid": "48453000101",
        "dest_geoid": "48453000202",
    }
    base.update(kw)
    return ",".join(
        base[k]
        for k in (
            "device_id",
            "vehicle_type",
            "start_time",
            "end_time",
            "duration_min",
            "distance_km",
            "origin_geoid",
            "dest_geoid",
        )
    )


# ---------------------------------------------------------------- parsing

def test_two_wellformed_rows():
    rows, errors = ingest.parse_trips(make_csv(GOOD, GOOD))
    assert len(rows) == 2
    assert errors == []
    assert rows[0].duration == 30.0
    assert rows[1].row_index == 1


def test_non_numeric_duration_is_row_error():
    rows, errors = ingest.parse_trips(make_csv(row_with(duration_min="abc"), GOOD))
    assert len(rows) == 1
    assert len(errors) == 1
    assert errors[0].reason == "malformed:duration"
    assert errors[0].row_index == 0


def test_missing_mandatory_column_is_fatal():
    bad = io.StringIO("a,b\n1,2\n")
    with pytest.raises(SchemaError, match="mandatory"):
        ingest.parse_trips(bad)


def test_missing_duration_column_is_tolerated():
    text = (
        "vehicle_type,start_time,end_time,distance_km,origin_geoid,dest_geoid\n"
        "scooter,2019-03-01 10:00:00,2019-03-01 10:30:00,5.0,1,2\n"
    )
    rows, errors = ingest.parse_trips(io.StringIO(text))
    assert errors == []
    assert rows[0].duration is None


def test_bad_timestamp_is_row_error():
    rows, errors = ingest.parse_trips(make_csv(row_with(start_time="not-a-time")))
    assert rows == []
    assert errors[0].reason == "malformed:start_time"


def test_unit_conversion():
    schema = ingest.ParseSchema(duration_unit="seconds", distance_unit="meters")
    rows, _ = ingest.parse_trips(
        make_csv(row_with(duration_min="1800", distance_km="5000")), schema
    )
    assert rows[0].duration == pytest.approx(30.0)
    assert rows[0].distance == pytest.approx(5.0)


def test_bad_unit_names_rejected():
    with pytest.raises(ConfigError):
        ingest.ParseSchema(duration_unit="fortnights")


# ---------------------------------------------------------------- filtering

def parse_one(row_text, **schema_kw):
    rows, errors = ingest.parse_trips(make_csv(row_text))
    assert errors == []
    return rows


def test_duration_half_minute_rejected():
    rows = parse_one(
        row_with(duration_min="0.5", end_time="2019-03-01 10:00:30")
    )
    kept, report = ingest.filter_trips(rows)
    assert kept == []
    assert report.rejections["duration"] == 1


def test_sixty_minutes_ten_km_kept():
    rows = parse_one(
        row_with(duration_min="60", end_time="2019-03-01 11:00:00", distance_km="10")
    )
    kept, report = ingest.filter_trips(rows)
    assert len(kept) == 1
    assert kept[0].speed == pytest.approx(10.0)
    assert report.kept_count == 1


def test_forty_km_rejected_distance():
    rows = parse_one(row_with(distance_km="40"))
    kept, report = ingest.filter_trips(rows)
    assert kept == []
    assert report.rejections["distance"] == 1


def test_mode_and_year_rejections():
    rows, _ = ingest.parse_trips(
        make_csv(
            row_with(vehicle_type="bicycle"),
            row_with(start_time="2018-03-01 10:00:00", end_time="2018-03-01 10:30:00"),
            GOOD,
        )
    )
    kept, report = ingest.filter_trips(rows)
    assert report.rejections["mode"] == 1
    assert report.rejections["year"] == 1
    assert report.kept_count == 1


def test_first_failure_attribution_order():
    # fails mode AND duration AND distance; must be counted under mode only
    rows = parse_one(row_with(vehicle_type="bicycle", duration_min="600", distance_km="99"))
    _, report = ingest.filter_trips(rows)
    assert report.rejections["mode"] == 1
    assert report.rejections["duration"] == 0
    assert report.rejections["distance"] == 0


def test_duration_column_mismatch_flagged_malformed():
    # column says 30 min but timestamps span 2 hours
    rows = parse_one(row_with(end_time="2019-03-01 12:00:00"))
    kept, report = ingest.filter_trips(rows)
    assert kept == []
    assert report.rejections["malformed"] == 1
    assert report.details.get("malformed:duration") == 1


def test_duration_derived_from_timestamps_when_column_absent():
    text = (
        "vehicle_type,start_time,end_time,distance_km,origin_geoid,dest_geoid\n"
        "scooter,2019-03-01 10:00:00,2019-03-01 10:30:00,5.0,1,2\n"
    )
    rows, _ = ingest.parse_trips(io.StringIO(text))
    kept, _ = ingest.filter_trips(rows)
    assert kept[0].duration == pytest.approx(30.0)


def test_empty_geoid_flagged_malformed():
    rows = parse_one(row_with(origin_geoid=""))
    kept, report = ingest.filter_trips(rows)
    assert kept == []
    assert report.details.get("malformed:geoid") == 1


def test_speed_bounds():
    # 1 km in 30 min -> 2 km/h (inclusive bound, kept)
    ok = parse_one(row_with(distance_km="1.0"))
    kept, _ = ingest.filter_trips(ok)
    assert len(kept) == 1
    # 0.4 km in 30 min -> 0.8 km/h (too slow)
    slow = parse_one(row_with(distance_km="0.4"))
    kept, report = ingest.filter_trips(slow)
    assert kept == []
    assert report.rejections["speed"] == 1


def test_retention_denominators():
    rows, _ = ingest.parse_trips(
        make_csv(row_with(vehicle_type="car"), GOOD, GOOD, row_with(distance_km="99"))
    )
    _, report = ingest.filter_trips(rows)
    assert report.input_count == 4
    assert report.candidate_count == 3
    assert report.retention_ratio == pytest.approx(2 / 4)
    assert report.retention_vs_candidates == pytest.approx(2 / 3)


# ---------------------------------------------------------------- summary

def test_summary_singleton():
    rows = parse_one(
        row_with(duration_min="7.08", end_time="2019-03-01 10:07:05", distance_km="1.6")
    )
    kept, _ = ingest.filter_trips(rows)
    s = ingest.trip_summary(kept)
    assert s.mean_duration == pytest.approx(7.08)
    assert s.median_duration == pytest.approx(7.08)


def test_summary_even_count_median_is_midpoint():
    records = []
    for d in (1, 2, 3, 4):
        rows = parse_one(
            row_with(
                duration_min=str(d * 10),
                end_time=f"2019-03-01 10:{d*10}:00",
                distance_km="2.0",
            )
        )
        kept, _ = ingest.filter_trips(rows)
        records += kept
    s = ingest.trip_summary(records)
    assert s.mean_duration == pytest.approx(25.0)
    assert s.median_duration == pytest.approx(25.0)


def test_summary_empty_errors():
    with pytest.raises(DataError):
        ingest.trip_summary([])


# ---------------------------------------------------------------- properties

@st.composite
def random_row(draw):
    vehicle = draw(st.sampled_from(["scooter", "bicycle", "moped"]))
    year = draw(st.sampled_from([2018, 2019, 2020]))
    dur = draw(st.floats(0.1, 200, allow_nan=False))
    dist = draw(st.floats(0.01, 50, allow_nan=False))
    start = f"{year}-03-01 10:00:00"
    mins = int(dur)
    end = f"{year}-03-01 {10 + mins // 60:02d}:{mins % 60:02d}:00"
    return row_with(
        vehicle_type=vehicle,
        start_time=start,
        end_time=end,
        duration_min=f"{dur:.2f}",
        distance_km=f"{dist:.2f}",
    )


@given(st.lists(random_row(), max_size=40))
@settings(max_examples=60, deadline=None)
def test_conservation_property(row_texts):
    rows, errors = ingest.parse_trips(make_csv(*row_texts) if row_texts else make_csv())
    kept, report = ingest.filter_trips(rows)
    assert report.kept_count + sum(report.rejections.values()) == report.input_count
    assert report.input_count == len(rows)
    assert len(rows) + len(errors) == len(row_texts)


@given(st.lists(random_row(), min_size=1, max_size=40), st.randoms())
@settings(max_examples=40, deadline=None)
def test_order_independence_property(row_texts, rnd):
    rows, _ = ingest.parse_trips(make_csv(*row_texts))
    _, report_a = ingest.filter_trips(rows)
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    _, report_b = ingest.filter_trips(shuffled)
    assert report_a.rejections == report_b.rejections
    assert report_a.kept_count == report_b.kept_count


@given(st.lists(random_row(), max_size=40))
@settings(max_examples=40, deadline=None)
def test_idempotence_property(row_texts):
    rows, _ = ingest.parse_trips(make_csv(*row_texts) if row_texts else make_csv())
    kept, _ = ingest.filter_trips(rows)
    kept2, report2 = ingest.filter_trips(kept)
    assert len(kept2) == len(kept)
    assert sum(report2.rejections.values()) == 0


# ---------------------------------------------------------------- files

def test_write_trips_roundtrip(tmp_path):
    rows = parse_one(GOOD)
    kept, report = ingest.filter_trips(rows)
    path = tmp_path / "kept.csv"
    ingest.write_trips(kept, path)
    back, errors = ingest.parse_trips(path)
    assert errors == []
    assert len(back) == 1
    assert back[0].duration == pytest.approx(30.0)
    assert back[0].origin_geoid == "48453000101"


def test_write_filter_report(tmp_path):
    rows = parse_one(GOOD)
    _, report = ingest.filter_trips(rows)
    csv_path = tmp_path / "report.csv"
    txt_path = tmp_path / "report.txt"
    ingest.write_filter_report(
        report, csv_path, txt_path, extra_rejections={"unresolved_geoid": 3}
    )
    text = txt_path.read_text()
    assert "rejected_unresolved_geoid" in text
    assert "kept" in text
    assert "kept-trip summary" in text
    assert csv_path.read_text().startswith("field,value")
