"""Tract geometry and WGS84 -> UTM projection.

Resolves census-tract identifiers to centroid coordinates, filters tracts by a
municipal boundary polygon, and projects geographic coordinates to transverse
Mercator (UTM) meters with a 6th-order Krueger series in the third flattening,
accurate to well under a centimeter within a zone.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, GeometryError

__all__ = [
    "ProjectionSpec",
    "TractPolygon",
    "CentroidTable",
    "polygon_centroid",
    "point_in_polygon",
    "wgs84_to_utm",
    "utm_to_wgs84",
    "build_centroid_table",
    "geolocate_trips",
    "load_feature_collection",
    "write_centroid_table",
    "read_centroid_table",
]


# --------------------------------------------------------------------------
# projection
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionSpec:
    utm_zone: int = 14
    north: bool = True
    a: float = 6378137.0
    f: float = 1.0 / 298.257223563
    k0: float = 0.9996
    false_easting: float = 500000.0

    def __post_init__(self) -> None:
        if not 1 <= self.utm_zone <= 60:
            raise ConfigError(f"utm_zone must be in 1..60, got {self.utm_zone}")
        if not 0.0 < self.f < 1.0:
            raise ConfigError(f"flattening must be in (0, 1), got {self.f}")

    @property
    def false_northing(self) -> float:
        return 0.0 if self.north else 10000000.0

    @property
    def central_meridian(self) -> float:
        return -183.0 + 6.0 * self.utm_zone


def _krueger_coefficients(n: float) -> tuple[float, list[float], list[float]]:
    """Rectifying radius ratio A/a and the forward/inverse series in n.

    Coefficients follow the 6th-order expansion of the Gauss-Krueger mapping
    in the third flattening n = f / (2 - f).
    """
    n2, n3, n4, n5, n6 = n * n, n**3, n**4, n**5, n**6
    rect = (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0) / (1.0 + n)
    alpha = [
        n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288
        + 7891 * n6 / 37800,
        13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630
        - 1983433 * n6 / 1935360,
        61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880 + 167603 * n6 / 181440,
        49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
        34729 * n5 / 80640 - 3418889 * n6 / 1995840,
        212378941 * n6 / 319334400,
    ]
    beta = [
        n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512
        + 96199 * n6 / 604800,
        n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105 - 1118711 * n6 / 3870720,
        17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
        4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
        4583 * n5 / 161280 - 108847 * n6 / 3991680,
        20648693 * n6 / 638668800,
    ]
    return rect, alpha, beta


def wgs84_to_utm(lat, lon, spec: ProjectionSpec = ProjectionSpec()):
    """Project geographic degrees to (easting, northing) meters.

    Accepts scalars or array-likes; returns matching numpy arrays (or floats
    for scalar input). Accuracy is ~1e-5 m within +-10 degrees of the central
    meridian.
    """
    lat_arr = np.asarray(lat, dtype=np.float64)
    lon_arr = np.asarray(lon, dtype=np.float64)
    scalar = lat_arr.ndim == 0 and lon_arr.ndim == 0
    if np.any(np.abs(lat_arr) >= 84.0):
        raise DataError("latitude out of range: |lat| must be < 84 degrees")
    if np.any(np.abs(lon_arr) > 180.0):
        raise DataError("longitude out of range: |lon| must be <= 180 degrees")

    e2 = spec.f * (2.0 - spec.f)
    e = math.sqrt(e2)
    n = spec.f / (2.0 - spec.f)
    rect, alpha, _ = _krueger_coefficients(n)
    radius = spec.a * rect

    phi = np.radians(lat_arr)
    lam = np.radians(lon_arr - spec.central_meridian)

    # exact conformal latitude via tau' = tan(chi)
    t = np.tan(phi)
    sigma = np.sinh(e * np.arctanh(e * t / np.sqrt(1.0 + t * t)))
    taup = t * np.sqrt(1.0 + sigma * sigma) - sigma * np.sqrt(1.0 + t * t)

    cos_lam = np.cos(lam)
    xi = np.arctan2(taup, cos_lam)
    eta = np.arcsinh(np.sin(lam) / np.hypot(taup, cos_lam))

    xi_s, eta_s = xi.copy(), eta.copy()
    for j, a_j in enumerate(alpha, start=1):
        xi_s += a_j * np.sin(2 * j * xi) * np.cosh(2 * j * eta)
        eta_s += a_j * np.cos(2 * j * xi) * np.sinh(2 * j * eta)

    easting = spec.false_easting + spec.k0 * radius * eta_s
    northing = spec.false_northing + spec.k0 * radius * xi_s
    if scalar:
        return float(easting), float(northing)
    return easting, northing


def utm_to_wgs84(easting, northing, spec: ProjectionSpec = ProjectionSpec()):
    """Inverse projection; round-trips with wgs84_to_utm to ~1e-11 degrees."""
    e_arr = np.asarray(easting, dtype=np.float64)
    n_arr = np.asarray(northing, dtype=np.float64)
    scalar = e_arr.ndim == 0 and n_arr.ndim == 0

    e2 = spec.f * (2.0 - spec.f)
    e = math.sqrt(e2)
    n = spec.f / (2.0 - spec.f)
    rect, _, beta = _krueger_coefficients(n)
    radius = spec.a * rect

    xi = (n_arr - spec.false_northing) / (spec.k0 * radius)
    eta = (e_arr - spec.false_easting) / (spec.k0 * radius)

    xi_p, eta_p = xi.copy(), eta.copy()
    for j, b_j in enumerate(beta, start=1):
        xi_p -= b_j * np.sin(2 * j * xi) * np.cosh(2 * j * eta)
        eta_p -= b_j * np.cos(2 * j * xi) * np.sinh(2 * j * eta)

    taup = np.sin(xi_p) / np.hypot(np.sinh(eta_p), np.cos(xi_p))
    lam = np.arctan2(np.sinh(eta_p), np.cos(xi_p))

    # Newton inversion of tau' = tau*sqrt(1+sigma^2) - sigma*sqrt(1+tau^2)
    tau = taup.copy()
    for _ in range(6):
        sigma = np.sinh(e * np.arctanh(e * tau / np.sqrt(1.0 + tau * tau)))
        f_val = tau * np.sqrt(1.0 + sigma * sigma) - sigma * np.sqrt(1.0 + tau * tau)
        deriv = (
            (np.sqrt(1.0 + sigma * sigma) * np.sqrt(1.0 + tau * tau) - sigma * tau)
            * (1.0 - e2) * np.sqrt(1.0 + tau * tau)
            / (1.0 + (1.0 - e2) * tau * tau)
        )
        tau = tau - (f_val - taup) / deriv

    lat = np.degrees(np.arctan(tau))
    lon = np.degrees(lam) + spec.central_meridian
    if scalar:
        return float(lat), float(lon)
    return lat, lon


# --------------------------------------------------------------------------
# polygons
# --------------------------------------------------------------------------

@dataclass
class TractPolygon:
    """Polygon with an exterior ring and optional holes, in (lon, lat) degrees.

    Rings are stored closed (first vertex repeated last). The exterior ring
    must enclose nonzero area.
    """

    geoid: str
    rings: list[np.ndarray]

    def __post_init__(self) -> None:
        norm = []
        for ring in self.rings:
            arr = np.asarray(ring, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
                raise GeometryError(f"tract {self.geoid}: ring needs >= 3 vertices")
            if not np.array_equal(arr[0], arr[-1]):
                arr = np.vstack([arr, arr[:1]])
            if arr.shape[0] < 4:
                raise GeometryError(f"tract {self.geoid}: ring needs >= 4 closed vertices")
            norm.append(arr)
        if not norm:
            raise GeometryError(f"tract {self.geoid}: no rings")
        self.rings = norm

    @property
    def exterior(self) -> np.ndarray:
        return self.rings[0]

    @property
    def holes(self) -> list[np.ndarray]:
        return self.rings[1:]


def _ring_signed_area_and_centroid(ring: np.ndarray) -> tuple[float, float, float]:
    # shifting to the first vertex keeps the shoelace sums small, avoiding
    # catastrophic cancellation when coordinates sit far from the origin
    ox, oy = ring[0, 0], ring[0, 1]
    x, y = ring[:-1, 0] - ox, ring[:-1, 1] - oy
    xn, yn = ring[1:, 0] - ox, ring[1:, 1] - oy
    cross = x * yn - xn * y
    area2 = cross.sum()
    if area2 == 0.0:
        return 0.0, 0.0, 0.0
    cx = ((x + xn) * cross).sum() / (3.0 * area2)
    cy = ((y + yn) * cross).sum() / (3.0 * area2)
    return 0.5 * area2, cx + ox, cy + oy


def polygon_centroid(poly: TractPolygon) -> tuple[float, float]:
    """Area-weighted centroid of exterior minus holes (planar, degree space)."""
    total_area = 0.0
    sx = sy = 0.0
    for i, ring in enumerate(poly.rings):
        area, cx, cy = _ring_signed_area_and_centroid(ring)
        weight = abs(area) if i == 0 else -abs(area)
        total_area += weight
        sx += weight * cx
        sy += weight * cy
    if total_area <= 0.0:
        raise GeometryError(f"tract {poly.geoid}: degenerate polygon (zero area)")
    return sx / total_area, sy / total_area


def _on_segment(px, py, ax, ay, bx, by) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if cross != 0.0:
        return False
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def _winding_number(ring: np.ndarray, px: float, py: float) -> int:
    wn = 0
    x, y = ring[:-1, 0], ring[:-1, 1]
    xn, yn = ring[1:, 0], ring[1:, 1]
    for ax, ay, bx, by in zip(x, y, xn, yn):
        if ay <= py:
            if by > py and (bx - ax) * (py - ay) - (by - ay) * (px - ax) > 0:
                wn += 1
        else:
            if by <= py and (bx - ax) * (py - ay) - (by - ay) * (px - ax) < 0:
                wn -= 1
    return wn


def point_in_polygon(pt: tuple[float, float], poly: TractPolygon) -> bool:
    """Winding-number containment; boundary counts as inside, holes as outside."""
    px, py = float(pt[0]), float(pt[1])
    for ring in poly.rings:
        for (ax, ay), (bx, by) in zip(ring[:-1], ring[1:]):
            if _on_segment(px, py, ax, ay, bx, by):
                return True
    if _winding_number(poly.exterior, px, py) == 0:
        return False
    for hole in poly.holes:
        if _winding_number(hole, px, py) != 0:
            return False
    return True


# --------------------------------------------------------------------------
# centroid table and trip geolocation
# --------------------------------------------------------------------------

@dataclass
class CentroidTable:
    """geoid -> centroid in degrees and projected UTM meters."""

    spec: ProjectionSpec
    lonlat: dict[str, tuple[float, float]] = field(default_factory=dict)
    utm: dict[str, tuple[float, float]] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.utm)

    def resolve(self, geoid: str) -> str | None:
        """Exact full-string match first, then unique 6-digit-suffix match."""
        if geoid in self.utm:
            return geoid
        suffix = geoid[-6:] if len(geoid) >= 6 else geoid
        hits = self._suffix_index().get(suffix, ())
        if len(hits) == 1:
            return hits[0]
        return None

    def _suffix_index(self) -> dict[str, tuple[str, ...]]:
        if not hasattr(self, "_suffixes"):
            idx: dict[str, list[str]] = {}
            for g in self.utm:
                idx.setdefault(g[-6:], []).append(g)
            self._suffixes = {k: tuple(v) for k, v in idx.items()}
        return self._suffixes


def build_centroid_table(
    polygons: Iterable[TractPolygon], spec: ProjectionSpec = ProjectionSpec()
) -> CentroidTable:
    table = CentroidTable(spec=spec)
    for poly in polygons:
        if poly.geoid in table.lonlat or poly.geoid in table.skipped:
            raise DataError(f"duplicate geoid in tract input: {poly.geoid}")
        try:
            lon, lat = polygon_centroid(poly)
        except GeometryError:
            table.skipped.append(poly.geoid)
            continue
        table.lonlat[poly.geoid] = (lon, lat)
        table.utm[poly.geoid] = wgs84_to_utm(lat, lon, spec)
    return table


def boundary_allowed_geoids(
    table: CentroidTable,
    boundary: Sequence[TractPolygon] | TractPolygon,
    containment: str = "centroid",
    polygons: Sequence[TractPolygon] | None = None,
) -> set[str]:
    """Geoids whose tract passes the boundary containment test.

    "centroid" tests the tract centroid; "any-vertex" tests the exterior
    vertices and needs the tract polygons.
    """
    if containment not in ("centroid", "any-vertex"):
        raise ConfigError(f"unknown containment mode: {containment}")
    if isinstance(boundary, TractPolygon):
        boundary = [boundary]
    allowed: set[str] = set()
    if containment == "centroid":
        for geoid, pt in table.lonlat.items():
            if any(point_in_polygon(pt, b) for b in boundary):
                allowed.add(geoid)
    else:
        if polygons is None:
            raise ConfigError("any-vertex containment requires tract polygons")
        for poly in polygons:
            if poly.geoid not in table.utm:
                continue
            verts = poly.exterior[:-1]
            if any(point_in_polygon((vx, vy), b) for vx, vy in verts for b in boundary):
                allowed.add(poly.geoid)
    return allowed


def geolocate_trips(
    trips: Sequence,
    table: CentroidTable,
    boundary: Sequence[TractPolygon] | TractPolygon | None = None,
    containment: str = "centroid",
    polygons: Sequence[TractPolygon] | None = None,
):
    """Attach origin/destination UTM coordinates to trips.

    Returns (located, rejections): located is a dict of aligned numpy columns
    (start/end as datetime64[s], x_s, y_s, x_e, y_e), rejections counts
    {"unresolved_geoid", "outside_boundary"}. A trip is kept only when both
    endpoints resolve and both tracts pass the boundary test.
    """
    allowed: set[str] | None = None
    if boundary is not None:
        allowed = boundary_allowed_geoids(table, boundary, containment, polygons)

    rejections = {"unresolved_geoid": 0, "outside_boundary": 0}
    starts, ends = [], []
    xs, ys, xe, ye = [], [], [], []
    for trip in trips:
        o = table.resolve(trip.origin_geoid)
        d = table.resolve(trip.dest_geoid)
        if o is None or d is None:
            rejections["unresolved_geoid"] += 1
            continue
        if allowed is not None and (o not in allowed or d not in allowed):
            rejections["outside_boundary"] += 1
            continue
        starts.append(trip.start_time)
        ends.append(trip.end_time)
        ox, oy = table.utm[o]
        dx, dy = table.utm[d]
        xs.append(ox)
        ys.append(oy)
        xe.append(dx)
        ye.append(dy)

    located = {
        "start": np.array(starts, dtype="datetime64[s]"),
        "end": np.array(ends, dtype="datetime64[s]"),
        "x_s": np.array(xs, dtype=np.float64),
        "y_s": np.array(ys, dtype=np.float64),
        "x_e": np.array(xe, dtype=np.float64),
        "y_e": np.array(ye, dtype=np.float64),
    }
    return located, rejections


# --------------------------------------------------------------------------
# GeoJSON and CSV interfaces
# --------------------------------------------------------------------------

def load_feature_collection(
    path: str | Path, geoid_property: str = "GEOID"
) -> list[TractPolygon]:
    """Read Polygon/MultiPolygon features into TractPolygon objects."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise DataError(f"{path}: expected a GeoJSON FeatureCollection")
    out: list[TractPolygon] = []
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        geoid = str(props.get(geoid_property, "")).strip()
        if not geoid:
            raise DataError(f"{path}: feature missing property {geoid_property!r}")
        gtype = geom.get("type")
        if gtype == "Polygon":
            rings = [np.asarray(r, dtype=np.float64) for r in geom["coordinates"]]
        elif gtype == "MultiPolygon":
            # keep the largest part; census tracts are single-part in practice
            def part_area(part) -> float:
                ring = np.asarray(part[0], dtype=np.float64)
                if not np.array_equal(ring[0], ring[-1]):
                    ring = np.vstack([ring, ring[:1]])
                return abs(_ring_signed_area_and_centroid(ring)[0])

            best = max(geom["coordinates"], key=part_area)
            rings = [np.asarray(r, dtype=np.float64) for r in best]
        else:
            raise DataError(f"{path}: unsupported geometry type {gtype!r}")
        out.append(TractPolygon(geoid=geoid, rings=rings))
    return out


def write_centroid_table(table: CentroidTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["geoid", "lon", "lat", "easting", "northing"])
        for geoid in sorted(table.utm):
            lon, lat = table.lonlat[geoid]
            e, n = table.utm[geoid]
            w.writerow([geoid, f"{lon:.10f}", f"{lat:.10f}", f"{e:.4f}", f"{n:.4f}"])


def read_centroid_table(
    path: str | Path, spec: ProjectionSpec = ProjectionSpec()
) -> CentroidTable:
    table = CentroidTable(spec=spec)
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            geoid = row["geoid"]
            if geoid in table.utm:
                raise DataError(f"duplicate geoid in centroid CSV: {geoid}")
            if "easting" in row and row.get("easting"):
                table.lonlat[geoid] = (float(row["lon"]), float(row["lat"]))
                table.utm[geoid] = (float(row["easting"]), float(row["northing"]))
            else:
                lon, lat = float(row["lon"]), float(row["lat"])
                table.lonlat[geoid] = (lon, lat)
                table.utm[geoid] = wgs84_to_utm(lat, lon, spec)
    return table
