import math
from typing import List, Sequence, Tuple

import numpy as np

from geolocsft.core.errors import EmptyInput, NonFiniteInput, OutOfRangeLatitude
from geolocsft.core.schemas import GeoPoint, wrap_longitude

# IUGG mean Earth radius
EARTH_RADIUS_KM = 6371.0088

BBox = Tuple[float, float, float, float]


def validate_point(lat: float, lon: float) -> GeoPoint:
    """Builds a GeoPoint from raw degrees, wrapping the longitude into [-180, 180].
    :param lat: latitude in decimal degrees, must lie in [-90, 90]
    :param lon: longitude in decimal degrees, any finite value
    :return: the normalized GeoPoint
    """
    try:
        lat, lon = float(lat), float(lon)
    except (TypeError, ValueError) as e:
        raise NonFiniteInput(f"Coordinates are not numbers: {lat!r}, {lon!r}") from e
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise NonFiniteInput(f"Coordinates must be finite, got ({lat}, {lon})")
    if abs(lat) > 90.0:
        raise OutOfRangeLatitude(f"Latitude {lat} outside [-90, 90]")
    return GeoPoint(lat=lat, lon=wrap_longitude(lon))


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km on a sphere of radius EARTH_RADIUS_KM."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon) - math.radians(a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    # clamp against rounding at antipodes
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def pairwise_km(points: Sequence[GeoPoint]) -> np.ndarray:
    """Symmetric matrix of haversine distances, zero on the diagonal."""
    lat = np.radians(np.array([p.lat for p in points], dtype=float))
    lon = np.radians(np.array([p.lon for p in points], dtype=float))
    dphi = lat[None, :] - lat[:, None]
    dlmb = lon[None, :] - lon[:, None]
    h = np.sin(dphi / 2.0) ** 2 + np.cos(lat[:, None]) * np.cos(lat[None, :]) * np.sin(dlmb / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    return d


def geographic_medoid(points: Sequence[GeoPoint]) -> GeoPoint:
    """Returns the member minimizing the summed distance to all other members.
    Ties go to the lowest input index.
    """
    if len(points) == 0:
        raise EmptyInput("Cannot take the medoid of an empty point list")
    return points[medoid_index(points)]


def medoid_index(points: Sequence[GeoPoint]) -> int:
    if len(points) == 0:
        raise EmptyInput("Cannot take the medoid of an empty point list")
    totals = pairwise_km(points).sum(axis=1)
    # argmin returns the first occurrence of the minimum
    return int(np.argmin(totals))


def destination_point(origin: GeoPoint, bearing_rad: float, distance_km: float) -> GeoPoint:
    """Point reached by travelling distance_km along a great circle from origin."""
    delta = distance_km / EARTH_RADIUS_KM
    phi1, lmb1 = math.radians(origin.lat), math.radians(origin.lon)
    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(bearing_rad)
    phi2 = math.asin(min(1.0, max(-1.0, sin_phi2)))
    lmb2 = lmb1 + math.atan2(
        math.sin(bearing_rad) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * sin_phi2,
    )
    return validate_point(math.degrees(phi2), math.degrees(lmb2))


def bboxes_around(center: GeoPoint, radius_km: float) -> List[BBox]:
    """(min_lon, min_lat, max_lon, max_lat) boxes enclosing a circle of radius_km.
    A circle crossing the antimeridian yields two boxes, one on each side.
    """
    dlat = math.degrees(radius_km / EARTH_RADIUS_KM)
    cos_lat = max(math.cos(math.radians(center.lat)), 1e-6)
    dlon = dlat / cos_lat
    min_lat, max_lat = max(-90.0, center.lat - dlat), min(90.0, center.lat + dlat)
    if dlon >= 180.0:
        return [(-180.0, min_lat, 180.0, max_lat)]
    west, east = center.lon - dlon, center.lon + dlon
    if west < -180.0:
        return [(west + 360.0, min_lat, 180.0, max_lat), (-180.0, min_lat, east, max_lat)]
    if east > 180.0:
        return [(west, min_lat, 180.0, max_lat), (-180.0, min_lat, east - 360.0, max_lat)]
    return [(west, min_lat, east, max_lat)]


def in_bbox(point: GeoPoint, bbox: BBox) -> bool:
    min_lon, min_lat, max_lon, max_lat = bbox
    return min_lat <= point.lat <= max_lat and min_lon <= point.lon <= max_lon
