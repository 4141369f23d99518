"""Settlement gazetteer ingestion and coordinate sampling."""
import csv
import hashlib
import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, TypeVar, Union

import numpy as np

from geolocsft.core.errors import EmptyAfterParse, GeoLocError
from geolocsft.core.geodesy import EARTH_RADIUS_KM, destination_point, validate_point
from geolocsft.core.schemas import GeoPoint, SettlementRecord

logger = logging.getLogger(__name__)

T = TypeVar("T")

# Column indices of the geonames dump format.
# See https://download.geonames.org/export/dump/readme.txt
GEONAMEID_COL = 0
NAME_COL = 1
LATITUDE_COL = 4
LONGITUDE_COL = 5
POPULATION_COL = 14

DEFAULT_POPULATION_CAP = 5000
DEFAULT_SAMPLE_RADIUS_KM = 2.0


@dataclass
class IngestStats:
    rows: int = 0
    skipped: int = 0


def _parse_row(row: List[str]) -> SettlementRecord:
    if len(row) <= POPULATION_COL:
        raise ValueError(f"expected at least {POPULATION_COL + 1} columns, got {len(row)}")
    population = int(row[POPULATION_COL] or 0)
    if population < 0:
        raise ValueError(f"negative population {population}")
    return SettlementRecord(
        id=row[GEONAMEID_COL],
        name=row[NAME_COL],
        point=validate_point(float(row[LATITUDE_COL]), float(row[LONGITUDE_COL])),
        population=population,
    )


def iter_settlements(path: Union[str, Path], stats: IngestStats = None) -> Iterator[SettlementRecord]:
    """Streams settlements from a geonames-style TSV, skipping malformed rows.
    :param path: the TSV file
    :param stats: optional counter updated with rows seen and rows skipped
    """
    stats = stats if stats is not None else IngestStats()
    with open(path, "r", encoding="utf8", newline="") as f:
        reader = csv.reader(f, delimiter="\t", quoting=csv.QUOTE_NONE)
        for line_no, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            stats.rows += 1
            try:
                yield _parse_row(row)
            except (ValueError, GeoLocError) as e:
                stats.skipped += 1
                logger.debug("Skipping settlements row %d: %s", line_no, e)


def load_settlements(path: Union[str, Path]) -> List[SettlementRecord]:
    """Reads all valid settlements of a TSV file; warns once with the number of skipped rows."""
    if not Path(path).exists():
        raise FileNotFoundError(path)
    stats = IngestStats()
    records = list(iter_settlements(path, stats))
    if stats.skipped:
        logger.warning("Skipped %d malformed settlement rows of %d", stats.skipped, stats.rows)
    if not records:
        raise EmptyAfterParse(f"No valid settlement rows in {path}")
    return records


def iter_low_population(records: Iterable[SettlementRecord], cap: int = DEFAULT_POPULATION_CAP) -> Iterator[SettlementRecord]:
    if cap <= 0:
        raise ValueError("population cap must be > 0")
    return (r for r in records if r.population < cap)


def filter_low_population(records: Iterable[SettlementRecord], cap: int = DEFAULT_POPULATION_CAP) -> List[SettlementRecord]:
    """Keeps settlements with population strictly below cap, in input order."""
    return list(iter_low_population(records, cap))


def reservoir_sample(items: Iterable[T], n: int, seed: int) -> List[T]:
    """Uniform sample of n items from a stream of unknown length, in stream order."""
    rng = random.Random(seed)
    reservoir: List[tuple] = []
    for i, item in enumerate(items):
        if i < n:
            reservoir.append((i, item))
        else:
            j = rng.randint(0, i)
            if j < n:
                reservoir[j] = (i, item)
    return [item for _, item in sorted(reservoir, key=lambda pair: pair[0])]


def derive_seed(seed: int, key: str) -> int:
    """Stable per-item seed so results do not depend on processing order."""
    digest = hashlib.sha256(f"{seed}:{key}".encode("utf8")).digest()
    return int.from_bytes(digest[:8], "big")


def sample_coordinates(
        settlement: SettlementRecord,
        n: int,
        radius_km: float = DEFAULT_SAMPLE_RADIUS_KM,
        seed: int = 0,
) -> List[GeoPoint]:
    """Draws n points uniformly by area within radius_km of the settlement.
    Points are placed on the spherical cap around the center, so every point is within
    radius_km by great-circle distance.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if radius_km <= 0:
        raise ValueError("radius_km must be > 0")
    rng = np.random.default_rng(seed)
    max_angle = radius_km / EARTH_RADIUS_KM
    # uniform by area on a cap: sin^2(angle / 2) uniform in [0, sin^2(max_angle / 2))
    angles = 2.0 * np.arcsin(np.sqrt(rng.random(n)) * math.sin(max_angle / 2.0))
    bearings = rng.random(n) * 2.0 * math.pi
    return [
        destination_point(settlement.point, float(bearing), float(angle) * EARTH_RADIUS_KM)
        for angle, bearing in zip(angles, bearings)
    ]
