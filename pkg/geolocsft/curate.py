import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

from tqdm import tqdm

from geolocsft.core.errors import EmptyAfterParse, EmptySamples
from geolocsft.core.jsonl import file_sha256, write_models
from geolocsft.core.schemas import (
    PROBES_SCHEMA,
    BenchmarkManifest,
    BenchmarkSample,
    ManifestHeader,
    Probe,
    Provenance,
)
from geolocsft.curation.imagery import FetchStats, ImageryClient, fetch_images
from geolocsft.curation.manifest import build_manifest, write_manifest
from geolocsft.curation.settlements import (
    DEFAULT_POPULATION_CAP,
    DEFAULT_SAMPLE_RADIUS_KM,
    IngestStats,
    derive_seed,
    iter_low_population,
    iter_settlements,
    reservoir_sample,
    sample_coordinates,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _require(path: PathLike) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def run_filter(settlements: PathLike, output_path: PathLike, population_cap: int = DEFAULT_POPULATION_CAP) -> int:
    """Streams a settlements TSV and writes the low-population settlements as JSONL.
    :param settlements: geonames-style TSV
    :param output_path: destination JSONL of SettlementRecord
    :param population_cap: keep settlements with population strictly below this value
    :return: number of settlements written
    """
    stats = IngestStats()
    kept = write_models(output_path, iter_low_population(iter_settlements(_require(settlements), stats), population_cap))
    if stats.skipped:
        logger.warning("Skipped %d malformed settlement rows of %d", stats.skipped, stats.rows)
    if stats.rows == stats.skipped:
        raise EmptyAfterParse(f"No valid settlement rows in {settlements}")
    logger.info("Kept %d of %d settlements below population %d", kept, stats.rows - stats.skipped, population_cap)
    return kept


def run_sample(
        settlements: PathLike,
        output_path: PathLike,
        n_per_settlement: int = 1,
        radius_km: float = DEFAULT_SAMPLE_RADIUS_KM,
        population_cap: int = DEFAULT_POPULATION_CAP,
        seed: int = 0,
        max_settlements: Optional[int] = None,
        name: str = "probes",
) -> int:
    """Samples probe coordinates around every low-population settlement.
    Each settlement draws from its own seed derived from (seed, settlement id), so the probes of a
    settlement do not depend on which other settlements are present.
    :return: number of probes written
    """
    path = _require(settlements)
    stats = IngestStats()
    records = iter_low_population(iter_settlements(path, stats), population_cap)
    if max_settlements is not None:
        records = iter(reservoir_sample(records, max_settlements, seed))

    def probes() -> Iterator[Probe]:
        for record in records:
            for point in sample_coordinates(record, n_per_settlement, radius_km, derive_seed(seed, record.id)):
                yield Probe(settlement_id=record.id, point=point)

    header = ManifestHeader(
        schema_=PROBES_SCHEMA,
        name=name,
        version="1",
        provenance=Provenance(
            settlement_db_hash=file_sha256(path),
            population_cap=population_cap,
            sampling_seed=seed,
            sample_radius_km=radius_km,
        ),
    )
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(output_path, "w", encoding="utf8") as f:
        f.write(header.model_dump_json() + "\n")
        for probe in probes():
            f.write(probe.model_dump_json() + "\n")
            count += 1
    if stats.skipped:
        logger.warning("Skipped %d malformed settlement rows of %d", stats.skipped, stats.rows)
    logger.info("Wrote %d probes to %s", count, output_path)
    return count


def read_probes(path: PathLike) -> Tuple[ManifestHeader, List[Probe]]:
    with open(_require(path), "r", encoding="utf8") as f:
        lines = [line for line in f if line.strip()]
    if not lines:
        raise EmptySamples(f"{path} is empty")
    return ManifestHeader.model_validate_json(lines[0]), [Probe.model_validate_json(line) for line in lines[1:]]


def run_fetch(
        probes_path: PathLike,
        output_path: PathLike,
        client: ImageryClient,
        bbox_radius_km: float = 1.0,
        name: str = "benchmark",
        version: str = "1",
        jobs: int = 1,
) -> BenchmarkManifest:
    """Resolves every probe into nearby images and writes the deduplicated manifest.
    :param probes_path: JSONL written by run_sample
    :param output_path: manifest JSONL destination
    :param client: imagery API client
    :param bbox_radius_km: half-size of the search box around each probe
    :param jobs: probes fetched concurrently; the manifest does not depend on it
    """
    header, probes = read_probes(probes_path)
    stats = [FetchStats() for _ in probes]

    def fetch(i: int) -> List[BenchmarkSample]:
        probe = probes[i]
        return fetch_images(probe.point, bbox_radius_km, client, settlement_id=probe.settlement_id, stats=stats[i])

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        batches = list(tqdm(pool.map(fetch, range(len(probes))), total=len(probes), desc="Fetching images"))
    samples = [sample for batch in batches for sample in batch]
    logger.info(
        "Fetched %d images for %d probes with %d requests (%d outside bbox, %d invalid)",
        len(samples), len(probes), sum(s.requests for s in stats),
        sum(s.outside_bbox for s in stats), sum(s.invalid for s in stats),
    )
    manifest = build_manifest(name, samples, header.provenance, version=version)
    write_manifest(manifest, output_path)
    logger.info("Wrote %d unique samples to %s", len(manifest.samples), output_path)
    return manifest
