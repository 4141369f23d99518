"""Benchmark manifest assembly and its JSONL file format.

Line 1 of a manifest file is a header record (name, version, provenance); each following
line is one BenchmarkSample.
"""
import hashlib
import random
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

from pydantic import ValidationError

from geolocsft.core.errors import EmptySamples, IncompleteProvenance
from geolocsft.core.schemas import BenchmarkManifest, BenchmarkSample, ManifestHeader, Provenance


def image_identity(sample: BenchmarkSample) -> str:
    return str(sample.metadata.get("image_id") or sample.image_ref)


def stable_sample_id(name: str, identity: str) -> str:
    return f"{name}-{hashlib.sha256(identity.encode('utf8')).hexdigest()[:12]}"


def _provenance(provenance: Union[Provenance, Dict[str, Any]]) -> Provenance:
    if isinstance(provenance, Provenance):
        return provenance
    try:
        return Provenance.model_validate(provenance)
    except ValidationError as e:
        fields = sorted({str(err["loc"][0]) for err in e.errors() if err["loc"]})
        raise IncompleteProvenance(f"Provenance incomplete or invalid: {', '.join(fields)}") from e


def build_manifest(
        name: str,
        samples: Iterable[BenchmarkSample],
        provenance: Union[Provenance, Dict[str, Any]],
        version: str = "1",
) -> BenchmarkManifest:
    """Deduplicates samples by image identity and assigns ids derived from that identity.
    The first occurrence of an image wins; input order is otherwise kept.
    """
    provenance = _provenance(provenance)
    unique: "OrderedDict[str, BenchmarkSample]" = OrderedDict()
    for sample in samples:
        unique.setdefault(image_identity(sample), sample)
    if not unique:
        raise EmptySamples("A manifest needs at least one sample")
    return BenchmarkManifest(
        name=name,
        version=version,
        samples=[
            sample.model_copy(update={"sample_id": stable_sample_id(name, identity)})
            for identity, sample in unique.items()
        ],
        provenance=provenance,
    )


def write_manifest(manifest: BenchmarkManifest, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ManifestHeader(name=manifest.name, version=manifest.version, provenance=manifest.provenance)
    with open(path, "w", encoding="utf8") as f:
        f.write(header.model_dump_json() + "\n")
        for sample in manifest.samples:
            f.write(sample.model_dump_json() + "\n")


def read_manifest(path: Union[str, Path]) -> BenchmarkManifest:
    with open(path, "r", encoding="utf8") as f:
        lines = [line for line in f if line.strip()]
    if not lines:
        raise EmptySamples(f"{path} is empty")
    header = ManifestHeader.model_validate_json(lines[0])
    return BenchmarkManifest(
        name=header.name,
        version=header.version,
        provenance=header.provenance,
        samples=[BenchmarkSample.model_validate_json(line) for line in lines[1:]],
    )


def stratified_selection(
        samples: List[BenchmarkSample],
        n: int,
        cell_deg: float = 5.0,
        seed: int = 0,
) -> List[BenchmarkSample]:
    """Picks up to n samples spread over lat/lon grid cells.
    Cells are visited round-robin in a seeded order, so dense regions cannot crowd out sparse ones.
    """
    if cell_deg <= 0:
        raise ValueError("cell_deg must be > 0")
    rng = random.Random(seed)
    cells: Dict[tuple, List[BenchmarkSample]] = {}
    for sample in samples:
        key = (int(sample.ground_truth.lat // cell_deg), int(sample.ground_truth.lon // cell_deg))
        cells.setdefault(key, []).append(sample)
    order = sorted(cells)
    rng.shuffle(order)
    for key in order:
        rng.shuffle(cells[key])
    selected: List[BenchmarkSample] = []
    depth = 0
    while len(selected) < n and any(depth < len(cells[key]) for key in order):
        for key in order:
            if depth < len(cells[key]) and len(selected) < n:
                selected.append(cells[key][depth])
        depth += 1
    return selected
