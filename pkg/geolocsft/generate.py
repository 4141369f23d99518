import logging
from pathlib import Path
from typing import Optional, Union

from geolocsft.captions.caption import validate_geocaption
from geolocsft.core.chat_model import ChatClient
from geolocsft.core.generator import DEFAULT_CAPTION_MAX_TOKENS, CaptionBatch, GeoCaptionGenerator
from geolocsft.core.jsonl import write_models
from geolocsft.core.schemas import GREEDY, GeoCaption, SamplingConfig, ValidationFailure
from geolocsft.curation.manifest import read_manifest, stratified_selection

logger = logging.getLogger(__name__)


def rejects_path_for(output_path: Union[str, Path]) -> Path:
    output_path = Path(output_path)
    return output_path.with_name(output_path.stem + ".rejects.jsonl")


def generate_captions(
        manifest: Union[str, Path],
        output_path: Union[str, Path],
        client: ChatClient,
        config: SamplingConfig = GREEDY,
        rejects_path: Optional[Union[str, Path]] = None,
        limit: Optional[int] = None,
        cell_deg: float = 5.0,
        seed: int = 0,
        broad_radius_km: float = 25.0,
        local_radius_km: float = 1.0,
        gate_km: float = 1.0,
        max_tokens: int = DEFAULT_CAPTION_MAX_TOKENS,
        jobs: int = 1,
) -> CaptionBatch:
    """Generates SFT records for the samples of a manifest.
    :param manifest: The manifest JSONL to caption.
    :param output_path: Where accepted SFT records are written.
    :param client: The chat client for the captioning endpoint.
    :param config: Decoding settings for the caption call.
    :param rejects_path: Where rejects are written, defaults to `<output>.rejects.jsonl`.
    :param limit: Caption only a geographically stratified selection of this many samples.
    :param cell_deg: Grid cell size of the stratified selection.
    :param seed: Seed of the stratified selection.
    :param gate_km: Maximum distance between caption coordinates and ground truth.
    :param max_tokens: Completion token budget per caption.
    :param jobs: Number of samples captioned concurrently.
    """
    samples = read_manifest(manifest).samples
    if limit is not None:
        samples = stratified_selection(samples, limit, cell_deg=cell_deg, seed=seed)
    logger.info("Captioning %d samples from %s", len(samples), manifest)

    generator = GeoCaptionGenerator(
        client=client,
        config=config,
        broad_radius_km=broad_radius_km,
        local_radius_km=local_radius_km,
        gate_km=gate_km,
        max_tokens=max_tokens,
    )
    batch = generator.generate(samples, jobs=jobs)

    written = write_models(output_path, batch.records)
    rejects_path = Path(rejects_path) if rejects_path is not None else rejects_path_for(output_path)
    write_models(rejects_path, batch.rejects)
    logger.info("Wrote %d SFT records to %s and %d rejects to %s", written, output_path, len(batch.rejects), rejects_path)
    logger.info("Endpoint requests: %d sent, %d retried", client.requests_sent, client.retries)
    return batch


def validate_caption_file(path: Union[str, Path]) -> Union[GeoCaption, ValidationFailure]:
    """Validates one caption document stored on disk."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return validate_geocaption(path.read_text(encoding="utf8"))
