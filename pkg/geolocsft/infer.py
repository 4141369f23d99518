import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Union

from tqdm import tqdm

from geolocsft.core.chat_model import ChatClient
from geolocsft.core.jsonl import write_models
from geolocsft.core.prompts import geolocation_prompt
from geolocsft.core.schemas import (
    SAMPLE,
    Attempt,
    BenchmarkSample,
    GeoPoint,
    PredictionRecord,
    PredictionSet,
    SamplingConfig,
)
from geolocsft.curation.manifest import read_manifest

logger = logging.getLogger(__name__)


def prediction_record(prediction_set: PredictionSet, ground_truth: GeoPoint) -> PredictionRecord:
    """The storable form of a PredictionSet: raw attempt texts in attempt order."""
    attempts = [Attempt(index=c.attempt_index, raw_text=c.raw_text) for c in prediction_set.candidates]
    attempts += [
        Attempt(index=f.attempt_index, raw_text=f.raw_text, error=f.detail)
        for f in prediction_set.failures
    ]
    return PredictionRecord(
        sample_id=prediction_set.sample_id,
        ground_truth=ground_truth,
        attempts=sorted(attempts, key=lambda a: a.index),
        config=prediction_set.config_used,
    )


def run_inference(
        manifest: Union[str, Path],
        output_path: Union[str, Path],
        client: ChatClient,
        config: SamplingConfig = SAMPLE,
        prompt: Optional[str] = None,
        best_effort: bool = False,
        strict_parse: bool = False,
        jobs: int = 1,
) -> int:
    """Runs K-attempt inference over every sample of a manifest and writes a predictions JSONL.
    :param manifest: The benchmark manifest.
    :param output_path: The predictions JSONL destination.
    :param client: The chat client; it caps in-flight requests on its own.
    :param config: Decoding settings, including k.
    :param prompt: Prompt text, defaults to the generic geolocation prompt.
    :param best_effort: Keep going when an attempt fails in transport.
    :param strict_parse: Disable lenient answer parsing.
    :param jobs: Number of samples in flight.
    :return: The number of records written.
    """
    samples = read_manifest(manifest).samples
    prompt = prompt or geolocation_prompt()

    def infer(sample: BenchmarkSample) -> PredictionRecord:
        prediction_set = client.sample_candidates(
            sample.sample_id, prompt, sample.image_ref, config, best_effort=best_effort, strict_parse=strict_parse
        )
        return prediction_record(prediction_set, sample.ground_truth)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        records = list(tqdm(pool.map(infer, samples), total=len(samples), desc="Sampling predictions"))

    written = write_models(output_path, records)
    failed = sum(1 for r in records for a in r.attempts if a.error is not None)
    if failed:
        logger.warning("%d attempts failed in transport and were recorded as failures", failed)
    logger.info("Wrote %d prediction records to %s", written, output_path)
    logger.info("Endpoint requests: %d sent, %d retried", client.requests_sent, client.retries)
    return written
