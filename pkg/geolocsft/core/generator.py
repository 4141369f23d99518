import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence, Union

from tqdm import tqdm

from geolocsft.captions.caption import assemble_sft_record, build_geo_prompt, validate_geocaption
from geolocsft.core.chat_model import ChatClient
from geolocsft.core.errors import AuthMissing, TransportError
from geolocsft.core.schemas import (
    GREEDY,
    BenchmarkSample,
    CaptionReject,
    QualityReject,
    SamplingConfig,
    SFTRecord,
    ValidationFailure,
)

logger = logging.getLogger(__name__)

DEFAULT_CAPTION_MAX_TOKENS = 20000


@dataclass
class CaptionBatch:
    records: List[SFTRecord] = field(default_factory=list)
    rejects: List[CaptionReject] = field(default_factory=list)


class GeoCaptionGenerator:
    """Orchestrates geo-caption generation: prompt, one completion, validation, quality gate."""
    def __init__(
            self,
            client: ChatClient,
            config: SamplingConfig = GREEDY,
            broad_radius_km: float = 25.0,
            local_radius_km: float = 1.0,
            gate_km: float = 1.0,
            max_tokens: int = DEFAULT_CAPTION_MAX_TOKENS,
    ):
        """
        :param client: The chat client for the captioning endpoint.
        :param config: Decoding settings; k is ignored and max_tokens is replaced by the caption budget.
        :param broad_radius_km: Radius of the regional analysis section.
        :param local_radius_km: Radius of the local analysis section.
        :param gate_km: Maximum distance between caption coordinates and ground truth.
        :param max_tokens: Completion token budget per caption.
        """
        self.client = client
        self.config = config.model_copy(update={"k": 1, "max_tokens": max_tokens})
        self.broad_radius_km = broad_radius_km
        self.local_radius_km = local_radius_km
        self.gate_km = gate_km

    def caption_one(self, sample: BenchmarkSample) -> Union[SFTRecord, CaptionReject]:
        prompt = build_geo_prompt(sample.image_ref, self.broad_radius_km, self.local_radius_km)
        try:
            raw = self.client.complete(prompt, sample.image_ref, self.config)
        except AuthMissing:
            raise
        except TransportError as e:
            logger.warning("Caption request failed for %s: %s", sample.sample_id, e)
            return CaptionReject(sample_id=sample.sample_id, image_ref=sample.image_ref, stage="transport",
                                 error=f"{type(e).__name__}: {e}")

        caption = validate_geocaption(raw)
        if isinstance(caption, ValidationFailure):
            logger.debug("Caption for %s failed validation: %s", sample.sample_id, caption.model_dump_json())
            return CaptionReject(sample_id=sample.sample_id, image_ref=sample.image_ref, stage="validation",
                                 validation=caption, raw_text=raw)

        record = assemble_sft_record(sample.image_ref, caption, sample.ground_truth, self.gate_km)
        if isinstance(record, QualityReject):
            logger.debug("Caption for %s is %.3f km off", sample.sample_id, record.distance_km)
            return CaptionReject(sample_id=sample.sample_id, image_ref=sample.image_ref, stage="quality",
                                 quality=record, raw_text=raw)
        return record

    def generate(self, samples: Sequence[BenchmarkSample], jobs: int = 1) -> CaptionBatch:
        """Captions every sample; output order follows input order.
        :param samples: The manifest samples to caption.
        :param jobs: Number of samples captioned concurrently.
        :return: Accepted SFT records and rejects.
        """
        batch = CaptionBatch()
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            results = pool.map(self.caption_one, samples)
            for result in tqdm(results, total=len(samples), desc="Generating captions"):
                if isinstance(result, SFTRecord):
                    batch.records.append(result)
                else:
                    batch.rejects.append(result)
        if batch.rejects:
            stages = {}
            for reject in batch.rejects:
                stages[reject.stage] = stages.get(reject.stage, 0) + 1
            logger.warning("Rejected %d of %d captions: %s", len(batch.rejects), len(samples), stages)
        return batch
