import logging
from typing import List

from geolocsft.core.chat_model import ChatClient, ImagePayload
from geolocsft.core.errors import NoCandidates
from geolocsft.core.geodesy import haversine_km
from geolocsft.core.parsing import extract_answer, format_answer
from geolocsft.core.schemas import (
    GREEDY,
    AggregationOutcome,
    Candidate,
    ParseFailure,
    PredictionSet,
    SamplingConfig,
    Strategy,
)
from geolocsft.strategies.cluster import DEFAULT_LINK_RADIUS_KM, cluster_consensus
from geolocsft.strategies.prompts import CONSENSUS_PROMPT

logger = logging.getLogger(__name__)


def build_consensus_prompt(prediction_set: PredictionSet) -> str:
    """Embeds every attempt's raw text and parsed coordinates, in attempt order."""
    entries = {c.attempt_index: c for c in prediction_set.candidates}
    entries.update({f.attempt_index: f for f in prediction_set.failures if f.attempt_index is not None})
    blocks: List[str] = []
    for index in sorted(entries):
        entry = entries[index]
        if isinstance(entry, Candidate):
            coords = format_answer(entry.point)
        else:
            coords = "(no parsable coordinates)"
        blocks.append(f"### Attempt {index + 1}\nCoordinates: {coords}\nOutput:\n{entry.raw_text.strip()}")
    return CONSENSUS_PROMPT.format(num_attempts=len(blocks), attempts="\n\n".join(blocks))


def llm_consensus(
        prediction_set: PredictionSet,
        client: ChatClient,
        image: ImagePayload = None,
        config: SamplingConfig = GREEDY,
        link_radius_km: float = DEFAULT_LINK_RADIUS_KM,
        strict_parse: bool = False,
) -> AggregationOutcome:
    """Asks the endpoint to merge the attempts with one greedy completion.
    Falls back to cluster consensus when the response carries no usable answer tag.
    """
    if not prediction_set.candidates:
        raise NoCandidates(prediction_set.sample_id)
    response = client.complete(build_consensus_prompt(prediction_set), image, config.single())
    parsed = extract_answer(response, strict=strict_parse)
    if isinstance(parsed, ParseFailure):
        logger.info("Consensus for %s unparseable (%s), falling back to clusters",
                    prediction_set.sample_id, parsed.reason.value)
        outcome = cluster_consensus(prediction_set, link_radius_km)
        outcome.diagnostics.update({
            "fallback": Strategy.CLUSTER.value,
            "consensus_failure": parsed.reason.value,
            "consensus_raw_text": response,
        })
        return outcome

    # the consensus point may be new; attribute it to the nearest attempt
    nearest = min(
        prediction_set.candidates, key=lambda c: (haversine_km(c.point, parsed), c.attempt_index)
    )
    return AggregationOutcome(
        chosen=Candidate(point=parsed, raw_text=response, attempt_index=nearest.attempt_index),
        strategy=Strategy.LLM_CONSENSUS,
        diagnostics={
            "consensus_raw_text": response,
            "nearest_attempt": nearest.attempt_index,
            "nearest_attempt_km": haversine_km(nearest.point, parsed),
        },
    )
