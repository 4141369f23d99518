from typing import Optional, Union

from geolocsft.core.chat_model import ChatClient
from geolocsft.core.errors import ConfigError, NoCandidates
from geolocsft.core.geodesy import haversine_km
from geolocsft.core.schemas import AggregationOutcome, GeoPoint, PredictionSet, Strategy
from geolocsft.strategies.cluster import DEFAULT_LINK_RADIUS_KM, cluster_consensus
from geolocsft.strategies.consensus import llm_consensus


def single_first(prediction_set: PredictionSet) -> AggregationOutcome:
    """The parsed candidate with the lowest attempt_index."""
    if not prediction_set.candidates:
        raise NoCandidates(prediction_set.sample_id)
    chosen = min(prediction_set.candidates, key=lambda c: c.attempt_index)
    return AggregationOutcome(chosen=chosen, strategy=Strategy.SINGLE)


def oracle_best(prediction_set: PredictionSet, truth: GeoPoint) -> AggregationOutcome:
    """The candidate nearest the ground truth; an upper bound, not a deployable strategy."""
    if not prediction_set.candidates:
        raise NoCandidates(prediction_set.sample_id)
    chosen = min(prediction_set.candidates, key=lambda c: (haversine_km(c.point, truth), c.attempt_index))
    return AggregationOutcome(
        chosen=chosen,
        strategy=Strategy.ORACLE,
        diagnostics={"error_km": haversine_km(chosen.point, truth)},
    )


class Aggregator:
    """Applies one selection strategy to prediction sets."""

    def __init__(
            self,
            strategy: Union[Strategy, str],
            link_radius_km: float = DEFAULT_LINK_RADIUS_KM,
            client: Optional[ChatClient] = None,
            strict_parse: bool = False,
    ):
        """
        :param strategy: One of single, oracle, cluster, llm-consensus.
        :param link_radius_km: Linkage threshold for cluster consensus (also the consensus fallback).
        :param client: Chat client, required for llm-consensus.
        :param strict_parse: Parse the consensus answer strictly.
        """
        self.strategy = Strategy(strategy)
        self.link_radius_km = link_radius_km
        self.client = client
        self.strict_parse = strict_parse
        if self.strategy is Strategy.LLM_CONSENSUS and client is None:
            raise ConfigError("llm-consensus needs an endpoint client")

    def run(self, prediction_set: PredictionSet, truth: Optional[GeoPoint] = None) -> AggregationOutcome:
        if self.strategy is Strategy.SINGLE:
            return single_first(prediction_set)
        if self.strategy is Strategy.ORACLE:
            if truth is None:
                raise ConfigError("oracle strategy needs the ground truth")
            return oracle_best(prediction_set, truth)
        if self.strategy is Strategy.CLUSTER:
            return cluster_consensus(prediction_set, self.link_radius_km)
        return llm_consensus(
            prediction_set,
            self.client,
            link_radius_km=self.link_radius_km,
            strict_parse=self.strict_parse,
        )
