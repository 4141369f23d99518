from typing import List, Sequence

import numpy as np
from sklearn.cluster import DBSCAN

from geolocsft.core.errors import NoCandidates
from geolocsft.core.geodesy import medoid_index, pairwise_km
from geolocsft.core.schemas import AggregationOutcome, GeoPoint, PredictionSet, Strategy

DEFAULT_LINK_RADIUS_KM = 100.0


def cluster_labels(points: Sequence[GeoPoint], link_radius_km: float = DEFAULT_LINK_RADIUS_KM) -> List[int]:
    """Single-linkage clusters under haversine distance.
    Two points share a cluster when a chain of hops, each at most link_radius_km, connects them.
    Labels are renumbered in order of first appearance.
    """
    if link_radius_km <= 0:
        raise ValueError("link_radius_km must be > 0")
    if len(points) == 1:
        return [0]
    # DBSCAN with min_samples=1 has no noise points and its clusters are the connected components
    raw = DBSCAN(eps=link_radius_km, min_samples=1, metric="precomputed").fit(pairwise_km(points)).labels_
    renumber = {}
    for label in raw:
        renumber.setdefault(int(label), len(renumber))
    return [renumber[int(label)] for label in raw]


def cluster_consensus(prediction_set: PredictionSet, link_radius_km: float = DEFAULT_LINK_RADIUS_KM) -> AggregationOutcome:
    """Picks the medoid of the largest cluster of candidates.
    Ties between equally large clusters go to the one holding the lowest attempt_index.
    """
    candidates = prediction_set.candidates
    if not candidates:
        raise NoCandidates(prediction_set.sample_id)
    labels = cluster_labels([c.point for c in candidates], link_radius_km)
    sizes = np.bincount(labels).tolist()
    # labels follow first appearance, so argmax already prefers the earliest cluster on ties
    winner = int(np.argmax(sizes))
    members = [c for c, label in zip(candidates, labels) if label == winner]
    chosen = members[medoid_index([c.point for c in members])]
    return AggregationOutcome(
        chosen=chosen,
        strategy=Strategy.CLUSTER,
        diagnostics={
            "cluster_sizes": sizes,
            "chosen_cluster": winner,
            "link_radius_km": link_radius_km,
        },
    )
