import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from geolocsft.core.errors import EmptyCollection, NoCandidates, ThresholdMismatch
from geolocsft.core.geodesy import haversine_km
from geolocsft.core.schemas import AccuracyReport, GeoPoint, PredictionSet, ThresholdSet
from geolocsft.strategies.base import Aggregator

logger = logging.getLogger(__name__)

Scored = Tuple[PredictionSet, GeoPoint]


def _error_km(aggregator: Aggregator, item: Scored) -> float:
    prediction_set, truth = item
    try:
        outcome = aggregator.run(prediction_set, truth)
    except NoCandidates:
        return float("inf")
    return haversine_km(outcome.chosen.point, truth)


def accuracy_from_errors(
        errors_km: Sequence[float],
        thresholds: ThresholdSet,
        benchmark_name: str,
        strategy: str,
) -> AccuracyReport:
    """Acc@R fractions from per-sample errors; an infinite error is a parse miss."""
    if len(errors_km) == 0:
        raise EmptyCollection("Cannot score an empty prediction collection")
    errors = np.asarray(errors_km, dtype=float)
    n = len(errors)
    radii = np.asarray(thresholds.radii_km, dtype=float)
    hits = (errors[:, None] <= radii[None, :]).sum(axis=0)
    parsed = errors[np.isfinite(errors)]
    return AccuracyReport(
        benchmark_name=benchmark_name,
        strategy=strategy,
        thresholds=thresholds,
        fractions=[int(h) / n for h in hits],
        n_samples=n,
        n_parse_misses=int(n - len(parsed)),
        mean_error_km=float(parsed.mean()) if len(parsed) else None,
        median_error_km=float(np.median(parsed)) if len(parsed) else None,
    )


def score(
        predictions: Iterable[Scored],
        aggregator: Aggregator,
        thresholds: Optional[ThresholdSet] = None,
        benchmark_name: str = "benchmark",
        jobs: int = 1,
) -> AccuracyReport:
    """Applies a strategy per sample and counts the fraction of errors within each radius.
    Samples without any parsed candidate count as misses at every threshold.
    :param predictions: (PredictionSet, ground truth) pairs
    :param aggregator: the selection strategy
    :param thresholds: Acc@R radii, defaults to 1/25/200/750/2500 km
    :param jobs: worker threads; the result does not depend on it
    """
    thresholds = thresholds or ThresholdSet()
    items = list(predictions)
    if not items:
        raise EmptyCollection("Cannot score an empty prediction collection")
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            errors = list(pool.map(lambda item: _error_km(aggregator, item), items))
    else:
        errors = [_error_km(aggregator, item) for item in items]
    report = accuracy_from_errors(errors, thresholds, benchmark_name, aggregator.strategy.value)
    if report.n_parse_misses:
        logger.warning("%d of %d samples had no parsable candidate and count as misses",
                       report.n_parse_misses, report.n_samples)
    return report


def delta_vs_baseline(ours: AccuracyReport, baseline: AccuracyReport) -> List[float]:
    """Per-threshold (ours - baseline) in percentage points."""
    if ours.thresholds != baseline.thresholds:
        raise ThresholdMismatch(
            f"Thresholds differ: {ours.thresholds.radii_km} vs {baseline.thresholds.radii_km}"
        )
    if ours.benchmark_name != baseline.benchmark_name:
        raise ThresholdMismatch(
            f"Reports are for different benchmarks: {ours.benchmark_name!r} vs {baseline.benchmark_name!r}"
        )
    return [round((a - b) * 100.0, 10) for a, b in zip(ours.fractions, baseline.fractions)]


def subset_by_bbox(
        predictions: Iterable[Scored],
        bbox: Tuple[float, float, float, float],
) -> List[Scored]:
    """Keeps samples whose ground truth lies in (min_lat, min_lon, max_lat, max_lon)."""
    min_lat, min_lon, max_lat, max_lon = bbox
    return [
        (prediction_set, truth) for prediction_set, truth in predictions
        if min_lat <= truth.lat <= max_lat and min_lon <= truth.lon <= max_lon
    ]
