import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from tqdm import tqdm

from geolocsft.core.errors import EmptyCollection, NoCandidates
from geolocsft.core.geodesy import haversine_km
from geolocsft.core.jsonl import read_models, write_models
from geolocsft.core.parsing import parse_record
from geolocsft.core.schemas import (
    AccuracyReport,
    AggregatedPrediction,
    PredictionRecord,
    StabilityReport,
    ThresholdSet,
)
from geolocsft.metrics.accuracy import Scored, accuracy_from_errors, score, subset_by_bbox
from geolocsft.metrics.report import render_report
from geolocsft.metrics.stability import stability
from geolocsft.strategies.base import Aggregator

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
BBox = Tuple[float, float, float, float]


def load_predictions(path: PathLike, strict_parse: bool = False) -> List[Scored]:
    """Reads a predictions JSONL into (PredictionSet, ground truth) pairs."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    scored = [(parse_record(record, strict=strict_parse), record.ground_truth) for record in read_models(path, PredictionRecord)]
    misses = sum(1 for prediction_set, _ in scored if not prediction_set.candidates)
    if misses:
        logger.warning("%d of %d samples have no parsable attempt", misses, len(scored))
    return scored


def run_aggregate(
        predictions: PathLike,
        output_path: PathLike,
        aggregator: Aggregator,
        strict_parse: bool = False,
        jobs: int = 1,
) -> List[AggregatedPrediction]:
    """Applies one strategy to every sample and writes the chosen predictions."""
    scored = load_predictions(predictions, strict_parse=strict_parse)

    def aggregate(item: Scored) -> AggregatedPrediction:
        prediction_set, truth = item
        try:
            outcome = aggregator.run(prediction_set, truth)
        except NoCandidates:
            return AggregatedPrediction(sample_id=prediction_set.sample_id, ground_truth=truth)
        return AggregatedPrediction(
            sample_id=prediction_set.sample_id,
            ground_truth=truth,
            outcome=outcome,
            error_km=haversine_km(outcome.chosen.point, truth),
        )

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(tqdm(pool.map(aggregate, scored), total=len(scored), desc=f"Aggregating ({aggregator.strategy.value})"))
    write_models(output_path, results)
    logger.info("Wrote %d aggregated predictions to %s", len(results), output_path)
    return results


def run_evaluate(
        predictions: PathLike,
        aggregator: Aggregator,
        thresholds: Optional[ThresholdSet] = None,
        benchmark_name: Optional[str] = None,
        subset_bbox: Optional[BBox] = None,
        strict_parse: bool = False,
        jobs: int = 1,
        run_metadata: Optional[Dict[str, str]] = None,
) -> AccuracyReport:
    """Scores a predictions file (raw attempts) or an aggregated predictions file under one strategy.
    :param subset_bbox: Only score samples whose ground truth is in (min_lat, min_lon, max_lat, max_lon).
    :param run_metadata: Free-form run description copied into the report.
    """
    name = benchmark_name or Path(predictions).stem
    if _is_aggregated(predictions):
        report = _score_aggregated(predictions, thresholds or ThresholdSet(), name, subset_bbox)
    else:
        scored = load_predictions(predictions, strict_parse=strict_parse)
        if subset_bbox is not None:
            scored = subset_by_bbox(scored, subset_bbox)
            logger.info("Scoring %d samples inside %s", len(scored), subset_bbox)
        report = score(scored, aggregator, thresholds, benchmark_name=name, jobs=jobs)
    if run_metadata:
        report = report.model_copy(update={"run_metadata": dict(run_metadata)})
    return report


def _is_aggregated(path: PathLike) -> bool:
    with open(path, "r", encoding="utf8") as f:
        for line in f:
            if line.strip():
                return "outcome" in json.loads(line)
    return False


def _score_aggregated(path: PathLike, thresholds: ThresholdSet, name: str, subset_bbox: Optional[BBox]) -> AccuracyReport:
    rows = list(read_models(path, AggregatedPrediction))
    if subset_bbox is not None:
        min_lat, min_lon, max_lat, max_lon = subset_bbox
        rows = [r for r in rows if min_lat <= r.ground_truth.lat <= max_lat and min_lon <= r.ground_truth.lon <= max_lon]
    if not rows:
        raise EmptyCollection(f"No samples to score in {path}")
    strategies = {r.outcome.strategy.value for r in rows if r.outcome is not None}
    strategy = strategies.pop() if len(strategies) == 1 else "mixed"
    errors = [float("inf") if r.error_km is None else r.error_km for r in rows]
    return accuracy_from_errors(errors, thresholds, name, strategy)


def run_stability(predictions: PathLike, strict_parse: bool = False) -> List[StabilityReport]:
    """Per-sample spread of the attempts around the ground truth; samples without candidates are skipped."""
    reports = []
    for prediction_set, truth in load_predictions(predictions, strict_parse=strict_parse):
        if not prediction_set.candidates:
            logger.debug("No candidates for %s, skipping stability", prediction_set.sample_id)
            continue
        reports.append(stability(prediction_set, truth))
    collapsed = sum(1 for r in reports if r.mode_collapse)
    logger.info("%d of %d samples show mode collapse", collapsed, len(reports))
    return reports


def load_reports(paths: Sequence[PathLike]) -> List[AccuracyReport]:
    reports: List[AccuracyReport] = []
    for path in paths:
        if not Path(path).exists():
            raise FileNotFoundError(path)
        reports.extend(read_models(path, AccuracyReport))
    return reports


def run_report(
        reports: Sequence[PathLike],
        fmt: str = "markdown",
        baselines: Sequence[PathLike] = (),
) -> str:
    """Renders stored accuracy reports, with Δ rows for benchmarks that have a baseline."""
    loaded = load_reports(reports)
    if not loaded:
        raise EmptyCollection("No accuracy reports to render")
    return render_report(loaded, fmt=fmt, baselines=load_reports(baselines) or None)
