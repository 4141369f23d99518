import statistics

from geolocsft.core.errors import NoCandidates
from geolocsft.core.geodesy import haversine_km
from geolocsft.core.schemas import GeoPoint, PredictionSet, StabilityReport

# ~11 m; separates repeated answers from float jitter
DISTINCT_GRANULARITY_DEG = 1e-4


def _grid_key(point: GeoPoint) -> tuple:
    return (round(point.lat / DISTINCT_GRANULARITY_DEG), round(point.lon / DISTINCT_GRANULARITY_DEG))


def stability(prediction_set: PredictionSet, truth: GeoPoint) -> StabilityReport:
    """Spread of the per-attempt errors of one sample.
    A set whose attempts all land on one grid cell is flagged as mode collapse.
    """
    if not prediction_set.candidates:
        raise NoCandidates(prediction_set.sample_id)
    errors = [haversine_km(c.point, truth) for c in prediction_set.candidates]
    distinct = len({_grid_key(c.point) for c in prediction_set.candidates})
    collapsed = distinct == 1
    return StabilityReport(
        sample_id=prediction_set.sample_id,
        per_attempt_error_km=errors,
        max_error_km=max(errors),
        # pvariance is exact on repeated values; a collapsed set is one point at this granularity
        error_variance=0.0 if collapsed else statistics.pvariance(errors),
        distinct_points=distinct,
        mode_collapse=collapsed,
    )
