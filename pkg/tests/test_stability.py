import pytest

from conftest import WINDMILL_TRUTH
from geolocsft.core.errors import NoCandidates
from geolocsft.core.geodesy import destination_point
from geolocsft.core.schemas import GeoPoint, StabilityReport
from geolocsft.metrics.stability import stability


def test_mode_collapse(make_set):
    point = GeoPoint(lat=40.0, lon=-3.0)
    report = stability(make_set([point] * 10), WINDMILL_TRUTH)
    assert report.mode_collapse
    assert report.distinct_points == 1
    assert report.error_variance == 0.0
    assert len(report.per_attempt_error_km) == 10


def test_distinct_points_within_one_km(make_set):
    points = [destination_point(WINDMILL_TRUTH, 0.6 * i, 0.9) for i in range(10)]
    report = stability(make_set(points), WINDMILL_TRUTH)
    assert not report.mode_collapse
    assert report.distinct_points == 10
    assert report.max_error_km == pytest.approx(0.9, abs=1e-3)
    assert report.error_variance == pytest.approx(0.0, abs=1e-6)


def test_one_outlier(make_set):
    points = [destination_point(WINDMILL_TRUTH, 0.6 * i, 1.0) for i in range(9)]
    points.append(destination_point(WINDMILL_TRUTH, 2.0, 1169.0))
    report = stability(make_set(points), WINDMILL_TRUTH)
    assert report.max_error_km == pytest.approx(1169.0, abs=1e-3)
    assert report.error_variance == pytest.approx(122780.16, rel=1e-6)
    assert report.distinct_points == 10


def test_failures_are_ignored(make_set):
    report = stability(make_set([None, WINDMILL_TRUTH, None]), WINDMILL_TRUTH)
    assert report.per_attempt_error_km == [0.0]
    assert report.mode_collapse


def test_no_candidates(make_set):
    with pytest.raises(NoCandidates):
        stability(make_set([None, None]), WINDMILL_TRUTH)


def test_collapse_requires_zero_variance():
    with pytest.raises(ValueError):
        StabilityReport(sample_id="s", per_attempt_error_km=[1.0, 2.0], max_error_km=2.0,
                        error_variance=0.25, distinct_points=1, mode_collapse=True)
    with pytest.raises(ValueError):
        StabilityReport(sample_id="s", per_attempt_error_km=[1.0], max_error_km=1.0,
                        error_variance=0.0, distinct_points=2, mode_collapse=False)
