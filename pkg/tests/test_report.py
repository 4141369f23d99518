import csv
import io

import pytest

from geolocsft.core.errors import ThresholdMismatch
from geolocsft.core.schemas import AccuracyReport, ThresholdSet
from geolocsft.metrics.report import format_delta, format_percent, render_report

HEADER = "| Benchmark | Strategy | 1 km | 25 km | 200 km | 750 km | 2500 km |"


def _report(counts, n, benchmark="mp16", strategy="cluster", thresholds=None):
    return AccuracyReport(
        benchmark_name=benchmark,
        strategy=strategy,
        thresholds=thresholds or ThresholdSet(),
        fractions=[c / n for c in counts],
        n_samples=n,
        mean_error_km=812.3456,
        median_error_km=240.5,
    )


def test_markdown_row():
    table = render_report([_report([170, 1276, 3755, 7085, 8895], 10000)])
    lines = table.splitlines()
    assert lines[0] == HEADER
    assert lines[1] == "|---|---|---|---|---|---|---|"
    assert lines[2] == "| mp16 | cluster | 1.70 | 12.76 | 37.55 | 70.85 | 88.95 |"


def test_empty_table_is_header_only():
    assert render_report([]).splitlines() == [HEADER, "|---|---|---|---|---|---|---|"]
    assert render_report([], fmt="csv").splitlines()[0].startswith("benchmark,strategy,1 km,25 km")


def test_csv_matches_markdown():
    reports = [
        _report([52, 483, 1227, 1730, 1880], 2000, strategy="oracle"),
        _report([170, 1276, 3755, 7085, 8895], 10000),
    ]
    markdown = render_report(reports)
    rows = list(csv.DictReader(io.StringIO(render_report(reports, fmt="csv"))))
    assert [r["strategy"] for r in rows] == ["oracle", "cluster"]
    assert [rows[0][k] for k in ("1 km", "25 km", "200 km", "750 km", "2500 km")] == \
        ["2.60", "24.15", "61.35", "86.50", "94.00"]
    assert rows[0]["n_samples"] == "2000"
    assert rows[0]["mean_error_km"] == "812.346"
    for row in rows:
        values = " | ".join(row[k] for k in ("1 km", "25 km", "200 km", "750 km", "2500 km"))
        assert f"| {row['benchmark']} | {row['strategy']} | {values} |" in markdown


def test_delta_rows():
    ours = _report([235, 2000, 4000, 6000, 8000], 10000, benchmark="im2gps3k")
    baseline = _report([11, 2500, 4000, 5000, 7000], 10000, benchmark="im2gps3k", strategy="single")
    lines = render_report([ours], baselines=[baseline]).splitlines()
    assert lines[2] == "| im2gps3k | cluster | 2.35 | 20.00 | 40.00 | 60.00 | 80.00 |"
    assert lines[3] == "| im2gps3k | Δ vs single | +2.24 | -5.00 | +0.00 | +10.00 | +10.00 |"
    # a baseline for another benchmark adds no row
    other = _report([1, 1, 1, 1, 1], 10, benchmark="yfcc4k")
    assert len(render_report([ours], baselines=[other]).splitlines()) == 3


def test_rounding_is_half_even():
    assert format_percent(0.00125) == "0.12"
    assert format_percent(0.00135) == "0.14"
    assert format_percent(1.0) == "100.00"
    assert format_percent(0.0) == "0.00"
    assert format_delta(2.24) == "+2.24"
    assert format_delta(-0.125) == "-0.12"


def test_mixed_thresholds_are_rejected():
    with pytest.raises(ThresholdMismatch):
        render_report([
            _report([1, 2, 3, 4, 5], 10),
            _report([1, 2], 10, thresholds=ThresholdSet(radii_km=[1, 25])),
        ])


def test_unknown_format():
    with pytest.raises(ValueError):
        render_report([], fmt="html")
