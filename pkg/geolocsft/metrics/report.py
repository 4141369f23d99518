import csv
import io
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Dict, List, Optional, Sequence

from geolocsft.core.errors import ThresholdMismatch
from geolocsft.core.schemas import AccuracyReport, ThresholdSet
from geolocsft.metrics.accuracy import delta_vs_baseline

FORMATS = ("markdown", "csv")
_CENT = Decimal("0.01")


def format_percent(fraction: float) -> str:
    """Fraction -> percentage with 2 decimals, rounding half to even."""
    return str((Decimal(repr(fraction)) * 100).quantize(_CENT, rounding=ROUND_HALF_EVEN))


def format_delta(points: float) -> str:
    value = Decimal(repr(points)).quantize(_CENT, rounding=ROUND_HALF_EVEN)
    return f"+{value}" if value >= 0 else str(value)


def _radius_label(radius_km: float) -> str:
    return f"{radius_km:g} km"


def _shared_thresholds(reports: Sequence[AccuracyReport]) -> ThresholdSet:
    if not reports:
        return ThresholdSet()
    first = reports[0].thresholds
    for report in reports[1:]:
        if report.thresholds != first:
            raise ThresholdMismatch("All reports in one table must share thresholds")
    return first


def _rows(reports: Sequence[AccuracyReport], baselines: Sequence[AccuracyReport]) -> List[Dict[str, object]]:
    by_benchmark = {b.benchmark_name: b for b in baselines}
    rows = []
    for report in reports:
        rows.append({
            "benchmark": report.benchmark_name,
            "strategy": report.strategy,
            "values": [format_percent(f) for f in report.fractions],
            "report": report,
        })
        baseline = by_benchmark.get(report.benchmark_name)
        if baseline is not None and baseline is not report:
            rows.append({
                "benchmark": report.benchmark_name,
                "strategy": f"Δ vs {baseline.strategy}",
                "values": [format_delta(d) for d in delta_vs_baseline(report, baseline)],
                "report": None,
            })
    return rows


def render_report(
        reports: Sequence[AccuracyReport],
        fmt: str = "markdown",
        baselines: Optional[Sequence[AccuracyReport]] = None,
) -> str:
    """Renders Acc@R reports as a markdown or CSV table.
    :param reports: reports sharing one threshold set
    :param fmt: "markdown" or "csv"
    :param baselines: optional reports to compare against; a Δ row follows each report whose
        benchmark has a baseline
    """
    if fmt not in FORMATS:
        raise ValueError(f"Unknown report format: {fmt}")
    thresholds = _shared_thresholds(list(reports) + list(baselines or []))
    labels = [_radius_label(r) for r in thresholds.radii_km]
    rows = _rows(reports, baselines or [])

    if fmt == "markdown":
        lines = [
            "| Benchmark | Strategy | " + " | ".join(labels) + " |",
            "|" + "---|" * (len(labels) + 2),
        ]
        for row in rows:
            lines.append(f"| {row['benchmark']} | {row['strategy']} | " + " | ".join(row["values"]) + " |")
        return "\n".join(lines) + "\n"

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["benchmark", "strategy", *labels, "n_samples", "n_parse_misses", "mean_error_km", "median_error_km"])
    for row in rows:
        report: Optional[AccuracyReport] = row["report"]
        extra = ["", "", "", ""]
        if report is not None:
            extra = [
                report.n_samples,
                report.n_parse_misses,
                "" if report.mean_error_km is None else f"{report.mean_error_km:.3f}",
                "" if report.median_error_km is None else f"{report.median_error_km:.3f}",
            ]
        writer.writerow([row["benchmark"], row["strategy"], *row["values"], *extra])
    return buffer.getvalue()
