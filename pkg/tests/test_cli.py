import json
import re

import pytest
from typer.testing import CliRunner

from conftest import FakeResponse, FakeSession, WINDMILL_TRUTH, bbox_center, image_part, settlements_tsv
from geolocsft import cli
from geolocsft.core.geodesy import destination_point
from geolocsft.core.jsonl import write_models
from geolocsft.core.parsing import format_answer
from geolocsft.core.schemas import AccuracyReport, BenchmarkSample, GeoPoint
from geolocsft.curation.imagery import ImageryClient
from geolocsft.curation.manifest import build_manifest, write_manifest
from geolocsft.infer import prediction_record

runner = CliRunner()

PROVENANCE = {"settlement_db_hash": "abc", "population_cap": 5000, "sampling_seed": 1, "sample_radius_km": 2.0}

_IMAGE_URL = re.compile(r"https://images\.test/(-?[\d.]+)_(-?[\d.]+)\.jpg")


def _json_lines(text: str) -> list:
    return [json.loads(line) for line in text.splitlines() if line.startswith("{")]


def _table_lines(text: str) -> list:
    return [line for line in text.splitlines() if line.startswith("|")]


@pytest.fixture(autouse=True)
def _no_real_clients(monkeypatch):
    def refuse(config):
        raise AssertionError("no network client expected")

    monkeypatch.setattr(cli, "build_client", refuse)
    monkeypatch.setattr(cli, "build_imagery_client", refuse)


def test_captions_validate(tmp_path, caption_doc):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(caption_doc))
    result = runner.invoke(cli.app, ["captions", "validate", str(good)])
    assert result.exit_code == 0
    assert _json_lines(result.stdout)[-1]["final_point"] == {"lat": 34.595981, "lon": -120.14081}

    del caption_doc["micro_features"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(caption_doc))
    result = runner.invoke(cli.app, ["captions", "validate", str(bad)])
    assert result.exit_code == 1
    assert _json_lines(result.stdout)[-1] == {"missing_fields": ["micro_features"], "invalid_coords": False,
                                              "parse_error": None}


def test_evaluate_windmill_oracle(tmp_path, windmill):
    predictions = tmp_path / "windmill.jsonl"
    write_models(predictions, [prediction_record(windmill(close_index=3), WINDMILL_TRUTH)])
    reports = tmp_path / "reports.jsonl"

    oracle = runner.invoke(cli.app, ["evaluate", "--predictions", str(predictions), "--strategy", "oracle",
                                     "--out", str(reports)])
    assert oracle.exit_code == 0
    assert "| windmill | oracle | 100.00 | 100.00 | 100.00 | 100.00 | 100.00 |" in _table_lines(oracle.stdout)
    assert AccuracyReport.model_validate_json(reports.read_text()).fractions == [1.0] * 5

    single = runner.invoke(cli.app, ["evaluate", "--predictions", str(predictions), "--strategy", "single"])
    assert "| windmill | single | 0.00 | 0.00 | 0.00 | 0.00 | 0.00 |" in _table_lines(single.stdout)


def test_report_formats(tmp_path):
    reports = tmp_path / "reports.jsonl"
    write_models(reports, [
        AccuracyReport(benchmark_name="mp16", strategy="cluster", fractions=[0.017, 0.1276, 0.3755, 0.7085, 0.8895],
                       n_samples=10000),
    ])
    markdown = runner.invoke(cli.app, ["report", "--reports", str(reports)])
    assert markdown.exit_code == 0
    assert _table_lines(markdown.stdout) == [
        "| Benchmark | Strategy | 1 km | 25 km | 200 km | 750 km | 2500 km |",
        "|---|---|---|---|---|---|---|",
        "| mp16 | cluster | 1.70 | 12.76 | 37.55 | 70.85 | 88.95 |",
    ]

    out = tmp_path / "table.csv"
    csv = runner.invoke(cli.app, ["report", "--reports", str(reports), "--format", "csv", "--out", str(out)])
    assert csv.exit_code == 0
    assert out.read_text().splitlines()[1].startswith("mp16,cluster,1.70,12.76,37.55,70.85,88.95,10000,0")


def test_dry_run_redacts_and_skips_clients(tmp_path, monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    monkeypatch.setenv("MAPILLARY_TOKEN", "MLY|secret")
    result = runner.invoke(cli.app, ["infer", "--dry-run", "--manifest", str(tmp_path / "m.jsonl"),
                                     "--preset", "greedy", "--k", "2"])
    assert result.exit_code == 0
    data = json.loads(result.stdout[result.stdout.index("{"):])
    assert data["command"] == "infer"
    assert data["config"]["env"] == {"OPENAI_API_KEY": "<unset>", "MAPILLARY_TOKEN": "<set>"}
    assert data["config"]["sampling"] == {"k": 2, "temperature": 0.0, "top_p": 1.0, "max_tokens": 2048}
    assert "MLY|secret" not in result.stdout


def test_exit_statuses(tmp_path):
    assert cli.run(["evaluate", "--predictions", str(tmp_path / "p.jsonl"), "--format", "html"]) == 2
    assert cli.run(["infer", "--k", "0"]) == 2
    assert cli.run(["evaluate"]) == 2
    assert cli.run(["evaluate", "--predictions", str(tmp_path / "missing.jsonl")]) == 1
    assert cli.run(["evaluate", "--config", str(tmp_path / "missing.toml")]) == 1
    # --jobs only exists where a thread pool runs
    assert cli.run(["report", "--reports", str(tmp_path / "r.jsonl"), "--jobs", "2"]) == 2
    assert cli.run(["curate", "filter", "--jobs", "2"]) == 2

    doc = tmp_path / "doc.json"
    doc.write_text("{}")
    assert cli.run(["captions", "validate", str(doc)]) == 1


def test_malformed_input_lines_exit_1(tmp_path, windmill):
    record = json.loads(prediction_record(windmill(), WINDMILL_TRUTH).model_dump_json())
    record["ground_truth"]["lat"] = 95.0
    bad_truth = tmp_path / "bad_truth.jsonl"
    bad_truth.write_text(json.dumps(record) + "\n")
    assert cli.run(["evaluate", "--predictions", str(bad_truth), "--strategy", "oracle"]) == 1

    not_json = tmp_path / "not_json.jsonl"
    not_json.write_text("not json\n")
    assert cli.run(["evaluate", "--predictions", str(not_json)]) == 1
    assert cli.run(["stability", "--predictions", str(not_json)]) == 1

    bad_report = tmp_path / "reports.jsonl"
    bad_report.write_text(json.dumps({"benchmark_name": "x", "strategy": "single", "fractions": [0.5]}) + "\n")
    assert cli.run(["report", "--reports", str(bad_report)]) == 1


def test_stability_to_stdout(tmp_path, make_set):
    predictions = tmp_path / "p.jsonl"
    point = GeoPoint(lat=1.0, lon=1.0)
    write_models(predictions, [
        prediction_record(make_set([point] * 4, sample_id="collapsed"), WINDMILL_TRUTH),
        prediction_record(make_set([None, None], sample_id="empty"), WINDMILL_TRUTH),
    ])
    result = runner.invoke(cli.app, ["stability", "--predictions", str(predictions)])
    assert result.exit_code == 0
    lines = _json_lines(result.stdout)
    assert [line["sample_id"] for line in lines] == ["collapsed"]
    assert lines[0]["mode_collapse"] is True


def _imagery_reply(url, params):
    center = bbox_center(params)
    images = []
    for i, distance in enumerate((0.0, 0.3)):
        p = destination_point(center, 1.0, distance)
        images.append({
            "id": f"{center.lat:.5f}:{center.lon:.5f}:{i}",
            "computed_geometry": {"type": "Point", "coordinates": [p.lon, p.lat]},
            "thumb_1024_url": f"https://images.test/{p.lat:.6f}_{p.lon:.6f}.jpg",
        })
    return FakeResponse(200, {"data": images})


def _answer_near_image(body, n):
    lat, lon = (float(v) for v in _IMAGE_URL.match(image_part(body)).groups())
    return "A quiet village street.\n" + format_answer(destination_point(GeoPoint(lat=lat, lon=lon), 0.0, 0.5))


def _toml_path(path) -> str:
    return json.dumps(str(path))


def _write_run_config(workdir, settlements) -> str:
    config = workdir / "run.toml"
    config.write_text("\n".join([
        "[sampling]",
        'preset = "sample"',
        "k = 3",
        "[curation]",
        "n_per_settlement = 2",
        "seed = 7",
        "[paths]",
        f"settlements = {_toml_path(settlements)}",
        f"probes = {_toml_path(workdir / 'probes.jsonl')}",
        f"manifest = {_toml_path(workdir / 'manifest.jsonl')}",
        f"predictions = {_toml_path(workdir / 'predictions.jsonl')}",
        f"aggregated = {_toml_path(workdir / 'aggregated.jsonl')}",
        f"reports = {_toml_path(workdir / 'reports.jsonl')}",
        "[run_metadata]",
        'lora_rank = "16"',
    ]) + "\n")
    return str(config)


def _pipeline(workdir, monkeypatch, mock_endpoint):
    settlements = workdir / "cities.txt"
    settlements.write_text(settlements_tsv([
        (11, "Alpha", 46.2, 7.3, 300),
        (12, "Beta", -12.05, -75.2, 4200),
        (13, "Gamma", 35.68, 139.7, 8000000),
        (14, "Delta", 59.9, 10.7, 900),
    ]))
    config = _write_run_config(workdir, settlements)
    endpoint = mock_endpoint(_answer_near_image)
    monkeypatch.setattr(cli, "build_imagery_client",
                        lambda cfg: ImageryClient(session=FakeSession(_imagery_reply), sleep=lambda s: None, seed=0))
    monkeypatch.setattr(cli, "build_client", lambda cfg: endpoint.client())

    steps = [
        ["curate", "sample"],
        ["curate", "fetch", "--name", "e2e"],
        ["infer"],
        ["aggregate", "--strategy", "cluster"],
        ["evaluate", "--strategy", "cluster", "--benchmark-name", "e2e"],
        ["report", "--format", "csv", "--out", str(workdir / "table.csv")],
    ]
    outputs = []
    for args in steps:
        result = runner.invoke(cli.app, args + ["--config", config])
        assert result.exit_code == 0, (args, result.output)
        outputs.append(result)
    return endpoint, outputs


def test_end_to_end_pipeline_is_reproducible(tmp_path, monkeypatch, mock_endpoint):
    monkeypatch.setenv("MAPILLARY_TOKEN", "MLY|test")
    first, second = tmp_path / "first", tmp_path / "second"
    first.mkdir()
    second.mkdir()

    endpoint, outputs = _pipeline(first, monkeypatch, mock_endpoint)
    _pipeline(second, monkeypatch, mock_endpoint)

    # three settlements below the cap, two probes each, two images per probe
    assert len((first / "probes.jsonl").read_text().splitlines()) == 1 + 6
    assert len((first / "manifest.jsonl").read_text().splitlines()) == 1 + 12
    assert len(endpoint.bodies) == 12 * 3
    assert all(body["temperature"] == 1.0 and body["top_p"] == 0.95 for body in endpoint.bodies)
    assert "| e2e | cluster | 100.00 | 100.00 | 100.00 | 100.00 | 100.00 |" in _table_lines(outputs[4].stdout)
    report = AccuracyReport.model_validate_json((first / "reports.jsonl").read_text())
    assert report.run_metadata == {"lora_rank": "16"}

    for name in ("probes.jsonl", "manifest.jsonl", "predictions.jsonl", "aggregated.jsonl", "reports.jsonl",
                 "table.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_captions_generate_decodes_greedy(tmp_path, monkeypatch, mock_endpoint, caption_doc):
    samples = [BenchmarkSample(sample_id=f"s{i}", image_ref=f"https://images.test/s{i}.jpg", ground_truth=WINDMILL_TRUTH)
               for i in range(2)]
    write_manifest(build_manifest("bench", samples, PROVENANCE), tmp_path / "manifest.jsonl")
    endpoint = mock_endpoint(lambda body, n: json.dumps(caption_doc))
    monkeypatch.setattr(cli, "build_client", lambda cfg: endpoint.client())
    out = tmp_path / "sft.jsonl"

    result = runner.invoke(cli.app, ["captions", "generate", "--manifest", str(tmp_path / "manifest.jsonl"),
                                     "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert len(endpoint.bodies) == 2
    for body in endpoint.bodies:
        assert body["temperature"] == 0.0
        assert body["top_p"] == 1.0
        assert body["max_tokens"] == 20000
    assert len(out.read_text().splitlines()) == 2

    config = tmp_path / "run.toml"
    config.write_text('[sampling]\npreset = "sample"\n[captions]\ntemperature = 0.3\n')
    result = runner.invoke(cli.app, ["captions", "generate", "--manifest", str(tmp_path / "manifest.jsonl"),
                                     "--out", str(out), "--config", str(config)])
    assert result.exit_code == 0, result.output
    assert [body["temperature"] for body in endpoint.bodies[2:]] == [0.3, 0.3]
