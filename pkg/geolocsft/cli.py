import functools
import json
import logging
from pathlib import Path
from typing import Any, List, Optional, Tuple

import click
import typer

from geolocsft.core.chat_model import ChatClient
from geolocsft.core.config import RunConfig, load_config
from geolocsft.core.errors import GeoLocError
from geolocsft.core.jsonl import write_models
from geolocsft.core.logs import setup_logging
from geolocsft.core.schemas import SAMPLING_PRESETS, Strategy, ValidationFailure
from geolocsft.curate import run_fetch, run_filter, run_sample
from geolocsft.curation.imagery import ImageryClient
from geolocsft.evaluate import run_aggregate, run_evaluate, run_report, run_stability
from geolocsft.generate import generate_captions, validate_caption_file
from geolocsft.infer import run_inference
from geolocsft.metrics.report import FORMATS, render_report
from geolocsft.strategies.base import Aggregator

logger = logging.getLogger(__name__)

app = typer.Typer(no_args_is_help=True, help="Geolocation benchmark curation, inference and evaluation.")
curate_app = typer.Typer(no_args_is_help=True, help="Build benchmark manifests from a settlements database.")
captions_app = typer.Typer(no_args_is_help=True, help="Generate and validate geo-caption SFT data.")
app.add_typer(curate_app, name="curate")
app.add_typer(captions_app, name="captions")

CONFIG_OPTION = typer.Option(None, "--config", help="The TOML run config. Flags override its values.")
DRY_RUN_OPTION = typer.Option(False, "--dry-run", help="Print the effective config (secrets redacted) and exit.")
JOBS_OPTION = typer.Option(4, "--jobs", min=1, help="The maximum number of worker threads.")
VERBOSE_OPTION = typer.Option(False, "--verbose", help="Log debug messages.")


def build_client(config: RunConfig) -> ChatClient:
    return ChatClient(config.endpoint, seed=config.curation.seed)


def build_imagery_client(config: RunConfig) -> ImageryClient:
    return ImageryClient(
        token_env_var_name=config.imagery.token_env_var_name,
        base_url=config.imagery.base_url,
        page_limit=config.imagery.page_limit,
        per_point_cap=config.imagery.per_point_cap,
        max_concurrent_requests=config.imagery.max_concurrent_requests,
        seed=config.curation.seed,
    )


def _domain_errors(command):
    """Turns domain errors, missing inputs and malformed input lines into exit status 1."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (GeoLocError, FileNotFoundError, ValueError) as e:
            logger.error("%s: %s", type(e).__name__, e)
            raise typer.Exit(code=1)
    return wrapper


def _resolve(config_path: Optional[Path], verbose: bool, dry_run: bool, command: str, **overrides: Any) -> Optional[RunConfig]:
    """Loads the run config with flag overrides; returns None after printing it when dry_run is set."""
    setup_logging(verbose)
    config = load_config(config_path).with_overrides(**overrides)
    if dry_run:
        typer.echo(json.dumps({"command": command, "config": config.redacted()}, indent=2, sort_keys=True))
        return None
    return config


def _need(value: Optional[Path], flag: str) -> Path:
    if value is None:
        raise typer.BadParameter(f"no path given; pass {flag} or set it in the config [paths] section")
    return value


def _parse_bbox(value: Optional[str]) -> Optional[Tuple[float, float, float, float]]:
    if value is None:
        return None
    try:
        parts = tuple(float(v) for v in value.split(","))
    except ValueError:
        raise typer.BadParameter("expected min_lat,min_lon,max_lat,max_lon")
    if len(parts) != 4 or parts[0] > parts[2] or parts[1] > parts[3]:
        raise typer.BadParameter("expected min_lat,min_lon,max_lat,max_lon with min <= max")
    return parts


def _check_choice(value: Optional[str], choices, flag: str) -> Optional[str]:
    if value is not None and value not in choices:
        raise typer.BadParameter(f"{flag} must be one of {', '.join(sorted(choices))}")
    return value


@curate_app.command("filter")
@_domain_errors
def curate_filter(
        settlements: Optional[Path] = typer.Option(None, help="The settlements TSV (geonames format)."),
        out: Optional[Path] = typer.Option(None, help="The JSONL file to write the kept settlements to."),
        population_cap: Optional[int] = typer.Option(None, min=1, help="Keep settlements with population below this value."),
        config: Optional[Path] = CONFIG_OPTION,
        dry_run: bool = DRY_RUN_OPTION,
        verbose: bool = VERBOSE_OPTION,
):
    """
    Keep the low-population settlements of a settlements database.
    """
    cfg = _resolve(config, verbose, dry_run, "curate filter",
                   **{"paths.settlements": settlements, "curation.population_cap": population_cap})
    if cfg is None:
        return
    out = _need(out, "--out")
    run_filter(_need(cfg.paths.settlements, "--settlements"), out, cfg.curation.population_cap)


@curate_app.command("sample")
@_domain_errors
def curate_sample(
        settlements: Optional[Path] = typer.Option(None, help="The settlements TSV (geonames format)."),
        out: Optional[Path] = typer.Option(None, help="The probes JSONL to write."),
        n_per_settlement: Optional[int] = typer.Option(None, min=1, help="The number of coordinates per settlement."),
        radius_km: Optional[float] = typer.Option(None, help="The sampling radius around each settlement."),
        population_cap: Optional[int] = typer.Option(None, min=1, help="Keep settlements with population below this value."),
        seed: Optional[int] = typer.Option(None, help="The sampling seed."),
        max_settlements: Optional[int] = typer.Option(None, min=1, help="Sample at most this many settlements."),
        config: Optional[Path] = CONFIG_OPTION,
        dry_run: bool = DRY_RUN_OPTION,
        verbose: bool = VERBOSE_OPTION,
):
    """
    Sample probe coordinates around low-population settlements.
    """
    cfg = _resolve(config, verbose, dry_run, "curate sample", **{
        "paths.settlements": settlements,
        "paths.probes": out,
        "curation.n_per_settlement": n_per_settlement,
        "curation.sample_radius_km": radius_km,
        "curation.population_cap": population_cap,
        "curation.seed": seed,
        "curation.max_settlements": max_settlements,
    })
    if cfg is None:
        return
    run_sample(
        _need(cfg.paths.settlements, "--settlements"),
        _need(cfg.paths.probes, "--out"),
        n_per_settlement=cfg.curation.n_per_settlement,
        radius_km=cfg.curation.sample_radius_km,
        population_cap=cfg.curation.population_cap,
        seed=cfg.curation.seed,
        max_settlements=cfg.curation.max_settlements,
    )


@curate_app.command("fetch")
@_domain_errors
def curate_fetch(
        probes: Optional[Path] = typer.Option(None, help="The probes JSONL written by `curate sample`."),
        out: Optional[Path] = typer.Option(None, help="The manifest JSONL to write."),
        name: str = typer.Option("benchmark", help="The benchmark name, also the sample id prefix."),
        version: str = typer.Option("1", help="The benchmark version."),
        bbox_radius_km: Optional[float] = typer.Option(None, help="The half-size of the image search box."),
        config: Optional[Path] = CONFIG_OPTION,
        dry_run: bool = DRY_RUN_OPTION,
        jobs: int = JOBS_OPTION,
        verbose: bool = VERBOSE_OPTION,
):
    """
    Resolve probe coordinates into street-level images and write the benchmark manifest.
    """
    cfg = _resolve(config, verbose, dry_run, "curate fetch", **{
        "paths.probes": probes,
        "paths.manifest": out,
        "curation.bbox_radius_km": bbox_radius_km,
    })
    if cfg is None:
        return
    run_fetch(
        _need(cfg.paths.probes, "--probes"),
        _need(cfg.paths.manifest, "--out"),
        build_imagery_client(cfg),
        bbox_radius_km=cfg.curation.bbox_radius_km,
        name=name,
        version=version,
        jobs=jobs,
    )


@captions_app.command("generate")
@_domain_errors
def captions_generate(
        manifest: Optional[Path] = typer.Option(None, help="The manifest JSONL to caption."),
        out: Optional[Path] = typer.Option(None, help="The SFT records JSONL to write."),
        rejects: Optional[Path] = typer.Option(None, help="The rejects JSONL, defaults to <out>.rejects.jsonl."),
        limit: Optional[int] = typer.Option(None, min=1, help="Caption a geographically stratified selection of this size."),
        cell_deg: float = typer.Option(5.0, help="The grid cell size of the stratified selection."),
        seed: Optional[int] = typer.Option(None, help="The selection seed."),
        config: Optional[Path] = CONFIG_OPTION,
        dry_run: bool = DRY_RUN_OPTION,
        jobs: int = JOBS_OPTION,
        verbose: bool = VERBOSE_OPTION,
):
    """
    Generate structured geo-captions and assemble the accepted ones into SFT records.
    """
    cfg = _resolve(config, verbose, dry_run, "captions generate", **{
        "paths.manifest": manifest,
        "paths.sft_records": out,
        "curation.seed": seed,
    })
    if cfg is None:
        return
    generate_captions(
        _need(cfg.paths.manifest, "--manifest"),
        _need(cfg.paths.sft_records, "--out"),
        build_client(cfg),
        config=cfg.captions.decoding(),
        rejects_path=rejects,
        limit=limit,
        cell_deg=cell_deg,
        seed=cfg.curation.seed,
        broad_radius_km=cfg.captions.broad_radius_km,
        local_radius_km=cfg.captions.local_radius_km,
        gate_km=cfg.captions.gate_km,
        max_tokens=cfg.captions.max_tokens,
        jobs=jobs,
    )


@captions_app.command("validate")
@_domain_errors
def captions_validate(
        path: Path = typer.Argument(..., help="The caption JSON document to validate."),
        config: Optional[Path] = CONFIG_OPTION,
        dry_run: bool = DRY_RUN_OPTION,
        verbose: bool = VERBOSE_OPTION,
):
    """
    Validate one geo-caption document; prints the validated caption or the failure as JSON.
    """
    if _resolve(config, verbose, dry_run, "captions validate") is None:
        return
    result = validate_caption_file(path)
    typer.echo(result.model_dump_json())
    if isinstance(result, ValidationFailure):
        raise typer.Exit(code=1)


@app.command()
@_domain_errors
def infer(
        manifest: Optional[Path] = typer.Option(None, help="The manifest JSONL to run inference on."),
        out: Optional[Path] = typer.Option(None, help="The predictions JSONL to write."),
        preset: Optional[str] = typer.Option(None, help="The sampling preset: sample or greedy."),
        k: Optional[int] = typer.Option(None, min=1, help="The number of attempts per image."),
        temperature: Optional[float] = typer.Option(None, help="The temperature to use for sampling."),
        top_p: Optional[float] = typer.Option(None, help="The top_p to use for sampling."),
        max_tokens: Optional[int] = typer.Option(None, help="The maximum number of tokens to generate."),
        best_effort: bool = typer.Option(False, "--best-effort", help="Record failed attempts instead of aborting."),
        strict_parse: bool = typer.Option(False, "--strict-parse", help="Disable lenient answer parsing."),
        config: Optional[Path] = CONFIG_OPTION,
        dry_run: bool = DRY_RUN_OPTION,
        jobs: int = JOBS_OPTION,
        verbose: bool = VERBOSE_OPTION,
):
    """
    Sample K geolocation attempts per image of a manifest.
    """
    _check_choice(preset, SAMPLING_PRESETS, "--preset")
    sampling = SAMPLING_PRESETS[preset].model_dump() if preset is not None else None
    # the preset replaces the whole section before the individual flags apply
    cfg = _resolve(config, verbose, dry_run, "infer", **{
        "paths.manifest": manifest,
        "paths.predictions": out,
        "sampling": sampling,
        "sampling.k": k,
        "sampling.temperature": temperature,
        "sampling.top_p": top_p,
        "sampling.max_tokens": max_tokens,
    })
    if cfg is None:
        return
    run_inference(
        _need(cfg.paths.manifest, "--manifest"),
        _need(cfg.paths.predictions, "--out"),
        build_client(cfg),
        config=cfg.sampling,
        best_effort=best_effort,
        strict_parse=strict_parse,
        jobs=jobs,
    )


def _aggregator(strategy: str, cfg: RunConfig, strict_parse: bool) -> Aggregator:
    _check_choice(strategy, {s.value for s in Strategy}, "--strategy")
    client = build_client(cfg) if strategy == Strategy.LLM_CONSENSUS.value else None
    return Aggregator(strategy, link_radius_km=cfg.aggregation.link_radius_km, client=client, strict_parse=strict_parse)


@app.command()
@_domain_errors
def aggregate(
        predictions: Optional[Path] = typer.Option(None, help="The predictions JSONL."),
        strategy: str = typer.Option("single", help="The strategy: single, oracle, cluster or llm-consensus."),
        out: Optional[Path] = typer.Option(None, help="The aggregated predictions JSONL to write."),
        link_radius_km: Optional[float] = typer.Option(None, help="The linkage radius of cluster consensus."),
        strict_parse: bool = typer.Option(False, "--strict-parse", help="Disable lenient answer parsing."),
        config: Optional[Path] = CONFIG_OPTION,
        dry_run: bool = DRY_RUN_OPTION,
        jobs: int = JOBS_OPTION,
        verbose: bool = VERBOSE_OPTION,
):
    """
    Select one prediction per image with the given strategy.
    """
    _check_choice(strategy, {s.value for s in Strategy}, "--strategy")
    cfg = _resolve(config, verbose, dry_run, "aggregate", **{
        "paths.predictions": predictions,
        "paths.aggregated": out,
        "aggregation.link_radius_km": link_radius_km,
    })
    if cfg is None:
        return
    run_aggregate(
        _need(cfg.paths.predictions, "--predictions"),
        _need(cfg.paths.aggregated, "--out"),
        _aggregator(strategy, cfg, strict_parse),
        strict_parse=strict_parse,
        jobs=jobs,
    )


@app.command()
@_domain_errors
def evaluate(
        predictions: Optional[Path] = typer.Option(None, help="The predictions or aggregated predictions JSONL."),
        strategy: str = typer.Option("single", help="The strategy: single, oracle, cluster or llm-consensus."),
        benchmark_name: Optional[str] = typer.Option(None, help="The benchmark name, defaults to the file name."),
        subset_bbox: Optional[str] = typer.Option(None, help="Only score ground truths in min_lat,min_lon,max_lat,max_lon."),
        out: Optional[Path] = typer.Option(None, help="The report JSONL to write."),
        fmt: str = typer.Option("markdown", "--format", help="The table format: markdown or csv."),
        link_radius_km: Optional[float] = typer.Option(None, help="The linkage radius of cluster consensus."),
        strict_parse: bool = typer.Option(False, "--strict-parse", help="Disable lenient answer parsing."),
        config: Optional[Path] = CONFIG_OPTION,
        dry_run: bool = DRY_RUN_OPTION,
        jobs: int = JOBS_OPTION,
        verbose: bool = VERBOSE_OPTION,
):
    """
    Compute Acc@R over the configured distance thresholds and print the report row.
    """
    _check_choice(strategy, {s.value for s in Strategy}, "--strategy")
    _check_choice(fmt, FORMATS, "--format")
    bbox = _parse_bbox(subset_bbox)
    cfg = _resolve(config, verbose, dry_run, "evaluate", **{
        "paths.predictions": predictions,
        "paths.reports": out,
        "aggregation.link_radius_km": link_radius_km,
    })
    if cfg is None:
        return
    report = run_evaluate(
        _need(cfg.paths.predictions, "--predictions"),
        _aggregator(strategy, cfg, strict_parse),
        thresholds=cfg.thresholds,
        benchmark_name=benchmark_name,
        subset_bbox=bbox,
        strict_parse=strict_parse,
        jobs=jobs,
        run_metadata=cfg.run_metadata,
    )
    if cfg.paths.reports is not None:
        write_models(cfg.paths.reports, [report])
        logger.info("Wrote report to %s", cfg.paths.reports)
    typer.echo(render_report([report], fmt=fmt), nl=False)


@app.command()
@_domain_errors
def stability(
        predictions: Optional[Path] = typer.Option(None, help="The predictions JSONL."),
        out: Optional[Path] = typer.Option(None, help="The stability JSONL to write, defaults to stdout."),
        strict_parse: bool = typer.Option(False, "--strict-parse", help="Disable lenient answer parsing."),
        config: Optional[Path] = CONFIG_OPTION,
        dry_run: bool = DRY_RUN_OPTION,
        verbose: bool = VERBOSE_OPTION,
):
    """
    Report the spread of the K attempts per image and flag mode collapse.
    """
    cfg = _resolve(config, verbose, dry_run, "stability", **{"paths.predictions": predictions})
    if cfg is None:
        return
    reports = run_stability(_need(cfg.paths.predictions, "--predictions"), strict_parse=strict_parse)
    if out is not None:
        write_models(out, reports)
    else:
        for report in reports:
            typer.echo(report.model_dump_json())


@app.command()
@_domain_errors
def report(
        reports: Optional[List[Path]] = typer.Option(None, "--reports", help="Report JSONL files, repeatable."),
        baseline: Optional[List[Path]] = typer.Option(None, "--baseline", help="Baseline report JSONL files, repeatable."),
        fmt: str = typer.Option("markdown", "--format", help="The table format: markdown or csv."),
        out: Optional[Path] = typer.Option(None, help="The file to write the table to, defaults to stdout."),
        config: Optional[Path] = CONFIG_OPTION,
        dry_run: bool = DRY_RUN_OPTION,
        verbose: bool = VERBOSE_OPTION,
):
    """
    Render stored accuracy reports as a markdown or CSV table, with Δ rows against baselines.
    """
    _check_choice(fmt, FORMATS, "--format")
    cfg = _resolve(config, verbose, dry_run, "report")
    if cfg is None:
        return
    paths = list(reports or ([cfg.paths.reports] if cfg.paths.reports is not None else []))
    if not paths:
        raise typer.BadParameter("no reports given; pass --reports or set paths.reports in the config")
    table = run_report(paths, fmt=fmt, baselines=list(baseline or []))
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table, encoding="utf8")
        logger.info("Wrote report table to %s", out)
    else:
        typer.echo(table, nl=False)


def run(argv: Optional[List[str]] = None) -> int:
    """Runs the CLI and returns the process exit status: 0 success, 1 domain error, 2 usage error."""
    try:
        result = app(args=argv, standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 2
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.Abort:
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    app()
