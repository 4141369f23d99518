"""Run configuration: one TOML file drives every subcommand, CLI flags override it."""
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from geolocsft.core.errors import ConfigError
from geolocsft.core.schemas import GREEDY, SAMPLING_PRESETS, EndpointConfig, SamplingConfig, ThresholdSet

logger = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL_NAME = "gpt-4o"


class CurationConfig(BaseModel):
    population_cap: int = Field(default=5000, gt=0)
    sample_radius_km: float = Field(default=2.0, gt=0.0)
    seed: int = 0
    n_per_settlement: int = Field(default=1, ge=1)
    max_settlements: Optional[int] = Field(default=None, ge=1)
    bbox_radius_km: float = Field(default=1.0, gt=0.0)


class PathsConfig(BaseModel):
    settlements: Optional[Path] = None
    probes: Optional[Path] = None
    manifest: Optional[Path] = None
    predictions: Optional[Path] = None
    aggregated: Optional[Path] = None
    reports: Optional[Path] = None
    sft_records: Optional[Path] = None


class ImageryConfig(BaseModel):
    token_env_var_name: str = "MAPILLARY_TOKEN"
    base_url: str = "https://graph.mapillary.com"
    page_limit: int = Field(default=100, ge=1)
    per_point_cap: int = Field(default=50, ge=1)
    max_concurrent_requests: int = Field(default=4, ge=1)


class AggregationConfig(BaseModel):
    link_radius_km: float = Field(default=100.0, gt=0.0)


class CaptionConfig(BaseModel):
    broad_radius_km: float = 25.0
    local_radius_km: float = 1.0
    gate_km: float = Field(default=1.0, gt=0.0)
    max_tokens: int = Field(default=20000, ge=1)
    # caption decoding, independent of [sampling]
    temperature: float = Field(default=GREEDY.temperature, ge=0.0)
    top_p: float = Field(default=GREEDY.top_p, gt=0.0, le=1.0)

    def decoding(self) -> SamplingConfig:
        return SamplingConfig(k=1, temperature=self.temperature, top_p=self.top_p, max_tokens=self.max_tokens)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    endpoint: EndpointConfig = Field(
        default_factory=lambda: EndpointConfig(base_url=DEFAULT_BASE_URL, model_name=DEFAULT_MODEL_NAME)
    )
    sampling: SamplingConfig = Field(default_factory=lambda: SAMPLING_PRESETS["sample"])
    thresholds: ThresholdSet = Field(default_factory=ThresholdSet)
    curation: CurationConfig = Field(default_factory=CurationConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    imagery: ImageryConfig = Field(default_factory=ImageryConfig)
    aggregation: AggregationConfig = Field(default_factory=AggregationConfig)
    captions: CaptionConfig = Field(default_factory=CaptionConfig)
    # copied into every accuracy report, never interpreted (e.g. fine-tuning hyperparameters)
    run_metadata: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="before")
    @classmethod
    def _resolve_preset(cls, data: Any) -> Any:
        if not isinstance(data, dict) or not isinstance(data.get("sampling"), dict):
            return data
        sampling = dict(data["sampling"])
        preset = sampling.pop("preset", None)
        if preset is not None:
            if preset not in SAMPLING_PRESETS:
                raise ValueError(f"unknown sampling preset {preset!r}, expected one of {sorted(SAMPLING_PRESETS)}")
            sampling = {**SAMPLING_PRESETS[preset].model_dump(), **sampling}
        return {**data, "sampling": sampling}

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Applies dotted overrides such as `sampling.k=5`; None values are ignored."""
        data = self.model_dump()
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, _, key = dotted.partition(".")
            if key:
                data.setdefault(section, {})[key] = value
            else:
                data[section] = value
        return _validate(data, source="command line")

    def redacted(self) -> Dict[str, Any]:
        """The effective config as JSON-ready data, with secrets shown only as set/unset."""
        data = self.model_dump(mode="json")
        data["env"] = {
            name: "<set>" if os.getenv(name) else "<unset>"
            for name in (self.endpoint.api_key_env_var_name, self.imagery.token_env_var_name)
        }
        return data


def _validate(data: Dict[str, Any], source: str) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration from {source}: {e}") from e


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Reads a TOML run config; no path means all defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Could not parse {path}: {e}") from e
    if "thresholds" in data and isinstance(data["thresholds"], list):
        data["thresholds"] = {"radii_km": data["thresholds"]}
    config = _validate(data, source=str(path))
    logger.debug("Loaded run config from %s", path)
    return config
