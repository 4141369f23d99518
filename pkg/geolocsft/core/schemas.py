import math
from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

DEFAULT_THRESHOLDS_KM = (1.0, 25.0, 200.0, 750.0, 2500.0)
GEOCAPTION_SCHEMA = "geocaption/v1"
MANIFEST_SCHEMA = "manifest/v1"
PROBES_SCHEMA = "probes/v1"


def wrap_longitude(lon: float) -> float:
    """Wraps a longitude into [-180, 180]; values already in range are returned unchanged."""
    if -180.0 <= lon <= 180.0:
        return lon
    return ((lon + 180.0) % 360.0) - 180.0


class GeoPoint(BaseModel):
    """A latitude/longitude pair in decimal degrees."""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    lat: float = Field(ge=-90.0, le=90.0)
    lon: float

    @field_validator("lon")
    @classmethod
    def _wrap_lon(cls, value: float) -> float:
        return wrap_longitude(value)


class ThresholdSet(BaseModel):
    """Strictly increasing Acc@R radii in km."""
    model_config = ConfigDict(frozen=True)

    radii_km: List[float] = Field(default_factory=lambda: list(DEFAULT_THRESHOLDS_KM), min_length=1)

    @field_validator("radii_km")
    @classmethod
    def _strictly_increasing(cls, radii: List[float]) -> List[float]:
        if any(not math.isfinite(r) or r <= 0 for r in radii):
            raise ValueError("threshold radii must be finite and > 0")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("threshold radii must be strictly increasing")
        return radii


class ParseReason(str, Enum):
    NO_ANSWER_TAG = "NoAnswerTag"
    MALFORMED_NUMBER = "MalformedNumber"
    OUT_OF_RANGE = "OutOfRange"
    MULTIPLE_CONFLICTING = "MultipleConflicting"


class Candidate(BaseModel):
    """One parsed model prediction."""
    point: GeoPoint
    raw_text: str
    attempt_index: int = Field(ge=0)


class ParseFailure(BaseModel):
    """An attempt whose output did not yield coordinates."""
    reason: ParseReason
    raw_text: str
    attempt_index: Optional[int] = Field(default=None, ge=0)
    # set when the attempt never produced text (transport error under best-effort)
    detail: Optional[str] = None


class SamplingConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int = Field(default=10, ge=1)
    temperature: float = Field(default=1.0, ge=0.0)
    top_p: float = Field(default=0.95, gt=0.0, le=1.0)
    max_tokens: int = Field(default=2048, ge=1)

    def single(self) -> "SamplingConfig":
        """The same decoding settings restricted to one attempt."""
        return self.model_copy(update={"k": 1})


SAMPLE = SamplingConfig(k=10, temperature=1.0, top_p=0.95)
GREEDY = SamplingConfig(k=1, temperature=0.0, top_p=1.0)
SAMPLING_PRESETS = {"sample": SAMPLE, "greedy": GREEDY}


class EndpointConfig(BaseModel):
    """An OpenAI-compatible chat-completions endpoint."""
    model_config = ConfigDict(frozen=True)

    base_url: str
    model_name: str
    api_key_env_var_name: str = "OPENAI_API_KEY"
    timeout_s: float = Field(default=120.0, gt=0.0)
    max_retries: int = Field(default=3, ge=0)
    max_concurrent_requests: int = Field(default=8, ge=1)
    backoff_base_s: float = Field(default=1.0, ge=0.0)
    backoff_cap_s: float = Field(default=60.0, ge=0.0)


class PredictionSet(BaseModel):
    """The K attempts made for one sample, split into parsed candidates and failures."""
    sample_id: str
    candidates: List[Candidate] = Field(default_factory=list)
    failures: List[ParseFailure] = Field(default_factory=list)
    config_used: SamplingConfig

    @model_validator(mode="after")
    def _check_attempts(self) -> "PredictionSet":
        k = self.config_used.k
        if len(self.candidates) + len(self.failures) != k:
            raise ValueError(
                f"{len(self.candidates)} candidates + {len(self.failures)} failures != k={k}"
            )
        indices = [c.attempt_index for c in self.candidates]
        if len(set(indices)) != len(indices):
            raise ValueError("candidate attempt_index values must be unique")
        if any(i >= k for i in indices):
            raise ValueError(f"attempt_index out of range for k={k}")
        failed = {f.attempt_index for f in self.failures if f.attempt_index is not None}
        if failed & set(indices):
            raise ValueError("an attempt cannot be both a candidate and a failure")
        self.candidates.sort(key=lambda c: c.attempt_index)
        return self


class Attempt(BaseModel):
    """One raw attempt as stored in a predictions file."""
    index: int = Field(ge=0)
    raw_text: str = ""
    error: Optional[str] = None


class PredictionRecord(BaseModel):
    """One line of a predictions JSONL file."""
    sample_id: str
    ground_truth: GeoPoint
    attempts: List[Attempt]
    config: Optional[SamplingConfig] = None


class MicroFeature(BaseModel):
    feature: str = Field(min_length=1)
    geographic_significance: str = Field(min_length=1)


class Disambiguation(BaseModel):
    similar_region: str = Field(min_length=1)
    exclusion_reason: str = Field(min_length=1)


class GeoCaption(BaseModel):
    """Structured multi-scale geo-analysis of one image."""
    broad_analysis: str
    local_analysis: str
    micro_features: List[MicroFeature] = Field(min_length=1)
    disambiguation: List[Disambiguation] = Field(min_length=1)
    final_point: GeoPoint

    @field_validator("broad_analysis", "local_analysis")
    @classmethod
    def _nonempty_text(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("analysis text must not be empty")
        return value


class ValidationFailure(BaseModel):
    """Every problem found in a caption document."""
    missing_fields: List[str] = Field(default_factory=list)
    invalid_coords: bool = False
    parse_error: Optional[str] = None


class QualityReject(BaseModel):
    image_ref: str
    distance_km: float
    gate_km: float


class CaptionReject(BaseModel):
    """One line of a caption rejects file: why a sample produced no SFT record."""
    sample_id: str
    image_ref: str
    stage: Literal["transport", "validation", "quality"]
    validation: Optional[ValidationFailure] = None
    quality: Optional[QualityReject] = None
    error: Optional[str] = None
    raw_text: str = ""


class SFTRecord(BaseModel):
    """A training pair: image, validated caption and the serialized target text."""
    schema_: Literal["geocaption/v1"] = Field(default=GEOCAPTION_SCHEMA, alias="schema")
    image_ref: str
    caption: GeoCaption
    target_text: str
    ground_truth: GeoPoint
    gate_km: float = Field(default=1.0, gt=0.0)

    model_config = ConfigDict(populate_by_name=True, serialize_by_alias=True)

    @model_validator(mode="after")
    def _check_target(self) -> "SFTRecord":
        from geolocsft.core.geodesy import haversine_km
        from geolocsft.core.parsing import count_answer_spans, extract_answer

        if count_answer_spans(self.target_text) != 1:
            raise ValueError("target_text must contain exactly one answer tag")
        parsed = extract_answer(self.target_text)
        if parsed != self.caption.final_point:
            raise ValueError("answer tag in target_text does not match caption.final_point")
        distance = haversine_km(self.caption.final_point, self.ground_truth)
        if distance > self.gate_km:
            raise ValueError(f"caption coordinates {distance:.3f} km from ground truth (gate {self.gate_km} km)")
        return self


class SettlementRecord(BaseModel):
    id: str
    name: str
    point: GeoPoint
    population: int = Field(ge=0)


class BenchmarkSample(BaseModel):
    sample_id: str
    image_ref: str
    ground_truth: GeoPoint
    source_settlement_id: Optional[str] = None
    metadata: Dict[str, Any] = Field(default_factory=dict)


class Probe(BaseModel):
    """A sampled coordinate around a settlement, to be resolved into images."""
    settlement_id: str
    point: GeoPoint


class Provenance(BaseModel):
    settlement_db_hash: str = Field(min_length=1)
    population_cap: int = Field(gt=0)
    sampling_seed: int
    sample_radius_km: float = Field(gt=0.0)


class ManifestHeader(BaseModel):
    """First line of a manifest or probes JSONL file."""
    schema_: str = Field(default=MANIFEST_SCHEMA, alias="schema")
    name: str
    version: str
    provenance: Provenance

    model_config = ConfigDict(populate_by_name=True, serialize_by_alias=True)


class BenchmarkManifest(BaseModel):
    name: str
    version: str
    samples: List[BenchmarkSample]
    provenance: Provenance

    @model_validator(mode="after")
    def _unique_ids(self) -> "BenchmarkManifest":
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("sample_id values must be unique within a manifest")
        return self


class Strategy(str, Enum):
    SINGLE = "single"
    ORACLE = "oracle"
    CLUSTER = "cluster"
    LLM_CONSENSUS = "llm-consensus"


class AggregationOutcome(BaseModel):
    chosen: Candidate
    strategy: Strategy
    diagnostics: Dict[str, Any] = Field(default_factory=dict)


class AggregatedPrediction(BaseModel):
    """One line of an aggregated predictions file; outcome is None when no attempt parsed."""
    sample_id: str
    ground_truth: GeoPoint
    outcome: Optional[AggregationOutcome] = None
    error_km: Optional[float] = None


class AccuracyReport(BaseModel):
    benchmark_name: str
    strategy: str
    thresholds: ThresholdSet = Field(default_factory=ThresholdSet)
    fractions: List[float]
    n_samples: int = Field(ge=1)
    n_parse_misses: int = Field(default=0, ge=0)
    mean_error_km: Optional[float] = None
    median_error_km: Optional[float] = None
    run_metadata: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_fractions(self) -> "AccuracyReport":
        if len(self.fractions) != len(self.thresholds.radii_km):
            raise ValueError("fractions must align with thresholds")
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ValueError("fractions must lie in [0, 1]")
        if any(b < a for a, b in zip(self.fractions, self.fractions[1:])):
            raise ValueError("fractions must be nondecreasing in R")
        if self.n_parse_misses > self.n_samples:
            raise ValueError("n_parse_misses cannot exceed n_samples")
        return self


class StabilityReport(BaseModel):
    sample_id: str
    per_attempt_error_km: List[float] = Field(min_length=1)
    max_error_km: float
    error_variance: float = Field(ge=0.0)
    distinct_points: int = Field(ge=1)
    mode_collapse: bool

    @model_validator(mode="after")
    def _check_collapse(self) -> "StabilityReport":
        if self.distinct_points > len(self.per_attempt_error_km):
            raise ValueError("distinct_points cannot exceed the number of attempts")
        if self.mode_collapse and self.error_variance != 0.0:
            raise ValueError("a collapsed prediction set has zero error variance")
        return self
