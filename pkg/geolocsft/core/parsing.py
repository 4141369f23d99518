"""Extraction and emission of coordinates in the `<answer> lat: ... lon: ... </answer>` format."""
import re
from typing import Dict, List, Optional, Union

from geolocsft.core.errors import GeoLocError
from geolocsft.core.geodesy import validate_point
from geolocsft.core.schemas import (
    Candidate,
    GeoPoint,
    ParseFailure,
    ParseReason,
    PredictionRecord,
    PredictionSet,
    SamplingConfig,
)

# a span may not contain another opening tag, so "<answer> <answer>x</answer>" yields "x"
_SPAN = re.compile(r"<answer>((?:(?!<answer>).)*?)</answer>", re.IGNORECASE | re.DOTALL)

_NUMBER = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)"
_KEY = re.compile(r"(?<![A-Za-z])(latitude|lat|longitude|long|lng|lon)(?![A-Za-z])", re.IGNORECASE)
_LENIENT_VALUE = re.compile(
    rf"\s*[:=]?\s*(?P<num>[-+]?\s*(?:\d+(?:\.\d*)?|\.\d+))\s*(?:°|º|deg(?:rees)?)?\s*(?P<hemi>[NSEW](?![A-Za-z]))?"
)
_STRICT_SPAN = re.compile(
    rf"\s*(?P<k1>lat|lon)\s*:\s*(?P<v1>{_NUMBER})\s+(?P<k2>lat|lon)\s*:\s*(?P<v2>{_NUMBER})\s*",
    re.IGNORECASE,
)
_BARE_PAIR = re.compile(rf"^\s*\(?\s*(?P<lat>{_NUMBER})\s*[,;\s]\s*(?P<lon>{_NUMBER})\s*\)?\s*$")

_HEMISPHERES = {"lat": {"N": 1.0, "S": -1.0}, "lon": {"E": 1.0, "W": -1.0}}


class _Malformed(Exception):
    def __init__(self, reason: ParseReason):
        self.reason = reason


def _as_text(text: Union[str, bytes, None]) -> str:
    if text is None:
        return ""
    if isinstance(text, bytes):
        return text.decode("utf-8", errors="replace")
    return str(text)


def answer_spans(text: Union[str, bytes, None]) -> List[str]:
    """Contents of every well-formed answer span, in order of appearance."""
    return _SPAN.findall(_as_text(text))


def count_answer_spans(text: Union[str, bytes, None]) -> int:
    return len(answer_spans(text))


def _canonical_key(key: str) -> str:
    return "lat" if key.lower().startswith("lat") else "lon"


def _lenient_values(span: str) -> Dict[str, float]:
    values: Dict[str, List[float]] = {"lat": [], "lon": []}
    normalized = span.replace("−", "-")
    for key_match in _KEY.finditer(normalized):
        key = _canonical_key(key_match.group(1))
        value_match = _LENIENT_VALUE.match(normalized, key_match.end())
        if value_match is None:
            raise _Malformed(ParseReason.MALFORMED_NUMBER)
        value = float(value_match.group("num").replace(" ", ""))
        hemi = value_match.group("hemi")
        if hemi:
            if hemi not in _HEMISPHERES[key]:
                raise _Malformed(ParseReason.MALFORMED_NUMBER)
            value = abs(value) * _HEMISPHERES[key][hemi]
        values[key].append(value)

    if not values["lat"] and not values["lon"]:
        bare = _BARE_PAIR.match(normalized)
        if bare is None:
            raise _Malformed(ParseReason.MALFORMED_NUMBER)
        return {"lat": float(bare.group("lat")), "lon": float(bare.group("lon"))}

    for key in ("lat", "lon"):
        if not values[key]:
            raise _Malformed(ParseReason.MALFORMED_NUMBER)
        if len(set(values[key])) > 1:
            raise _Malformed(ParseReason.MULTIPLE_CONFLICTING)
    return {"lat": values["lat"][0], "lon": values["lon"][0]}


def _strict_values(span: str) -> Dict[str, float]:
    match = _STRICT_SPAN.fullmatch(span)
    if match is None:
        raise _Malformed(ParseReason.MALFORMED_NUMBER)
    k1, k2 = match.group("k1").lower(), match.group("k2").lower()
    if k1 == k2:
        raise _Malformed(ParseReason.MALFORMED_NUMBER)
    return {k1: float(match.group("v1")), k2: float(match.group("v2"))}


def extract_answer(text: Union[str, bytes, None], strict: bool = False) -> Union[GeoPoint, ParseFailure]:
    """Parses the last well-formed answer span of a model output.
    Never raises: every problem is returned as a ParseFailure.
    :param text: the full model output
    :param strict: only accept `lat: <num> lon: <num>` (either order), no symbols or hemisphere letters
    :return: the parsed point or a ParseFailure
    """
    raw = _as_text(text)
    spans = answer_spans(raw)
    if not spans:
        return ParseFailure(reason=ParseReason.NO_ANSWER_TAG, raw_text=raw)
    try:
        values = _strict_values(spans[-1]) if strict else _lenient_values(spans[-1])
    except _Malformed as e:
        return ParseFailure(reason=e.reason, raw_text=raw)
    except (ValueError, OverflowError):
        return ParseFailure(reason=ParseReason.MALFORMED_NUMBER, raw_text=raw)

    if abs(values["lat"]) > 90.0:
        return ParseFailure(reason=ParseReason.OUT_OF_RANGE, raw_text=raw)
    try:
        return validate_point(values["lat"], values["lon"])
    except GeoLocError:
        return ParseFailure(reason=ParseReason.MALFORMED_NUMBER, raw_text=raw)


def _format_degrees(value: float) -> str:
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def snap_point(point: GeoPoint) -> GeoPoint:
    """Rounds a point to the 6 decimals that format_answer emits."""
    return GeoPoint(lat=round(point.lat, 6), lon=round(point.lon, 6))


def format_answer(point: GeoPoint) -> str:
    """Emits the canonical answer tag, with at most 6 decimals and no trailing zeros."""
    return f"<answer> lat: {_format_degrees(point.lat)} lon: {_format_degrees(point.lon)} </answer>"


def parse_attempt(text: Optional[str], attempt_index: int, strict: bool = False) -> Union[Candidate, ParseFailure]:
    result = extract_answer(text, strict=strict)
    if isinstance(result, ParseFailure):
        return result.model_copy(update={"attempt_index": attempt_index})
    return Candidate(point=result, raw_text=_as_text(text), attempt_index=attempt_index)


def build_prediction_set(
        sample_id: str,
        outputs: List[Union[str, ParseFailure]],
        config: SamplingConfig,
        strict: bool = False,
) -> PredictionSet:
    """Assembles a PredictionSet from per-attempt outputs in issue order.
    An output that is already a ParseFailure (transport error) is kept as-is.
    """
    candidates, failures = [], []
    for index, output in enumerate(outputs):
        if isinstance(output, ParseFailure):
            failures.append(output.model_copy(update={"attempt_index": index}))
            continue
        parsed = parse_attempt(output, index, strict=strict)
        (candidates if isinstance(parsed, Candidate) else failures).append(parsed)
    return PredictionSet(
        sample_id=sample_id,
        candidates=candidates,
        failures=failures,
        config_used=config.model_copy(update={"k": len(outputs)}),
    )


def parse_record(record: PredictionRecord, strict: bool = False) -> PredictionSet:
    """Parses a stored predictions-file record into a PredictionSet."""
    attempts = sorted(record.attempts, key=lambda a: a.index)
    outputs: List[Union[str, ParseFailure]] = []
    for attempt in attempts:
        if attempt.error is not None:
            outputs.append(ParseFailure(
                reason=ParseReason.NO_ANSWER_TAG, raw_text="", detail=attempt.error
            ))
        else:
            outputs.append(attempt.raw_text)
    config = record.config or SamplingConfig(k=len(outputs))
    return build_prediction_set(record.sample_id, outputs, config, strict=strict)
