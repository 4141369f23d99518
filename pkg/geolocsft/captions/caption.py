import json
import re
from typing import List, Union

from pydantic import ValidationError

from geolocsft.captions.prompts import GEO_CAPTION_PROMPT
from geolocsft.core.errors import GeoLocError, InvalidRadii
from geolocsft.core.geodesy import haversine_km, validate_point
from geolocsft.core.parsing import count_answer_spans, format_answer, snap_point
from geolocsft.core.schemas import GeoCaption, GeoPoint, QualityReject, SFTRecord, ValidationFailure

REQUIRED_FIELDS = ("broad_analysis", "local_analysis", "micro_features", "disambiguation", "final_point")
_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def build_geo_prompt(image_ref: str, broad_radius_km: float = 25, local_radius_km: float = 1) -> str:
    """Builds the geo-caption instruction prompt for one image.
    :param image_ref: path or URL of the image, echoed in the prompt
    :param broad_radius_km: radius of the regional analysis
    :param local_radius_km: radius of the local analysis, must be smaller than broad_radius_km
    """
    if not (broad_radius_km > 0 and local_radius_km > 0) or broad_radius_km <= local_radius_km:
        raise InvalidRadii(f"Need broad > local > 0, got broad={broad_radius_km}, local={local_radius_km}")
    return GEO_CAPTION_PROMPT.format(
        image_ref=image_ref,
        broad_radius_km=f"{broad_radius_km:g}",
        local_radius_km=f"{local_radius_km:g}",
    )


def serialize_caption(caption: GeoCaption) -> str:
    return caption.model_dump_json()


def _json_body(raw: str) -> str:
    fenced = _FENCE.search(raw)
    if fenced:
        return fenced.group(1).strip()
    start, end = raw.find("{"), raw.rfind("}")
    if start != -1 and end > start:
        return raw[start:end + 1]
    return raw


def _is_empty(value) -> bool:
    if value is None:
        return True
    if isinstance(value, str):
        return not value.strip()
    if isinstance(value, (list, dict)):
        return len(value) == 0
    return False


def _coords_valid(value) -> bool:
    if not isinstance(value, dict) or "lat" not in value or "lon" not in value:
        return False
    if isinstance(value["lat"], bool) or isinstance(value["lon"], bool):
        return False
    try:
        validate_point(value["lat"], value["lon"])
    except GeoLocError:
        return False
    return True


def validate_geocaption(raw: str) -> Union[GeoCaption, ValidationFailure]:
    """Parses a caption document and checks every GeoCaption invariant.
    Tolerates markdown code fences and prose around the JSON object.
    :return: the GeoCaption, or a ValidationFailure listing every violated field
    """
    try:
        doc = json.loads(_json_body(raw or ""))
    except json.JSONDecodeError as e:
        return ValidationFailure(parse_error=f"invalid JSON: {e}")
    if not isinstance(doc, dict):
        return ValidationFailure(parse_error=f"expected a JSON object, got {type(doc).__name__}")

    missing: List[str] = [name for name in REQUIRED_FIELDS if _is_empty(doc.get(name))]
    invalid_coords = "final_point" not in missing and not _coords_valid(doc["final_point"])
    if missing or invalid_coords:
        return ValidationFailure(missing_fields=missing, invalid_coords=invalid_coords)

    try:
        caption = GeoCaption.model_validate(doc)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        return ValidationFailure(parse_error=problems)
    if count_answer_spans(serialize_caption(caption)) > 0:
        return ValidationFailure(parse_error="caption text must not contain answer tags")
    return caption


def assemble_sft_record(
        image_ref: str,
        caption: GeoCaption,
        ground_truth: GeoPoint,
        gate_km: float = 1.0,
) -> Union[SFTRecord, QualityReject]:
    """Serializes the caption, appends the answer tag and applies the distance quality gate.
    The caption's final point is snapped to the 6 decimals the answer tag carries.
    """
    caption = caption.model_copy(update={"final_point": snap_point(caption.final_point)})
    distance = haversine_km(caption.final_point, ground_truth)
    if distance > gate_km:
        return QualityReject(image_ref=image_ref, distance_km=distance, gate_km=gate_km)
    target_text = serialize_caption(caption) + "\n" + format_answer(caption.final_point)
    return SFTRecord.model_validate(
        {
            "schema": "geocaption/v1",
            "image_ref": image_ref,
            "caption": caption,
            "target_text": target_text,
            "ground_truth": ground_truth,
            "gate_km": gate_km,
        }
    )
