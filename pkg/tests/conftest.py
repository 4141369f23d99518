import json
import threading
import time
from typing import Callable, List, Optional, Sequence, Union
from urllib.parse import parse_qs, urlparse

import httpx
import pytest

from geolocsft.core.chat_model import ChatClient
from geolocsft.core.geodesy import destination_point
from geolocsft.core.parsing import build_prediction_set, format_answer
from geolocsft.core.schemas import EndpointConfig, GeoPoint, PredictionSet, SamplingConfig

TEST_KEY_ENV = "GEOLOCSFT_TEST_API_KEY"

WINDMILL_TRUTH = GeoPoint(lat=34.595981, lon=-120.14081)
BARCELONA_CATHEDRAL = GeoPoint(lat=41.383627, lon=2.176119)
TOLEDO_CATHEDRAL = GeoPoint(lat=39.8570, lon=-4.0236)
ATHENS = GeoPoint(lat=37.983107, lon=23.722229)
SAO_PAULO_PIN = GeoPoint(lat=23.550, lon=-46.633)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    monkeypatch.delenv("LANGFUSE_PUBLIC_KEY", raising=False)
    monkeypatch.delenv("LANGFUSE_SECRET_KEY", raising=False)
    monkeypatch.setenv(TEST_KEY_ENV, "sk-test")


def prediction_set(points: Sequence[Optional[GeoPoint]], sample_id: str = "sample") -> PredictionSet:
    """A PredictionSet whose attempt i answers points[i]; None yields an untagged attempt."""
    outputs = [
        f"Reasoning for attempt {i}.\n{format_answer(p)}" if p is not None else f"I am not sure (attempt {i})."
        for i, p in enumerate(points)
    ]
    return build_prediction_set(sample_id, outputs, SamplingConfig(k=len(points)))


@pytest.fixture
def make_set() -> Callable[..., PredictionSet]:
    return prediction_set


@pytest.fixture
def windmill() -> Callable[[int], PredictionSet]:
    """Wind turbine scene: one attempt 0.85 km from the truth, nine more than 8,900 km away."""
    def build(close_index: int = 0) -> PredictionSet:
        points = [destination_point(WINDMILL_TRUTH, 0.3 * i, 9000.0 + 25.0 * i) for i in range(10)]
        points[close_index] = destination_point(WINDMILL_TRUTH, 1.0, 0.85)
        return prediction_set(points, sample_id="windmill")
    return build


@pytest.fixture
def geese() -> PredictionSet:
    """Geese in a cloister: four attempts at the Barcelona cathedral, five at Toledo about 550 km away."""
    barcelona = [destination_point(BARCELONA_CATHEDRAL, 1.5 * i, 0.2 + 0.15 * i) for i in range(4)]
    toledo = [destination_point(TOLEDO_CATHEDRAL, 1.2 * i, 0.5 + 0.3 * i) for i in range(5)]
    return prediction_set(barcelona + toledo + [None], sample_id="geese")


@pytest.fixture
def food() -> PredictionSet:
    """A dish photographed in Athens: one attempt 0.455 km off, nine clustered about 788 km away."""
    close = destination_point(ATHENS, 2.0, 0.455)
    far_center = destination_point(ATHENS, 5.3, 788.0)
    far = [destination_point(far_center, 0.7 * i, 1.0 + 0.5 * i) for i in range(9)]
    return prediction_set([close] + far, sample_id="food")


@pytest.fixture
def caption_doc() -> dict:
    return {
        "broad_analysis": "Rolling dry hills with oak savanna and irrigated vineyards; Mediterranean climate.",
        "local_analysis": "A two-lane rural road crossing grassland, a single farmhouse and wind turbines on a ridge.",
        "micro_features": [
            {"feature": "Yellow center line with white edge lines", "geographic_significance": "North American road marking standard"},
            {"feature": "Wooden utility poles with crossarms", "geographic_significance": "Common in rural California"},
        ],
        "disambiguation": [
            {"similar_region": "Southern Spain", "exclusion_reason": "Spanish roads use white center lines, not yellow"},
        ],
        "final_point": {"lat": 34.595981, "lon": -120.14081},
    }


def chat_completion(content: str, model: str = "mock-model") -> dict:
    return {
        "id": "chatcmpl-mock",
        "object": "chat.completion",
        "created": 0,
        "model": model,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 10, "completion_tokens": 10, "total_tokens": 20},
    }


class MockEndpoint:
    """An OpenAI-compatible chat endpoint served from an httpx.MockTransport.

    The responder gets the decoded request body and the 0-based request number and returns either the
    assistant text or a ready httpx.Response. Every request body is captured.
    """

    def __init__(self, responder: Callable[[dict, int], Union[str, httpx.Response]], delay_s: float = 0.0):
        self.responder = responder
        self.delay_s = delay_s
        self.bodies: List[dict] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        self.http_client = httpx.Client(transport=httpx.MockTransport(self._handle))

    def _handle(self, request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        with self._lock:
            number = len(self.bodies)
            self.bodies.append(body)
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            if self.delay_s:
                time.sleep(self.delay_s)
            result = self.responder(body, number)
        finally:
            with self._lock:
                self.in_flight -= 1
        if isinstance(result, httpx.Response):
            return result
        return httpx.Response(200, json=chat_completion(result))

    def client(self, **endpoint_overrides) -> ChatClient:
        settings = dict(
            base_url="http://mock.local/v1",
            model_name="mock-model",
            api_key_env_var_name=TEST_KEY_ENV,
            max_retries=0,
        )
        settings.update(endpoint_overrides)
        return ChatClient(EndpointConfig(**settings), http_client=self.http_client, sleep=lambda s: None, seed=0)


@pytest.fixture
def mock_endpoint() -> Callable[..., MockEndpoint]:
    return MockEndpoint


def prompt_text(body: dict) -> str:
    return "".join(part["text"] for part in body["messages"][0]["content"] if part["type"] == "text")


def image_part(body: dict) -> Optional[str]:
    for part in body["messages"][0]["content"]:
        if part["type"] == "image_url":
            return part["image_url"]["url"]
    return None


class FakeResponse:
    def __init__(self, status_code: int = 200, payload: Optional[dict] = None):
        self.status_code = status_code
        self._payload = payload or {}
        self.text = json.dumps(self._payload)

    def json(self) -> dict:
        return self._payload


class FakeSession:
    """Stands in for requests.Session; replies come from a callable or a queue of responses."""

    def __init__(self, replies: Union[Callable[[str, Optional[dict]], FakeResponse], List[FakeResponse]]):
        self.replies = replies
        self.calls: List[tuple] = []
        self._lock = threading.Lock()

    def get(self, url, params=None, timeout=None):
        with self._lock:
            self.calls.append((url, params))
            if callable(self.replies):
                return self.replies(url, params)
            return self.replies.pop(0)


def image_record(image_id: str, lat: float, lon: float, **extra) -> dict:
    record = {
        "id": image_id,
        "computed_geometry": {"type": "Point", "coordinates": [lon, lat]},
        "captured_at": 1500000000000,
        "compass_angle": 90.0,
        "thumb_1024_url": f"https://images.test/{image_id}.jpg",
    }
    record.update(extra)
    return record


def bbox_center(params: dict) -> GeoPoint:
    min_lon, min_lat, max_lon, max_lat = (float(v) for v in params["bbox"].split(","))
    return GeoPoint(lat=(min_lat + max_lat) / 2.0, lon=(min_lon + max_lon) / 2.0)


def query_params(url: str) -> dict:
    return {k: v[0] for k, v in parse_qs(urlparse(url).query).items()}


def settlement_line(row: tuple) -> str:
    """One geonames-style TSV line from an (id, name, lat, lon, population) tuple."""
    geonameid, name, lat, lon, population = row
    columns = [""] * 19
    columns[0], columns[1], columns[2] = str(geonameid), name, name
    columns[4], columns[5] = str(lat), str(lon)
    columns[6], columns[7], columns[8] = "P", "PPL", "XX"
    columns[14] = str(population)
    columns[17], columns[18] = "Etc/UTC", "2024-01-01"
    return "\t".join(columns) + "\n"


def settlements_tsv(rows: Sequence[tuple]) -> str:
    """Geonames-style TSV text from (id, name, lat, lon, population) tuples."""
    return "".join(settlement_line(row) for row in rows)
