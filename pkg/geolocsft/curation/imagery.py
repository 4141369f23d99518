"""Street-level imagery retrieval from a Mapillary-style graph API."""
import itertools
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Callable, Dict, Iterator, List, Optional

import requests
from dotenv import find_dotenv, load_dotenv

from geolocsft.core.errors import AuthMissing, GeoLocError, HttpStatus, RateLimited, Timeout, TransportError
from geolocsft.core.geodesy import BBox, bboxes_around, in_bbox, validate_point
from geolocsft.core.retry import BackoffPolicy, call_with_backoff, is_transient
from geolocsft.core.schemas import BenchmarkSample, GeoPoint

logger = logging.getLogger(__name__)

MAPILLARY_GRAPH_URL = "https://graph.mapillary.com"
IMAGE_FIELDS = "id,computed_geometry,geometry,captured_at,compass_angle,thumb_1024_url,sequence"


@dataclass
class FetchStats:
    requests: int = 0
    outside_bbox: int = 0
    invalid: int = 0


class ImageryClient:
    """Pages through image search results for a bounding box.
    Shareable across threads; each thread gets its own HTTP session unless one is injected, and at most
    max_concurrent_requests requests are in flight.
    """

    def __init__(
            self,
            token_env_var_name: str = "MAPILLARY_TOKEN",
            base_url: str = MAPILLARY_GRAPH_URL,
            page_limit: int = 100,
            per_point_cap: int = 50,
            timeout_s: float = 30.0,
            max_concurrent_requests: int = 4,
            policy: BackoffPolicy = BackoffPolicy(),
            session: Optional[requests.Session] = None,
            sleep: Callable[[float], None] = time.sleep,
            seed: Optional[int] = None,
    ):
        load_dotenv(find_dotenv())
        self.token_env_var_name = token_env_var_name
        self.base_url = base_url.rstrip("/")
        self.page_limit = page_limit
        self.per_point_cap = per_point_cap
        self.timeout_s = timeout_s
        self.policy = policy
        self.session = session
        self._local = threading.local()
        self._slots = threading.BoundedSemaphore(max_concurrent_requests)
        self._sleep = sleep
        self._rng = random.Random(seed)

    def _token(self) -> str:
        token = os.getenv(self.token_env_var_name)
        if not token:
            raise AuthMissing(self.token_env_var_name)
        return token

    def _session(self) -> requests.Session:
        if self.session is not None:
            return self.session
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def _get(self, url: str, params: Optional[Dict[str, Any]], stats: FetchStats) -> Dict[str, Any]:
        def once() -> Dict[str, Any]:
            stats.requests += 1
            try:
                with self._slots:
                    response = self._session().get(url, params=params, timeout=self.timeout_s)
            except requests.Timeout as e:
                raise Timeout(str(e)) from e
            except requests.RequestException as e:
                raise TransportError(str(e)) from e
            if response.status_code == 429:
                raise RateLimited(f"{url} rate limited")
            if response.status_code >= 400:
                raise HttpStatus(response.status_code, response.text[:200])
            return response.json()

        return call_with_backoff(once, is_transient, self.policy, sleep=self._sleep, rng=self._rng)

    def iter_images(self, bbox: BBox, stats: Optional[FetchStats] = None) -> Iterator[Dict[str, Any]]:
        """Yields raw image records for a (min_lon, min_lat, max_lon, max_lat) box, following `paging.next`."""
        stats = stats if stats is not None else FetchStats()
        url: Optional[str] = f"{self.base_url}/images"
        params: Optional[Dict[str, Any]] = {
            "access_token": self._token(),
            "fields": IMAGE_FIELDS,
            "bbox": ",".join(f"{v:.6f}" for v in bbox),
            "limit": self.page_limit,
        }
        yielded = 0
        while url:
            page = self._get(url, params, stats)
            for image in page.get("data", []):
                yield image
                yielded += 1
                if yielded >= self.per_point_cap:
                    return
            url = (page.get("paging") or {}).get("next")
            # the next link already carries the token and cursor
            params = None


def _image_point(image: Dict[str, Any]) -> GeoPoint:
    geometry = image.get("computed_geometry") or image.get("geometry") or {}
    lon, lat = geometry["coordinates"][:2]
    return validate_point(lat, lon)


def _metadata(image: Dict[str, Any]) -> Dict[str, Any]:
    metadata: Dict[str, Any] = {"image_id": str(image["id"])}
    if image.get("captured_at") is not None:
        captured = datetime.fromtimestamp(int(image["captured_at"]) / 1000.0, tz=timezone.utc)
        metadata["captured_at"] = captured.isoformat()
    if image.get("compass_angle") is not None:
        metadata["compass_angle"] = float(image["compass_angle"])
    if isinstance(image.get("sequence"), str):
        metadata["sequence"] = image["sequence"]
    return metadata


def fetch_images(
        point: GeoPoint,
        bbox_radius_km: float,
        client: ImageryClient,
        settlement_id: Optional[str] = None,
        stats: Optional[FetchStats] = None,
) -> List[BenchmarkSample]:
    """Images captured inside the box around point, with their own capture GPS as ground truth.
    A box crossing the antimeridian is searched as two boxes; per_point_cap applies to both together.
    Records outside the requested box or without usable coordinates are dropped and counted.
    """
    if bbox_radius_km <= 0:
        raise ValueError("bbox_radius_km must be > 0")
    stats = stats if stats is not None else FetchStats()
    boxes = bboxes_around(point, bbox_radius_km)
    images = itertools.islice(
        itertools.chain.from_iterable(client.iter_images(bbox, stats) for bbox in boxes), client.per_point_cap
    )
    samples: List[BenchmarkSample] = []
    for image in images:
        try:
            truth = _image_point(image)
        except (KeyError, TypeError, ValueError, GeoLocError):
            stats.invalid += 1
            continue
        if not any(in_bbox(truth, bbox) for bbox in boxes):
            stats.outside_bbox += 1
            logger.debug("Image %s at (%s, %s) outside requested bbox", image.get("id"), truth.lat, truth.lon)
            continue
        image_id = str(image["id"])
        samples.append(BenchmarkSample(
            sample_id=f"mly-{image_id}",
            image_ref=image.get("thumb_1024_url") or f"mapillary:{image_id}",
            ground_truth=truth,
            source_settlement_id=settlement_id,
            metadata=_metadata(image),
        ))
    if stats.outside_bbox:
        logger.warning("Dropped %d images outside the requested bbox", stats.outside_bbox)
    return samples
