import base64
import logging
import mimetypes
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import httpx
import openai
from dotenv import find_dotenv, load_dotenv
from langchain_core.messages import HumanMessage
from langchain_openai import ChatOpenAI
from langfuse import Langfuse
from langfuse.langchain import CallbackHandler

from geolocsft.core.errors import AuthMissing, HttpStatus, RateLimited, Timeout, TransportError
from geolocsft.core.parsing import build_prediction_set
from geolocsft.core.retry import BackoffPolicy, call_with_backoff, is_transient
from geolocsft.core.schemas import (
    GREEDY,
    EndpointConfig,
    ParseFailure,
    ParseReason,
    PredictionSet,
    SamplingConfig,
)

logger = logging.getLogger(__name__)

ImagePayload = Union[str, bytes, Path, None]


def image_url(image: ImagePayload) -> Optional[str]:
    """Turns an image locator into something the chat API accepts: an http(s) URL or a data URL."""
    if image is None:
        return None
    if isinstance(image, bytes):
        return "data:image/jpeg;base64," + base64.b64encode(image).decode("ascii")
    text = str(image)
    if text.startswith(("http://", "https://", "data:")):
        return text
    path = Path(text)
    mime = mimetypes.guess_type(path.name)[0] or "image/jpeg"
    return f"data:{mime};base64," + base64.b64encode(path.read_bytes()).decode("ascii")


def _translate(error: Exception) -> Exception:
    if isinstance(error, openai.APITimeoutError):
        return Timeout(str(error))
    if isinstance(error, openai.RateLimitError):
        return RateLimited(str(error))
    if isinstance(error, openai.APIStatusError):
        return HttpStatus(error.status_code, error.message)
    if isinstance(error, openai.APIConnectionError):
        return TransportError(str(error))
    return error


class _CompatChatOpenAI(ChatOpenAI):
    """ChatOpenAI that sends the generation cap as `max_tokens`.
    ChatOpenAI renames it to `max_completion_tokens`, which many OpenAI-compatible servers ignore.
    """

    def _get_request_payload(self, input_, *, stop=None, **kwargs) -> dict:
        payload = super()._get_request_payload(input_, stop=stop, **kwargs)
        if "max_completion_tokens" in payload:
            payload["max_tokens"] = payload.pop("max_completion_tokens")
        return payload


class ChatClient:
    """Chat-completions client for one endpoint.
    Shareable across threads; never has more than endpoint.max_concurrent_requests requests in flight.
    """

    def __init__(
            self,
            endpoint: EndpointConfig,
            http_client: Optional[httpx.Client] = None,
            sleep: Callable[[float], None] = time.sleep,
            seed: Optional[int] = None,
    ):
        """
        :param endpoint: The endpoint to talk to.
        :param http_client: Optional httpx client, e.g. one built on a MockTransport in tests.
        :param sleep: Sleep function used between retries.
        :param seed: Seed for the backoff jitter.
        """
        load_dotenv(find_dotenv())
        self.endpoint = endpoint
        self.policy = BackoffPolicy(
            max_retries=endpoint.max_retries, base_s=endpoint.backoff_base_s, cap_s=endpoint.backoff_cap_s
        )
        self._http_client = http_client
        self._sleep = sleep
        self._rng = random.Random(seed)
        self._slots = threading.BoundedSemaphore(endpoint.max_concurrent_requests)
        self._lock = threading.Lock()
        self._models: Dict[Tuple[float, float, int], _CompatChatOpenAI] = {}
        self.requests_sent = 0
        self.retries = 0
        self.callback_handler = None

        if os.getenv("LANGFUSE_PUBLIC_KEY") and os.getenv("LANGFUSE_SECRET_KEY"):
            Langfuse(
                public_key=os.getenv("LANGFUSE_PUBLIC_KEY"),
                secret_key=os.getenv("LANGFUSE_SECRET_KEY")
            )
            self.callback_handler = CallbackHandler()

    def _api_key(self) -> str:
        key = os.getenv(self.endpoint.api_key_env_var_name)
        if not key:
            raise AuthMissing(self.endpoint.api_key_env_var_name)
        return key

    def _model(self, config: SamplingConfig) -> _CompatChatOpenAI:
        cache_key = (config.temperature, config.top_p, config.max_tokens)
        with self._lock:
            if cache_key not in self._models:
                self._models[cache_key] = _CompatChatOpenAI(
                    model=self.endpoint.model_name,
                    base_url=self.endpoint.base_url,
                    api_key=self._api_key(),
                    temperature=config.temperature,
                    top_p=config.top_p,
                    max_tokens=config.max_tokens,
                    timeout=self.endpoint.timeout_s,
                    max_retries=0,
                    http_client=self._http_client,
                )
            return self._models[cache_key]

    def _count_retry(self, retry: int, error: Exception) -> None:
        with self._lock:
            self.retries += 1
        logger.warning("Retrying request (%d/%d) after %s", retry, self.policy.max_retries, error)

    def complete(self, prompt: str, image: ImagePayload = None, config: SamplingConfig = GREEDY) -> str:
        """One chat-completion round trip; returns the assistant text verbatim.
        Rate limits, timeouts and 5xx responses are retried with backoff before being raised.
        :param prompt: The user prompt.
        :param image: URL, data URL, local path or raw bytes of the image, or None.
        :param config: Decoding settings; k is ignored.
        """
        model = self._model(config)
        content: List[dict] = [{"type": "text", "text": prompt}]
        url = image_url(image)
        if url is not None:
            content.append({"type": "image_url", "image_url": {"url": url}})
        message = HumanMessage(content=content)
        callbacks = {"callbacks": [self.callback_handler] if self.callback_handler else []}

        def once() -> str:
            with self._slots:
                with self._lock:
                    self.requests_sent += 1
                try:
                    response = model.invoke([message], config=callbacks)
                except Exception as e:
                    translated = _translate(e)
                    if translated is e:
                        raise
                    raise translated from e
            return response.content if isinstance(response.content, str) else str(response.content)

        return call_with_backoff(
            once, is_transient, self.policy, sleep=self._sleep, rng=self._rng, on_retry=self._count_retry
        )

    def sample_candidates(
            self,
            sample_id: str,
            prompt: str,
            image: ImagePayload,
            config: SamplingConfig,
            best_effort: bool = False,
            strict_parse: bool = False,
    ) -> PredictionSet:
        """Issues config.k independent completions and parses each one.
        :param best_effort: Record transport errors as failures in the set instead of raising.
        :param strict_parse: Disable lenient answer parsing.
        :return: A PredictionSet in attempt order.
        """
        self._api_key()
        single = config.single()

        def attempt(_: int) -> Union[str, ParseFailure]:
            try:
                return self.complete(prompt, image, single)
            except TransportError as e:
                if not best_effort or isinstance(e, AuthMissing):
                    raise
                logger.warning("Attempt failed for sample %s: %s", sample_id, e)
                return ParseFailure(reason=ParseReason.NO_ANSWER_TAG, raw_text="", detail=f"{type(e).__name__}: {e}")

        workers = min(config.k, self.endpoint.max_concurrent_requests)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(attempt, range(config.k)))
        return build_prediction_set(sample_id, outputs, config, strict=strict_parse)
