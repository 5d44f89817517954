"""Provider access: parameters, credentials, rate limiting, retry with backoff."""
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

import openai

from ..design.experiment_design import derive_seed
from ..utils.config import logger
from ..utils.errors import (
    CredentialError, InvalidArgumentError, TransientProviderError, TransportError
)
from .parsing import RawResponse
from .synthetic import SyntheticProfile, synthetic_respond
from .vignettes import PromptBundle

RETRYABLE_STATUS = (408, 409, 429)


@dataclass(frozen=True)
class AgentParams:
    provider_id: str
    model_id: str
    temperature: float = 0.7
    top_p: float = 0.95
    max_retries: int = 5
    backoff_base: float = 1.0
    max_concurrency: int = 4
    requests_per_minute: Optional[float] = 60
    timeout: float = 120.0

    def __post_init__(self):
        if not 0 <= self.temperature <= 2:
            raise InvalidArgumentError(f"temperature must lie in [0, 2], got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise InvalidArgumentError(f"top_p must lie in (0, 1], got {self.top_p}")
        if self.max_retries < 0:
            raise InvalidArgumentError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_concurrency < 1:
            raise InvalidArgumentError(f"max_concurrency must be >= 1, got {self.max_concurrency}")
        if self.backoff_base < 0:
            raise InvalidArgumentError(f"backoff_base must be >= 0, got {self.backoff_base}")

    @classmethod
    def from_config(cls, group: Dict[str, Any], agent: Dict[str, Any]) -> "AgentParams":
        return cls(
            provider_id=group["provider_id"],
            model_id=group["model_id"],
            temperature=float(agent["temperature"]),
            top_p=float(agent["top_p"]),
            max_retries=int(agent["max_retries"]),
            backoff_base=float(agent["backoff_base"]),
            max_concurrency=int(agent["max_concurrency"]),
            requests_per_minute=agent.get("requests_per_minute"),
            timeout=float(agent.get("timeout", 120.0)),
        )

    def backoff_delay(self, attempt: int) -> float:
        """Delay after failed attempt ``attempt`` (1-based)."""
        return self.backoff_base * 2 ** (attempt - 1)


class TokenBucket:
    """Token-bucket limiter refilled continuously at ``rate_per_minute``."""

    def __init__(self, rate_per_minute: float, capacity: Optional[float] = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if rate_per_minute <= 0:
            raise InvalidArgumentError(f"rate_per_minute must be > 0, got {rate_per_minute}")
        self.rate = rate_per_minute / 60.0
        self.capacity = float(capacity if capacity is not None else max(1.0, rate_per_minute / 60.0))
        self.tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._updated = clock()
        self._lock = threading.Lock()

    def _refill(self):
        now = self._clock()
        self.tokens = min(self.capacity, self.tokens + (now - self._updated) * self.rate)
        self._updated = now

    def acquire(self) -> float:
        """Take one token, sleeping until one is available. Returns seconds waited."""
        waited = 0.0
        while True:
            with self._lock:
                self._refill()
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return waited
                wait = (1.0 - self.tokens) / self.rate
            self._sleep(wait)
            waited += wait


def resolve_api_key(provider_id: str, providers: Optional[Dict[str, Any]] = None) -> str:
    """API key from ``<PROVIDER>_API_KEY`` or the provider's ``api_key_env`` override."""
    entry = (providers or {}).get(provider_id, {}) or {}
    env_var = entry.get("api_key_env") or f"{provider_id.upper().replace('-', '_')}_API_KEY"
    key = os.environ.get(env_var)
    if not key:
        raise CredentialError(f"missing credential: set environment variable {env_var}", env_var=env_var)
    return key


class OpenAIChatProvider:
    """Chat-completions provider for any OpenAI-compatible endpoint."""

    def __init__(self, provider_id: str, api_key: str, base_url: Optional[str] = None, timeout: float = 120.0):
        self.provider_id = provider_id
        # retries are handled by send_prompt
        self.client = openai.OpenAI(api_key=api_key, base_url=base_url, timeout=timeout, max_retries=0)

    def complete(self, params: AgentParams, text: str):
        try:
            response = self.client.chat.completions.create(
                model=params.model_id,
                messages=[{"role": "user", "content": text}],
                temperature=params.temperature,
                top_p=params.top_p,
            )
        except (openai.AuthenticationError, openai.PermissionDeniedError) as e:
            raise CredentialError(f"{self.provider_id} rejected credentials: {e}") from e
        except (openai.RateLimitError, openai.APITimeoutError, openai.APIConnectionError,
                openai.InternalServerError) as e:
            raise TransientProviderError(str(e), status=getattr(e, "status_code", None)) from e
        except openai.APIStatusError as e:
            if e.status_code in RETRYABLE_STATUS or e.status_code >= 500:
                raise TransientProviderError(str(e), status=e.status_code) from e
            raise TransportError(f"{self.provider_id} request failed: {e}", last_status=e.status_code,
                                 attempts=1) from e
        content = response.choices[0].message.content or ""
        metadata = {
            "provider": self.provider_id,
            "model": getattr(response, "model", params.model_id),
            "finish_reason": response.choices[0].finish_reason,
        }
        usage = getattr(response, "usage", None)
        if usage is not None:
            metadata["usage"] = {"prompt_tokens": usage.prompt_tokens, "completion_tokens": usage.completion_tokens}
        return content, metadata


def build_provider(params: AgentParams, providers: Optional[Dict[str, Any]] = None):
    entry = (providers or {}).get(params.provider_id, {}) or {}
    api_key = resolve_api_key(params.provider_id, providers)
    return OpenAIChatProvider(params.provider_id, api_key, base_url=entry.get("base_url"), timeout=params.timeout)


def send_prompt(params: AgentParams, bundle: PromptBundle, provider=None, providers=None,
                text: Optional[str] = None, bucket: Optional[TokenBucket] = None,
                sleep: Callable[[float], None] = time.sleep) -> RawResponse:
    """Send a prompt, retrying transient failures with exponential backoff.

    Args:
        params: Model and retry settings
        bundle: Prompt to send
        provider: Object with ``complete(params, text) -> (text, metadata)``;
            built from ``providers`` when omitted
        providers: Provider endpoint table from the run configuration
        text: Prompt text override (used for re-prompts); defaults to ``bundle.text``
        bucket: Optional rate limiter consulted before every attempt
        sleep: Sleep function (injectable for tests)

    Returns:
        RawResponse with the number of attempts used

    Raises:
        TransportError: Retries exhausted or non-retryable provider failure
        CredentialError: Missing or rejected credentials (never retried)
    """
    provider = provider or build_provider(params, providers)
    prompt = bundle.text if text is None else text
    started = time.perf_counter()
    last_status = None
    last_error = None
    for attempt in range(1, params.max_retries + 2):
        if bucket is not None:
            bucket.acquire()
        try:
            content, metadata = provider.complete(params, prompt)
            return RawResponse(content, attempts=attempt, latency=time.perf_counter() - started,
                               provider_metadata=dict(metadata or {}))
        except TransientProviderError as e:
            last_status, last_error = e.status, e
            if attempt > params.max_retries:
                break
            delay = params.backoff_delay(attempt)
            logger.warning(f"{params.provider_id}/{params.model_id} attempt {attempt} failed "
                           f"(status {e.status}); retrying in {delay:.1f}s")
            sleep(delay)
    attempts = params.max_retries + 1
    logger.error(f"{params.provider_id}/{params.model_id} failed after {attempts} attempts: {last_error}")
    raise TransportError(f"{params.provider_id} failed after {attempts} attempts: {last_error}",
                         last_status=last_status, attempts=attempts)


class LLMAgent:
    """Agent backed by a live provider, bounded by ``max_concurrency``."""

    backend = "llm"

    def __init__(self, params: AgentParams, providers: Optional[Dict[str, Any]] = None, provider=None,
                 bucket: Optional[TokenBucket] = None, sleep: Callable[[float], None] = time.sleep):
        self.params = params
        self.provider = provider or build_provider(params, providers)
        if bucket is None and params.requests_per_minute:
            bucket = TokenBucket(float(params.requests_per_minute))
        self.bucket = bucket
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(params.max_concurrency)

    @property
    def max_retries(self) -> int:
        return self.params.max_retries

    @property
    def model_id(self) -> str:
        return self.params.model_id

    def respond(self, bundle: PromptBundle, seed: int, text: Optional[str] = None) -> RawResponse:
        with self._slots:
            return send_prompt(self.params, bundle, provider=self.provider, text=text,
                               bucket=self.bucket, sleep=self._sleep)


class SyntheticAgent:
    """Agent double answering from a SyntheticProfile.

    Call seeds are mixed with the model id, so two groups sharing a profile
    still draw different responses.
    """

    backend = "synthetic"

    def __init__(self, profile: SyntheticProfile, max_retries: int = 5, model_id: Optional[str] = None):
        self.profile = profile
        self._max_retries = max_retries
        self._model_id = model_id or profile.profile_id

    @property
    def max_retries(self) -> int:
        return self._max_retries

    @property
    def model_id(self) -> str:
        return self._model_id

    def respond(self, bundle: PromptBundle, seed: int, text: Optional[str] = None) -> RawResponse:
        return synthetic_respond(self.profile, bundle, derive_seed(seed, self._model_id))
