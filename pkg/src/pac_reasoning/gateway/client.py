"""OpenAI-compatible chat-completions and embeddings client with caching and retries."""

from __future__ import annotations

import logging
import threading
import time
from typing import Any

import httpx
from tenacity import Retrying, retry_if_exception, stop_after_attempt, wait_exponential

from ..exceptions import CapabilityError, TransportError
from ..uncertainty import TokenProbs, VerbalizedTrials, parse_confidence
from .cache import CachedCompletion, CompletionCache, cache_key
from .config import EndpointConfig
from .prompts import verbalized_messages

log = logging.getLogger(__name__)


class _Retryable(Exception):
    pass


def _is_retryable(exc: BaseException) -> bool:
    return isinstance(exc, (_Retryable, httpx.TransportError))


class ChatClient:
    """Synchronous client for one endpoint.

    At most ``cfg.max_parallel`` requests are in flight at once; callers may
    share one client across threads. ``network_calls`` counts HTTP attempts.
    """

    def __init__(
        self,
        cfg: EndpointConfig,
        cache: CompletionCache | None = None,
        *,
        transport: httpx.BaseTransport | None = None,
    ):
        self.cfg = cfg
        self.cache = cache
        headers = {}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        self._http = httpx.Client(
            base_url=cfg.base_url.rstrip("/"), headers=headers, timeout=cfg.request_timeout, transport=transport
        )
        self._slots = threading.BoundedSemaphore(cfg.max_parallel)
        self._count_lock = threading.Lock()
        self.network_calls = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # ------------------------------------------------------------------ http

    def _post(self, path: str, body: dict[str, Any], *, want_logprobs: bool = False) -> dict[str, Any]:
        def attempt():
            with self._count_lock:
                self.network_calls += 1
            with self._slots:
                resp = self._http.post(path, json=body)
            if resp.status_code == 429 or resp.status_code >= 500:
                raise _Retryable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code >= 400:
                if want_logprobs and "logprob" in resp.text.lower():
                    raise CapabilityError(
                        f"{self.cfg.model_name} rejected the logprobs request; use verbalized scoring"
                    )
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return resp.json()

        retrying = Retrying(
            stop=stop_after_attempt(self.cfg.max_retries + 1),
            wait=wait_exponential(multiplier=self.cfg.backoff_seconds, max=60),
            retry=retry_if_exception(_is_retryable),
            reraise=True,
        )
        try:
            return retrying(attempt)
        except (_Retryable, httpx.TransportError) as exc:
            raise TransportError(f"{self.cfg.model_name}: request failed after retries: {exc}") from exc

    # ----------------------------------------------------------- completions

    def complete(
        self,
        prompt: str | list[dict[str, str]],
        want_logprobs: bool = False,
        *,
        trial: int = 0,
    ) -> CachedCompletion:
        """Return a (possibly cached) completion.

        ``trial`` distinguishes deliberate repeats of the same request (for
        example verbalized-confidence trials) in the cache key; it is not
        sent to the endpoint.
        """
        messages = [{"role": "user", "content": prompt}] if isinstance(prompt, str) else list(prompt)
        params = self.cfg.sampling_params()
        key = cache_key(
            self.cfg.model_name, {"messages": messages, "logprobs": want_logprobs, "trial": trial}, params
        )
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit

        body = {"model": self.cfg.model_name, "messages": messages, **params}
        if want_logprobs:
            body["logprobs"] = True
        data = self._post("/chat/completions", body, want_logprobs=want_logprobs)
        completion = _parse_completion(key, data, want_logprobs, self.cfg.model_name)
        if self.cache is not None:
            self.cache.put(completion)
            self.cache.log("completion", key=key, model=self.cfg.model_name, trial=trial)
        return completion

    def token_probs(self, prompt: str | list[dict[str, str]]) -> tuple[CachedCompletion, TokenProbs]:
        completion = self.complete(prompt, want_logprobs=True)
        return completion, TokenProbs.from_logprobs(completion.token_logprobs or [])

    def verbalized_confidence(self, question: str, answer: str, n_trials: int = 10) -> VerbalizedTrials:
        """Ask the model ``n_trials`` times how likely ``answer`` is correct.

        Replies that are not a bare number in [0, 1] count as confidence 0
        and are flagged. Transport errors propagate only if every trial fails.
        """
        if n_trials < 1:
            raise ValueError("n_trials must be positive")
        messages = verbalized_messages(question, answer)
        confs: list[float] = []
        flags: list[bool] = []
        last_error: Exception | None = None
        for t in range(n_trials):
            try:
                reply = self.complete(messages, trial=t).text
            except TransportError as exc:
                last_error = exc
                log.warning("verbalized trial %d failed: %s", t, exc)
                continue
            c, flagged = parse_confidence(reply)
            confs.append(c)
            flags.append(flagged)
        if not confs:
            raise last_error or TransportError("all verbalized trials failed")
        return VerbalizedTrials(tuple(confs), tuple(flags))

    # ------------------------------------------------------------ embeddings

    def embed(self, text: str) -> list[float]:
        key = cache_key(self.cfg.model_name, {"embed": text}, {})
        if self.cache is not None:
            raw = self.cache.get_raw(key)
            if raw is not None:
                return raw["embedding"]
        data = self._post("/embeddings", {"model": self.cfg.model_name, "input": text})
        try:
            vec = [float(x) for x in data["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed embedding response: {exc}") from exc
        if self.cache is not None:
            self.cache.put_raw(key, {"cache_key": key, "embedding": vec, "created_at": time.time()})
        return vec


def _parse_completion(key: str, data: dict[str, Any], want_logprobs: bool, model: str) -> CachedCompletion:
    try:
        choice = data["choices"][0]
        message = choice["message"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion response: {exc}") from exc
    text = message.get("content") or ""
    reasoning = message.get("reasoning_content") or message.get("reasoning")

    logprobs = None
    lp = choice.get("logprobs")
    if lp and lp.get("content") is not None:
        logprobs = [float(t["logprob"]) for t in lp["content"]]
    if want_logprobs and logprobs is None:
        raise CapabilityError(f"{model} returned no token logprobs; use verbalized scoring")

    usage = data.get("usage") or {}
    if usage.get("completion_tokens") is not None:
        # includes any reasoning tokens, which is what the cost metric needs
        count, source = int(usage["completion_tokens"]), "usage"
    elif logprobs is not None:
        count, source = len(logprobs), "logprobs"
    else:
        count, source = None, "unknown"
    return CachedCompletion(
        cache_key=key,
        text=text,
        token_logprobs=logprobs,
        token_count=count,
        created_at=time.time(),
        token_source=source,
        reasoning_text=reasoning,
    )
