"""Choice agents: a remote chat-completion LLM and a synthetic logit oracle.

Both backends receive the rendered persona prompt (system role) and booking
prompt (user role), answer with an option number, and have that number mapped
back through the presentation order to a semantic role.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx
import numpy as np

from .decoy_space import ConfigurationError
from .personas import Segment, parse_system_prompt
from .scenarios import PresentedOption, parse_user_prompt
from .seeding import derive_uniform, text_digest

log = logging.getLogger(__name__)

INVALID = "invalid"
API_URL_ENV = "DECOYNUDGE_API_URL"
API_KEY_ENV = "DECOYNUDGE_API_KEY"
DEFAULT_API_URL = "https://api.openai.com/v1"


class TransportError(RuntimeError):
    """The remote backend could not be reached within the retry budget."""


@dataclass
class AgentConfig:
    backend: str = "synthetic"
    model_name: str = "gpt-4o-mini"
    temperature: float = 0.8
    max_retries: int = 3
    cache_enabled: bool = True
    max_concurrency: int = 8
    requests_per_second: float | None = None
    retry_backoff: float = 0.5
    timeout: float = 60.0

    def __post_init__(self) -> None:
        if self.backend not in ("remote_llm", "synthetic"):
            raise ConfigurationError(f"unknown agent backend {self.backend!r}")
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ConfigurationError("max_concurrency must be >= 1")


@dataclass(frozen=True)
class AgentResponse:
    choice: str
    raw_text: str
    latency: float = 0.0  # milliseconds
    attempt_count: int = 1
    position: int | None = None


_INT_TOKEN = re.compile(r"\d+")


def parse_choice(raw: str, k: int) -> int | None:
    """First integer token of ``raw`` within ``[1, k]``, or None."""
    if k not in (2, 3):
        raise ValueError(f"k must be 2 or 3, got {k}")
    for token in _INT_TOKEN.findall(raw or ""):
        value = int(token)
        if 1 <= value <= k:
            return value
    return None


# ---------------------------------------------------------------------------
# caching and rate limiting


class ResponseCache:
    """Get-or-insert cache of agent responses, optionally backed by a JSONL file.

    Concurrent requests for a key that is already being computed wait for the
    first computation instead of issuing their own.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._store: dict[str, AgentResponse] = {}
        self._inflight: dict[str, threading.Event] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._store[rec["key"]] = AgentResponse(**rec["response"])

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, key: str) -> bool:
        return key in self._store

    def get_or_compute(self, key: str, compute: Callable[[], AgentResponse]) -> AgentResponse:
        while True:
            with self._lock:
                if key in self._store:
                    return self._store[key]
                event = self._inflight.get(key)
                if event is None:
                    event = self._inflight[key] = threading.Event()
                    owner = True
                else:
                    owner = False
            if not owner:
                event.wait()
                continue
            try:
                value = compute()
                with self._lock:
                    self._store[key] = value
                    if self.path is not None:
                        with open(self.path, "a", encoding="utf-8") as fh:
                            fh.write(json.dumps({"key": key, "response": asdict(value)}) + "\n")
                return value
            finally:
                with self._lock:
                    del self._inflight[key]
                event.set()


class TokenBucket:
    def __init__(self, rate: float, burst: float | None = None, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ConfigurationError("rate limit must be positive")
        self.rate = rate
        self.capacity = burst if burst is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock, self._sleep = clock, sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            self._sleep(wait)


# ---------------------------------------------------------------------------
# agents


class ChoiceAgent:
    """Shared choose() plumbing: caching, validation and position-to-role mapping."""

    backend = "abstract"

    def __init__(self, config: AgentConfig, cache: ResponseCache | None = None):
        self.config = config
        self.cache = cache if (cache is not None and config.cache_enabled) else None
        self._calls = 0
        self._count_lock = threading.Lock()

    @property
    def calls(self) -> int:
        """Number of uncached backend queries issued so far."""
        return self._calls

    def cache_key(self, system_prompt: str, user_prompt: str, order: Sequence[str], sample_index: int) -> str:
        return text_digest(
            self.backend, self.config.model_name, system_prompt, user_prompt, ",".join(order), str(sample_index)
        )

    def choose(
        self,
        system_prompt: str,
        user_prompt: str,
        k_options: int,
        order: Sequence[str],
        sample_index: int,
    ) -> AgentResponse:
        order = tuple(order)
        if len(order) != k_options or k_options not in (2, 3):
            raise ValueError(f"order {order} does not describe {k_options} options")

        def compute() -> AgentResponse:
            with self._count_lock:
                self._calls += 1
            return self._query(system_prompt, user_prompt, k_options, sample_index)

        if self.cache is None:
            resp = compute()
        else:
            resp = self.cache.get_or_compute(
                self.cache_key(system_prompt, user_prompt, order, sample_index), compute
            )
        choice = INVALID if resp.position is None else order[resp.position - 1]
        return AgentResponse(choice, resp.raw_text, resp.latency, resp.attempt_count, resp.position)

    def _query(self, system_prompt: str, user_prompt: str, k: int, sample_index: int) -> AgentResponse:
        raise NotImplementedError


@dataclass(frozen=True)
class SyntheticCoefficients:
    """Utility coefficients of the synthetic logit agent.

    ``price`` applies to the fare markup in percent over the standard ticket;
    persona shifts add to the valuation of offsetting (they multiply the
    option's offset fraction). ``cell_shift`` maps a decoy cell id to an extra
    utility for the target when that decoy is on the menu; absent cells fall
    back to the parametric context term built from ``attraction`` and
    ``repulsion``.
    """

    price: float = -0.35
    offset: float = 0.6
    trust: float = 1.4
    concern: float = 0.9
    income_above: float = 0.2
    age_below: float = 0.15
    woman: float = 0.0
    country: Mapping[str, float] = field(default_factory=dict)
    attraction: float = 1.0
    repulsion: float = 0.6
    cell_shift: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        if not self.price < 0 or not self.offset > 0:
            raise ConfigurationError("synthetic agent needs price < 0 and offset > 0")

    def persona_shift(self, segment: Segment) -> float:
        return (
            self.trust * (segment.trust == "trusts")
            + self.concern * (segment.concern == "concerned")
            + self.income_above * (segment.income == "above_median")
            + self.age_below * (segment.age == "below_median")
            + self.woman * (segment.gender == "woman")
            + float(self.country.get(segment.country, 0.0))
        )

    def context_shift(self, mu: float, offset_fraction: float) -> float:
        """Target utility bonus from the presence of a decoy at (mu, offset)."""
        if self.cell_shift is not None:
            cell_id = f"mu{mu:+.1f}_off{offset_fraction:.1f}"
            if cell_id in self.cell_shift:
                return float(self.cell_shift[cell_id])
        gap = max(0.0, 1.0 - offset_fraction)
        if mu < 0:
            return self.attraction * (gap - 0.5)
        if mu > 0 and gap > 0:
            return 2.0 * self.attraction * math.sqrt(mu * gap)
        return -2.0 * self.repulsion * (mu + gap)


def synthetic_utility(coef: SyntheticCoefficients, segment: Segment, markup_pct: float, offset_fraction: float) -> float:
    return coef.price * markup_pct + (coef.offset + coef.persona_shift(segment)) * offset_fraction


def softmax_probabilities(utilities: Sequence[float], temperature: float) -> np.ndarray:
    u = np.asarray(utilities, dtype=float)
    if temperature == 0:
        p = np.zeros_like(u)
        p[int(np.argmax(u))] = 1.0
        return p
    z = (u - u.max()) / temperature
    e = np.exp(z)
    return e / e.sum()


class SyntheticAgent(ChoiceAgent):
    """Persona-conditioned logit oracle that reads the same prompts an LLM would."""

    backend = "synthetic"

    def __init__(
        self,
        config: AgentConfig | None = None,
        coefficients: SyntheticCoefficients | None = None,
        cache: ResponseCache | None = None,
    ):
        super().__init__(config or AgentConfig(backend="synthetic"), cache)
        self.coefficients = coefficients or SyntheticCoefficients()
        self._prob_cache: dict[tuple[str, str], np.ndarray] = {}
        self._prob_lock = threading.Lock()

    def option_utilities(self, segment: Segment, options: Sequence[PresentedOption]) -> list[float]:
        by_role = {o.role: o for o in options}
        competitor = by_role["competitor"].price
        target = by_role["target"].price
        utils = []
        for o in options:
            markup = float((o.price / competitor - 1) * 100)
            utils.append(synthetic_utility(self.coefficients, segment, markup, o.offset_fraction))
        if "decoy" in by_role:
            decoy = by_role["decoy"]
            mu = round(float((decoy.price - target) / (target - competitor)), 1)
            bonus = self.coefficients.context_shift(mu, decoy.offset_fraction)
            utils[[o.role for o in options].index("target")] += bonus
        return utils

    def probabilities(self, system_prompt: str, user_prompt: str) -> np.ndarray:
        """Choice probabilities over presented positions."""
        key = (system_prompt, user_prompt)
        p = self._prob_cache.get(key)
        if p is None:
            segment = parse_system_prompt(system_prompt)
            options = parse_user_prompt(user_prompt)
            p = softmax_probabilities(self.option_utilities(segment, options), self.config.temperature)
            with self._prob_lock:
                if len(self._prob_cache) >= 4096:
                    self._prob_cache.clear()
                self._prob_cache[key] = p
        return p

    def _query(self, system_prompt: str, user_prompt: str, k: int, sample_index: int) -> AgentResponse:
        p = self.probabilities(system_prompt, user_prompt)
        if len(p) != k:
            raise ValueError(f"prompt presents {len(p)} options, caller expected {k}")
        u = derive_uniform("synthetic", text_digest(system_prompt, user_prompt), sample_index)
        position = int(np.searchsorted(np.cumsum(p), u, side="right")) + 1
        position = min(position, k)
        return AgentResponse(choice="", raw_text=str(position), position=position)


class RemoteLLMAgent(ChoiceAgent):
    """Chat-completion client (OpenAI-compatible ``/chat/completions``)."""

    backend = "remote_llm"

    def __init__(
        self,
        config: AgentConfig,
        *,
        base_url: str | None = None,
        api_key: str | None = None,
        cache: ResponseCache | None = None,
        transport: httpx.BaseTransport | None = None,
        audit_log: str | Path | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(config, cache)
        self.base_url = (base_url or os.environ.get(API_URL_ENV) or DEFAULT_API_URL).rstrip("/")
        self.api_key = api_key or os.environ.get(API_KEY_ENV) or os.environ.get("OPENAI_API_KEY")
        if not self.api_key:
            raise ConfigurationError(f"remote backend needs an API key in ${API_KEY_ENV}")
        self._client = httpx.Client(
            base_url=self.base_url,
            headers={"Authorization": f"Bearer {self.api_key}"},
            timeout=config.timeout,
            transport=transport,
        )
        self._slots = threading.BoundedSemaphore(config.max_concurrency)
        self._bucket = TokenBucket(config.requests_per_second) if config.requests_per_second else None
        self._sleep = sleep
        self._audit_path = Path(audit_log) if audit_log else None
        self._audit_lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def request_body(self, system_prompt: str, user_prompt: str) -> dict:
        return {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_prompt},
            ],
            "temperature": self.config.temperature,
        }

    def _post(self, body: dict) -> tuple[str, int]:
        """One completion, retrying transient transport failures. Returns (text, requests issued)."""
        issued = 0
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.retry_backoff * 2 ** (attempt - 1))
            if self._bucket is not None:
                self._bucket.acquire()
            issued += 1
            try:
                with self._slots:
                    resp = self._client.post("/chat/completions", json=body)
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
                continue
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"] or "", issued
        raise TransportError(f"remote backend failed after {issued} attempts: {last_error}")

    def _audit(self, body: dict, text: str) -> None:
        if self._audit_path is None:
            return
        with self._audit_lock, open(self._audit_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"request": body, "response": text}, ensure_ascii=False) + "\n")

    def _query(self, system_prompt: str, user_prompt: str, k: int, sample_index: int) -> AgentResponse:
        body = self.request_body(system_prompt, user_prompt)
        start = time.perf_counter()
        attempts = 0
        text = ""
        for _ in range(self.config.max_retries + 1):
            text, issued = self._post(body)
            attempts += issued
            self._audit(body, text)
            position = parse_choice(text, k)
            if position is not None:
                break
            log.debug("unparseable reply %r (sample %d)", text, sample_index)
        else:
            position = None
        latency = (time.perf_counter() - start) * 1000.0
        return AgentResponse(choice="", raw_text=text, latency=latency, attempt_count=attempts, position=position)


def make_agent(config: AgentConfig, *, coefficients: SyntheticCoefficients | None = None,
               cache: ResponseCache | None = None, **remote_kwargs) -> ChoiceAgent:
    if config.backend == "synthetic":
        return SyntheticAgent(config, coefficients, cache)
    return RemoteLLMAgent(config, cache=cache, **remote_kwargs)

