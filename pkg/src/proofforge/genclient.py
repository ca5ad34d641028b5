"""Clients for generator services speaking the sample/score wire contract.

Wire contract (UTF-8 JSON bodies):

    POST {base}/v1/sample  {role, prompt, n, temperature, max_tokens, seed?}
        -> {"samples": [{"text": ..., "logprob": ...}, ...]}
    POST {base}/v1/score   {role, prompt, target}
        -> {"logprob": ...}

Status 400 means a malformed request, 500 a backend failure.  An in-process
:class:`MockGenerator` implements the same sample/score surface from a
declared probability table so the pipeline is testable without any service.
"""

from __future__ import annotations

import math
import random
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Optional, Protocol

import requests

from .prompts import GeneratorRole


class GenClientError(Exception):
    """Base error for generator client failures."""


class TransportError(GenClientError):
    """The service could not be reached after the configured retries."""


class MalformedResponseError(GenClientError):
    """The service answered with a body violating the wire contract."""


class OverLengthError(GenClientError):
    """A score request exceeds the configured sequence-length budget."""


class MockSpecError(GenClientError):
    """A declared mock distribution table is invalid."""


@dataclass
class Candidate:
    """One generator sample.

    ``proposal_logprob`` is the summed token log-probability under the
    proposal model; ``reward`` and ``weight`` stay unset until scoring and
    weighting happen.
    """

    text: str
    proposal_logprob: float
    reward: Optional[float] = None
    weight: Optional[float] = None


@dataclass
class EndpointConfig:
    """Connection and decoding settings for one generator endpoint."""

    base_url: str
    role: GeneratorRole
    temperature: float = 0.8
    max_tokens: int = 2048
    retry_limit: int = 3
    seed: Optional[int] = None
    max_in_flight: int = 16
    max_sequence_tokens: int = 8192
    retry_backoff_s: float = 0.5
    timeout_s: float = 120.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


class GeneratorEndpoint(Protocol):
    """Anything able to draw samples and score targets for one role."""

    def sample(self, prompt: str, n: int) -> list[Candidate]: ...

    def score(self, prompt: str, target: str) -> float: ...


def _approx_token_count(text: str) -> int:
    # Whitespace tokens as a length proxy; real tokenizers live server-side.
    return len(text.split())


class HttpGeneratorClient:
    """HTTP client for the sample/score contract, safe for concurrent use."""

    def __init__(self, config: EndpointConfig, session: requests.Session | None = None):
        self.config = config
        self._session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(config.max_in_flight)
        self._sleep = time.sleep

    def _post(self, path: str, body: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        last_exc: Exception | None = None
        for attempt in range(self.config.retry_limit + 1):
            if attempt:
                self._sleep(self.config.retry_backoff_s * 2 ** (attempt - 1))
            try:
                with self._gate:
                    response = self._session.post(
                        url, json=body, timeout=self.config.timeout_s
                    )
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if response.status_code >= 500:
                last_exc = TransportError(
                    f"{url} returned {response.status_code}"
                )
                continue
            if response.status_code != 200:
                raise GenClientError(
                    f"{url} rejected request with status {response.status_code}: "
                    f"{response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError:
                raise MalformedResponseError(f"{url} returned non-JSON body")
        raise TransportError(
            f"{url} unreachable after {self.config.retry_limit + 1} attempts"
        ) from last_exc

    def sample(self, prompt: str, n: int) -> list[Candidate]:
        if n < 1:
            raise ValueError("n must be >= 1")
        body = {
            "role": self.config.role.value,
            "prompt": prompt,
            "n": n,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        if self.config.seed is not None:
            body["seed"] = self.config.seed
        payload = self._post("/v1/sample", body)
        samples = payload.get("samples")
        if not isinstance(samples, list):
            raise MalformedResponseError("response lacks a samples list")
        if len(samples) < n:
            raise MalformedResponseError(
                f"requested {n} samples, service returned {len(samples)}"
            )
        out = []
        for item in samples[:n]:
            if not isinstance(item, dict) or "text" not in item or "logprob" not in item:
                raise MalformedResponseError("sample item lacks text/logprob")
            logprob = float(item["logprob"])
            if not math.isfinite(logprob):
                raise MalformedResponseError("sample logprob is not finite")
            out.append(Candidate(text=str(item["text"]), proposal_logprob=logprob))
        return out

    def score(self, prompt: str, target: str) -> float:
        if not target:
            raise ValueError("score target must be nonempty")
        total = _approx_token_count(prompt) + _approx_token_count(target)
        if total > self.config.max_sequence_tokens:
            raise OverLengthError(
                f"score request of ~{total} tokens exceeds the "
                f"{self.config.max_sequence_tokens}-token budget"
            )
        body = {
            "role": self.config.role.value,
            "prompt": prompt,
            "target": target,
        }
        payload = self._post("/v1/score", body)
        if "logprob" not in payload:
            raise MalformedResponseError("score response lacks logprob")
        value = float(payload["logprob"])
        if not math.isfinite(value):
            raise MalformedResponseError(f"non-finite score: {value}")
        return value


def _validate_table(table: Mapping[str, float], context: str) -> dict[str, float]:
    if not table:
        raise MockSpecError(f"empty distribution table for context {context!r}")
    cleaned = {}
    for completion, prob in table.items():
        if not isinstance(completion, str) or not completion:
            raise MockSpecError(f"invalid completion key {completion!r}")
        prob = float(prob)
        if prob <= 0 or prob > 1:
            raise MockSpecError(f"probability {prob} for {completion!r} not in (0, 1]")
        cleaned[completion] = prob
    total = sum(cleaned.values())
    if abs(total - 1.0) > 1e-9:
        raise MockSpecError(f"probabilities for {context!r} sum to {total}, not 1")
    return cleaned


class MockGenerator:
    """Deterministic table-driven generator for tests.

    The table is either flat (``{completion: prob}``, used for every prompt)
    or conditional (``{context: {completion: prob}}``).  In conditional mode
    sampling extends the context chunk by chunk while the extended context is
    itself a declared key, and scoring factorizes the target over declared
    chunks, which makes scores additive over concatenation by construction.
    """

    def __init__(self, spec: Mapping, seed: int = 0):
        if not spec:
            raise MockSpecError("empty mock spec")
        first = next(iter(spec.values()))
        self.conditional = isinstance(first, Mapping)
        if self.conditional:
            self.tables = {
                ctx: _validate_table(tbl, ctx) for ctx, tbl in spec.items()
            }
        else:
            self.tables = {None: _validate_table(spec, "<any>")}
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self.sample_calls = 0
        self.score_calls = 0

    def _table_for(self, context: str) -> dict[str, float] | None:
        if not self.conditional:
            return self.tables[None]
        return self.tables.get(context)

    def _draw_completion(self, prompt: str, rng: random.Random) -> tuple[str, float]:
        context = prompt
        pieces: list[str] = []
        logprob = 0.0
        while True:
            table = self._table_for(context)
            if table is None:
                break
            completions = list(table)
            chunk = rng.choices(completions, weights=[table[c] for c in completions])[0]
            pieces.append(chunk)
            logprob += math.log(table[chunk])
            if not self.conditional:
                break
            context += chunk
        if not pieces:
            raise MockSpecError(f"no table declared for context {prompt!r}")
        return "".join(pieces), logprob

    def sample(self, prompt: str, n: int) -> list[Candidate]:
        if n < 1:
            raise ValueError("n must be >= 1")
        with self._lock:
            self.sample_calls += 1
            out = []
            for _ in range(n):
                text, logprob = self._draw_completion(prompt, self._rng)
                out.append(Candidate(text=text, proposal_logprob=logprob))
            return out

    def score(self, prompt: str, target: str) -> float:
        if not target:
            raise ValueError("score target must be nonempty")
        with self._lock:
            self.score_calls += 1
        context = prompt
        remaining = target
        total = 0.0
        while remaining:
            table = self._table_for(context)
            if table is None:
                raise MockSpecError(f"no table declared for context {context!r}")
            matches = [c for c in table if remaining.startswith(c)]
            if not matches:
                raise MockSpecError(
                    f"target chunk {remaining[:40]!r} not declared for context"
                )
            chunk = max(matches, key=len)
            total += math.log(table[chunk])
            context += chunk
            remaining = remaining[len(chunk) :]
        return total


def mock_generator(spec: Mapping, seed: int = 0) -> MockGenerator:
    """Build an in-process endpoint serving ``spec`` deterministically."""
    return MockGenerator(spec, seed=seed)


__all__ = [
    "Candidate",
    "EndpointConfig",
    "GenClientError",
    "GeneratorEndpoint",
    "HttpGeneratorClient",
    "MalformedResponseError",
    "MockGenerator",
    "MockSpecError",
    "OverLengthError",
    "TransportError",
    "mock_generator",
]
