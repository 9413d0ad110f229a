"""Uniform client for chat-completion and embedding endpoints.

Every agent and judge in this project talks through the same wire shape: a
POST of {model, messages, temperature} returning one assistant message, and a
POST of {model, input} returning one embedding per input. The mock server at
the bottom of this module serves the identical contract deterministically so
pipelines can be tested byte-for-byte without a network.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

import httpx

DEFAULT_JUDGE_TEMPERATURE = 0.0
DEFAULT_GENERATION_TEMPERATURE = 0.7


class GatewayError(Exception):
    pass


class Timeout(GatewayError):
    pass


class HttpError(GatewayError):
    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"HTTP {status}: {detail}")
        self.status = status


class ExhaustedRetries(GatewayError):
    pass


class MissingCredentials(GatewayError):
    pass


class DimensionMismatch(GatewayError):
    pass


class PortUnavailable(GatewayError):
    pass


@dataclass
class EndpointConfig:
    name: str
    base_url: str
    model_id: str
    api_key_env: str = ""
    max_concurrency: int = 4
    timeout_seconds: float = 60.0
    max_retries: int = 3

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass
class ChatRequest:
    system: str
    user: str
    temperature: float = DEFAULT_GENERATION_TEMPERATURE
    max_output_tokens: int = 4096

    def __post_init__(self):
        if not self.user:
            raise ValueError("user message must be non-empty")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass
class EmbeddingVector:
    values: list[float]
    dimension: int

    def __post_init__(self):
        if len(self.values) != self.dimension:
            raise ValueError("vector length does not match dimension")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("vector values must be finite")


_RETRYABLE_STATUSES = {408, 409, 429, 500, 502, 503, 504}


class Gateway:
    """Shared client enforcing per-endpoint concurrency and retry policy."""

    def __init__(self, backoff_base: float = 1.0, backoff_cap: float = 30.0, rng=None):
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._rng = rng or random.Random()
        self._client = httpx.Client()
        self._semaphores: dict[str, threading.BoundedSemaphore] = {}
        self._lock = threading.Lock()
        self._sleep = time.sleep

    def close(self):
        self._client.close()

    def _semaphore(self, cfg: EndpointConfig) -> threading.BoundedSemaphore:
        with self._lock:
            sem = self._semaphores.get(cfg.name)
            if sem is None:
                sem = threading.BoundedSemaphore(cfg.max_concurrency)
                self._semaphores[cfg.name] = sem
            return sem

    def _headers(self, cfg: EndpointConfig) -> dict:
        headers = {"Content-Type": "application/json"}
        if cfg.api_key_env:
            key = os.environ.get(cfg.api_key_env)
            if not key:
                raise MissingCredentials(
                    f"endpoint {cfg.name!r} expects credentials in ${cfg.api_key_env}"
                )
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_with_retry(self, cfg: EndpointConfig, path: str, payload: dict) -> dict:
        headers = self._headers(cfg)
        url = cfg.base_url.rstrip("/") + path
        last_error: Optional[Exception] = None
        with self._semaphore(cfg):
            for attempt in range(cfg.max_retries + 1):
                if attempt:
                    delay = min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1))
                    self._sleep(delay * (0.5 + 0.5 * self._rng.random()))
                try:
                    resp = self._client.post(
                        url, json=payload, headers=headers, timeout=cfg.timeout_seconds
                    )
                except httpx.TimeoutException as exc:
                    last_error = Timeout(str(exc))
                    continue
                except httpx.TransportError as exc:
                    last_error = HttpError(0, str(exc))
                    continue
                if resp.status_code == 200:
                    return resp.json()
                if resp.status_code in _RETRYABLE_STATUSES:
                    last_error = HttpError(resp.status_code, resp.text[:200])
                    continue
                raise HttpError(resp.status_code, resp.text[:200])
        raise ExhaustedRetries(
            f"{cfg.name}: gave up after {cfg.max_retries + 1} attempts ({last_error})"
        )

    def chat(self, cfg: EndpointConfig, req: ChatRequest) -> str:
        payload = {
            "model": cfg.model_id,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        data = self._post_with_retry(cfg, "/chat/completions", payload)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise HttpError(200, f"malformed chat response: {exc}") from exc

    def embed(self, cfg: EndpointConfig, texts: list[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("texts must be non-empty")
        payload = {"model": cfg.model_id, "input": list(texts)}
        data = self._post_with_retry(cfg, "/embeddings", payload)
        try:
            rows = sorted(data["data"], key=lambda row: row["index"])
            raw = [row["embedding"] for row in rows]
        except (KeyError, TypeError) as exc:
            raise HttpError(200, f"malformed embedding response: {exc}") from exc
        if len(raw) != len(texts):
            raise DimensionMismatch(f"asked for {len(texts)} vectors, got {len(raw)}")
        dimension = len(raw[0])
        if any(len(v) != dimension for v in raw):
            raise DimensionMismatch("service returned ragged vectors")
        return [EmbeddingVector(values=[float(x) for x in v], dimension=dimension) for v in raw]


def chat(cfg: EndpointConfig, req: ChatRequest, gw: Optional[Gateway] = None) -> str:
    gw = gw or _default_gateway()
    return gw.chat(cfg, req)


def embed(cfg: EndpointConfig, texts: list[str], gw: Optional[Gateway] = None) -> list[EmbeddingVector]:
    gw = gw or _default_gateway()
    return gw.embed(cfg, texts)


_DEFAULT_GATEWAY: Optional[Gateway] = None


def _default_gateway() -> Gateway:
    global _DEFAULT_GATEWAY
    if _DEFAULT_GATEWAY is None:
        _DEFAULT_GATEWAY = Gateway()
    return _DEFAULT_GATEWAY


# --------------------------------------------------------------------------
# Deterministic mock service


@dataclass
class MockRule:
    """Canned responses for chat requests matched on prompt content.

    `match` is a substring of the user or system text ("*" matches
    everything), or a list of substrings that must all be present. String
    entries are served as message content; integer entries are served as that
    HTTP status. The last entry repeats once the list is exhausted."""

    match: str | list[str]
    responses: list
    delay: float = 0.0

    def __post_init__(self):
        if not self.responses:
            raise ValueError("a rule needs at least one response")

    def matches(self, system: str, user: str) -> bool:
        needles = self.match if isinstance(self.match, (list, tuple)) else [self.match]
        return all(n == "*" or n in user or n in system for n in needles)


def deterministic_embedding(text: str, dimension: int) -> list[float]:
    """Stable pseudo-random unit-scale vector derived from the text digest."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    rng = random.Random(int.from_bytes(digest[:8], "little"))
    return [rng.uniform(-1.0, 1.0) for _ in range(dimension)]


class _MockState:
    def __init__(self):
        self.lock = threading.Lock()
        self.requests: list[dict] = []
        self.inflight = 0
        self.high_water = 0
        self.positions: dict[int, int] = {}


class MockLLMServer:
    """In-process endpoint speaking the chat/embedding wire contract.

    Chat responses come from the scripted rules; embeddings default to a
    deterministic digest-derived vector unless `embed_script` pins an exact
    vector per input text. All requests are recorded for assertions.
    """

    def __init__(
        self,
        rules: Optional[list[MockRule]] = None,
        default_response: str = "OK",
        embed_dimension: int = 8,
        embed_script: Optional[dict[str, list[float]]] = None,
        port: int = 0,
    ):
        self.rules = rules or []
        self.default_response = default_response
        self.embed_dimension = embed_dimension
        self.embed_script = embed_script or {}
        self._port = port
        self._state = _MockState()
        self._server: Optional[ThreadingHTTPServer] = None
        self._thread: Optional[threading.Thread] = None

    # -- lifecycle

    def start(self) -> "MockLLMServer":
        state = self._state
        rules = self.rules
        default_response = self.default_response
        embed_dimension = self.embed_dimension
        embed_script = self.embed_script

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with state.lock:
                    state.inflight += 1
                    state.high_water = max(state.high_water, state.inflight)
                try:
                    if self.path.endswith("/chat/completions"):
                        self._chat(body)
                    elif self.path.endswith("/embeddings"):
                        self._embed(body)
                    else:
                        self._send(404, {"error": "unknown path"})
                finally:
                    with state.lock:
                        state.inflight -= 1

            def _chat(self, body: dict):
                messages = body.get("messages", [])
                system = next(
                    (m["content"] for m in messages if m.get("role") == "system"), ""
                )
                user = next((m["content"] for m in messages if m.get("role") == "user"), "")
                rule, response = None, default_response
                for idx, candidate in enumerate(rules):
                    if candidate.matches(system, user):
                        rule = candidate
                        with state.lock:
                            pos = state.positions.get(idx, 0)
                            state.positions[idx] = pos + 1
                        pos = min(pos, len(candidate.responses) - 1)
                        response = candidate.responses[pos]
                        break
                with state.lock:
                    state.requests.append(
                        {
                            "kind": "chat",
                            "model": body.get("model"),
                            "system": system,
                            "user": user,
                            "temperature": body.get("temperature"),
                            "matched": str(rule.match) if rule else None,
                        }
                    )
                if rule and rule.delay:
                    time.sleep(rule.delay)
                if isinstance(response, int):
                    self._send(response, {"error": {"message": "scripted failure"}})
                    return
                self._send(
                    200,
                    {
                        "id": "mock",
                        "object": "chat.completion",
                        "model": body.get("model"),
                        "choices": [
                            {
                                "index": 0,
                                "message": {"role": "assistant", "content": response},
                                "finish_reason": "stop",
                            }
                        ],
                    },
                )

            def _embed(self, body: dict):
                texts = body.get("input", [])
                if isinstance(texts, str):
                    texts = [texts]
                with state.lock:
                    state.requests.append(
                        {"kind": "embed", "model": body.get("model"), "texts": list(texts)}
                    )
                data = []
                for i, text in enumerate(texts):
                    vector = embed_script.get(text) or deterministic_embedding(
                        text, embed_dimension
                    )
                    data.append({"object": "embedding", "index": i, "embedding": vector})
                self._send(200, {"object": "list", "data": data, "model": body.get("model")})

            def _send(self, status: int, payload: dict):
                blob = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(blob)))
                self.end_headers()
                self.wfile.write(blob)

        try:
            self._server = ThreadingHTTPServer(("127.0.0.1", self._port), Handler)
        except OSError as exc:
            raise PortUnavailable(f"cannot bind port {self._port}: {exc}") from exc
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        if self._server:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> "MockLLMServer":
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- inspection

    @property
    def port(self) -> int:
        assert self._server is not None, "server not started"
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}/v1"

    @property
    def requests(self) -> list[dict]:
        with self._state.lock:
            return list(self._state.requests)

    @property
    def high_water_mark(self) -> int:
        with self._state.lock:
            return self._state.high_water

    def reset(self):
        """Clear the request log and re-arm every rule's response sequence."""
        with self._state.lock:
            self._state.requests.clear()
            self._state.positions.clear()
            self._state.high_water = 0
            self._state.inflight = 0

    def endpoint(self, name: str = "mock", **overrides) -> EndpointConfig:
        defaults = dict(
            name=name,
            base_url=self.base_url,
            model_id="mock-model",
            api_key_env="",
            max_concurrency=8,
            timeout_seconds=30.0,
            max_retries=3,
        )
        defaults.update(overrides)
        return EndpointConfig(**defaults)


def start_mock(
    script: dict[str, object] | list[MockRule], **kwargs
) -> MockLLMServer:
    """Start a mock endpoint from either a {substring: response} map or a
    full rule list. Map values may be a string or a list of responses."""
    if isinstance(script, dict):
        rules = []
        for match, responses in script.items():
            if not isinstance(responses, list):
                responses = [responses]
            rules.append(MockRule(match=match, responses=responses))
    else:
        rules = list(script)
    return MockLLMServer(rules=rules, **kwargs).start()
