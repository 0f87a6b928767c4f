"""Chat-completion backends: HTTP model servers, a replay store, and a recorder."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol

import httpx

log = logging.getLogger(__name__)

API_KEY_ENV = "ROS_API_KEY"


@dataclass(frozen=True)
class GenerationConfig:
    """Sampling parameters sent with every request.

    Defaults are the values the extraction prompts were tuned with.
    """

    model: str = ""
    temperature: float = 1.0
    seed: int = 42
    top_k: int = 10
    top_p: float = 0.5
    timeout: float = 120.0
    max_retries: int = 2

    def __post_init__(self) -> None:
        if not 0 <= self.top_p <= 1:
            raise ValueError(f"top_p must be in [0, 1], got {self.top_p}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_message: str

    def __post_init__(self) -> None:
        if not self.system_prompt or not self.user_message:
            raise ValueError("system_prompt and user_message must both be non-empty")

    @property
    def digest(self) -> str:
        return request_digest(self)

    def to_dict(self) -> dict:
        return {"system_prompt": self.system_prompt, "user_message": self.user_message}


def request_digest(request: ChatRequest) -> str:
    h = hashlib.sha256()
    h.update(request.system_prompt.encode("utf-8"))
    h.update(b"\x00")
    h.update(request.user_message.encode("utf-8"))
    return h.hexdigest()


class BackendError(Exception):
    kind = "backend"

    def __init__(self, message: str, *, backend: str, digest: str | None = None):
        self.backend = backend
        self.digest = digest
        detail = f"[{backend}] {message}"
        if digest:
            detail += f" (request {digest[:16]})"
        super().__init__(detail)


class TransportError(BackendError):
    kind = "Transport"


class ProtocolError(BackendError):
    kind = "Protocol"


class ReplayMiss(BackendError):
    kind = "ReplayMiss"


class Backend(Protocol):
    kind: str

    def complete(self, request: ChatRequest, config: GenerationConfig) -> str: ...


class HttpBackend:
    """Client for an OpenAI-style ``/chat/completions`` endpoint.

    Works with the compatibility layers of common local servers (Ollama,
    vLLM, llama.cpp). ``top_k`` and ``seed`` are sent as extra body fields;
    servers that do not understand them ignore them.
    """

    kind = "http"

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        transport: httpx.BaseTransport | None = None,
        backoff: float = 0.5,
    ):
        self.base_url = base_url.rstrip("/")
        if api_key is None:
            api_key = os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(headers=headers, transport=transport)
        self.backoff = backoff

    def close(self) -> None:
        self._client.close()

    def ping(self, timeout: float = 10.0) -> None:
        """Fail fast if nothing is listening at ``base_url``.

        Any HTTP answer counts as reachable; only transport failures raise.
        """
        try:
            self._client.get(f"{self.base_url}/models", timeout=timeout)
        except httpx.TransportError as e:
            raise TransportError(f"cannot reach {self.base_url}: {e}", backend=self.kind) from e

    def payload(self, request: ChatRequest, config: GenerationConfig) -> dict:
        return {
            "model": config.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_message},
            ],
            "temperature": config.temperature,
            "top_p": config.top_p,
            "top_k": config.top_k,
            "seed": config.seed,
            "stream": False,
        }

    def complete(self, request: ChatRequest, config: GenerationConfig) -> str:
        digest = request.digest
        body = self.payload(request, config)
        url = f"{self.base_url}/chat/completions"
        for attempt in range(config.max_retries + 1):
            try:
                resp = self._client.post(url, json=body, timeout=config.timeout)
                break
            except httpx.TransportError as e:
                if attempt == config.max_retries:
                    raise TransportError(
                        f"{type(e).__name__} after {attempt + 1} attempt(s): {e}",
                        backend=self.kind,
                        digest=digest,
                    ) from e
                log.warning("transport failure (%s), retrying request %s", e, digest[:16])
                time.sleep(self.backoff * (attempt + 1))

        if not resp.is_success:
            raise ProtocolError(
                f"HTTP {resp.status_code}: {resp.text[:200]}", backend=self.kind, digest=digest
            )
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProtocolError(f"malformed response envelope: {e!r}", backend=self.kind, digest=digest) from e
        if not isinstance(content, str):
            raise ProtocolError("response content is not a string", backend=self.kind, digest=digest)
        return content


def _store_line(request: ChatRequest, response: str) -> str:
    record = {"digest": request.digest, "request": request.to_dict(), "response": response}
    return json.dumps(record, ensure_ascii=False) + "\n"


def read_store(path: str | Path) -> dict[str, str]:
    """Load a replay store. The first response recorded for a digest wins."""
    entries: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                digest, response = record["digest"], record["response"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: bad replay record ({e})") from None
            entries.setdefault(digest, response)
    return entries


class ReplayBackend:
    """Answers requests from a content-addressed store of recorded responses."""

    kind = "replay"

    def __init__(self, entries: dict[str, str] | None = None):
        self.entries = dict(entries or {})

    @classmethod
    def from_file(cls, path: str | Path) -> ReplayBackend:
        return cls(read_store(path))

    def add(self, request: ChatRequest, response: str) -> None:
        self.entries.setdefault(request.digest, response)

    def complete(self, request: ChatRequest, config: GenerationConfig) -> str:
        digest = request.digest
        try:
            return self.entries[digest]
        except KeyError:
            raise ReplayMiss(f"no recorded response for digest {digest}", backend=self.kind, digest=digest) from None


class RecordingBackend:
    """Wrap a live backend and append every exchange to a replay store.

    Requests already present in the store are answered from it, so the
    recorded run sees exactly the responses a later replay will see.
    """

    kind = "record"

    def __init__(self, wrapped: Backend, store_path: str | Path):
        self.wrapped = wrapped
        self.store_path = Path(store_path)
        self._lock = threading.Lock()
        self._inflight: dict[str, threading.Lock] = {}
        self.entries = read_store(self.store_path) if self.store_path.exists() else {}
        try:
            self.store_path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self.store_path, "a", encoding="utf-8", newline="\n")
        except OSError as e:
            raise OSError(f"replay store not writable: {self.store_path}: {e}") from e

    def close(self) -> None:
        self._file.close()
        close = getattr(self.wrapped, "close", None)
        if close:
            close()

    def _digest_lock(self, digest: str) -> threading.Lock:
        with self._lock:
            return self._inflight.setdefault(digest, threading.Lock())

    def complete(self, request: ChatRequest, config: GenerationConfig) -> str:
        digest = request.digest
        # identical concurrent requests must not both go live
        with self._digest_lock(digest):
            with self._lock:
                if digest in self.entries:
                    return self.entries[digest]
            response = self.wrapped.complete(request, config)
            with self._lock:
                self.entries[digest] = response
                self._file.write(_store_line(request, response))
                self._file.flush()
            return response
