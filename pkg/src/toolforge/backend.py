"""Chat-completion backends: a live HTTP client and a deterministic scripted mock.

Tool calls travel inside message content text; there is no function-calling
native API mode.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field

import requests

from .errors import BadRequest, ScriptMiss, TransportError

ROLES = ("system", "user", "assistant", "tool")

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise BadRequest(f"unknown role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise BadRequest(f"empty content for role {self.role}")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 4096
    tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise BadRequest("messages must be non-empty")
        if self.messages[0].role != "system":
            raise BadRequest("first message must have role system")
        if self.temperature < 0:
            raise BadRequest("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise BadRequest("max_tokens must be positive")


def _fnv1a64(h: int, data: bytes) -> int:
    for b in data:
        h ^= b
        h = (h * FNV64_PRIME) & _MASK64
    return h


def fingerprint(messages) -> int:
    """FNV-1a 64 over role, 0x1F, content, 0x1E per message, in order."""
    h = FNV64_OFFSET
    for m in messages:
        h = _fnv1a64(h, m.role.encode("utf-8"))
        h = _fnv1a64(h, b"\x1f")
        h = _fnv1a64(h, m.content.encode("utf-8"))
        h = _fnv1a64(h, b"\x1e")
    return h


@dataclass
class BackendScript:
    """Pure lookup table from (tag, fingerprint) to canned completion text."""

    entries: dict[tuple[str, int], str] = field(default_factory=dict)
    default_policy: str = "error"  # error | echo

    def add(self, tag: str, fp: int, completion: str) -> None:
        self.entries[(tag, fp)] = completion

    @classmethod
    def load(cls, path, default_policy: str = "error") -> "BackendScript":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        script = cls(default_policy=default_policy)
        for entry in raw:
            script.add(entry["tag"], int(entry["fingerprint"], 16), entry["completion"])
        return script

    def dump(self, path) -> None:
        raw = [
            {"tag": tag, "fingerprint": f"{fp:016x}", "completion": text}
            for (tag, fp), text in self.entries.items()
        ]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(raw, fh, ensure_ascii=False, indent=2)


class MockBackend:
    """Deterministic test double: lookup is a pure function of the request."""

    def __init__(self, script: BackendScript):
        self.script = script

    def chat(self, request: ChatRequest) -> str:
        key = (request.tag, fingerprint(request.messages))
        hit = self.script.entries.get(key)
        if hit is not None:
            return hit
        if self.script.default_policy == "echo":
            return request.messages[-1].content
        raise ScriptMiss(f"no entry for tag={request.tag!r} fp={key[1]:016x}")


class LiveBackend:
    """Chat-completion HTTP client with bounded retries and in-flight limit.

    Credential comes from TOOLFORGE_API_KEY; endpoint and model from config.
    """

    MAX_RETRIES = 3
    BACKOFF_BASE = 0.5

    def __init__(self, endpoint: str, model: str, *, max_in_flight: int = 8,
                 timeout: float = 60.0, session=None):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self._sem = threading.Semaphore(max_in_flight)
        self._session = session or requests.Session()

    def chat(self, request: ChatRequest) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {}
        key = os.environ.get("TOOLFORGE_API_KEY")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last_err = None
        with self._sem:
            for attempt in range(self.MAX_RETRIES):
                try:
                    resp = self._session.post(
                        self.endpoint, json=body, headers=headers, timeout=self.timeout
                    )
                    resp.raise_for_status()
                    payload = resp.json()
                    return payload["choices"][0]["message"]["content"]
                except (requests.RequestException, KeyError, ValueError) as err:
                    last_err = err
                    if attempt < self.MAX_RETRIES - 1:
                        time.sleep(self.BACKOFF_BASE * (2 ** attempt))
        raise TransportError(str(last_err))
