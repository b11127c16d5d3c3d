"""Uniform completion interface over a live chat endpoint or a fixed script.

The live side speaks the minimal chat-completions wire subset (model,
messages, temperature in; choices[0].message.content out) over HTTP with
retries and exponential backoff. The scripted side replays a recorded
response sequence and refuses to drift: a response whose match condition
fails kills the run rather than silently diverging.

Script files are line-oriented::

    # comment
    match: any
    response <<EOF
    ...verbatim response text...
    EOF

    match: contains
    contains: exit 0
    response <<EOF
    ...
    EOF
"""
from __future__ import annotations

import hashlib
import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Union

from .prompts import Message

API_KEY_ENV = "FORGELOOP_API_KEY"
COMPLETIONS_PATH = "/v1/chat/completions"
DEFAULT_RETRY_LIMIT = 3
DEFAULT_BASE_DELAY_MS = 500


class GatewayError(Exception):
    """Base for everything the completion layer can raise."""


class EndpointUnreachable(GatewayError):
    pass


class AuthRejected(GatewayError):
    pass


class ScriptExhausted(GatewayError):
    pass


class ScriptMismatch(GatewayError):
    def __init__(self, expected: str, prompt_digest: str):
        super().__init__(
            f"scripted entry expected prompt containing {expected!r}, "
            f"got prompt with digest {prompt_digest}"
        )
        self.expected = expected
        self.prompt_digest = prompt_digest


class ScriptParseError(GatewayError):
    def __init__(self, line: int, cause: str):
        super().__init__(f"script line {line}: {cause}")
        self.line = line


class FinishReason(Enum):
    STOP = "stop"
    LENGTH = "length"
    OTHER = "other"


@dataclass(frozen=True)
class ModelRequest:
    messages: tuple[Message, ...]
    model_id: str = "scripted"
    temperature: float = 0.0
    max_response_chars: int = 200_000

    def probe_text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class ModelResponse:
    text: str
    finish_reason: FinishReason
    latency_ms: int
    source: str  # "live" or "scripted:<position>"


class MatchKind(Enum):
    ANY = "any"
    CONTAINS = "contains"


@dataclass(frozen=True)
class ScriptEntry:
    match: MatchKind
    contains: str | None
    response_text: str


@dataclass
class ScriptedModel:
    entries: list[ScriptEntry]
    cursor: int = 0

    def complete(self, request: ModelRequest) -> ModelResponse:
        if self.cursor >= len(self.entries):
            raise ScriptExhausted(f"script consumed after {self.cursor} entries")
        entry = self.entries[self.cursor]
        if entry.match is MatchKind.CONTAINS:
            probe = request.probe_text()
            if entry.contains not in probe:
                digest = hashlib.sha256(probe.encode("utf-8")).hexdigest()[:16]
                raise ScriptMismatch(entry.contains, digest)
        position = self.cursor
        self.cursor += 1
        text, reason = _clip(entry.response_text, request.max_response_chars)
        return ModelResponse(text, reason, latency_ms=0, source=f"scripted:{position}")


def _clip(text: str, limit: int) -> tuple[str, FinishReason]:
    if len(text) > limit:
        return text[:limit], FinishReason.LENGTH
    return text, FinishReason.STOP


def load_script(path: Path) -> ScriptedModel:
    """Parse a script file; errors carry the offending line number."""
    return parse_script(Path(path).read_text(encoding="utf-8"))


def parse_script(text: str) -> ScriptedModel:
    lines = text.split("\n")
    entries: list[ScriptEntry] = []
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if not line or line.startswith("#"):
            i += 1
            continue
        if not line.startswith("match:"):
            raise ScriptParseError(i + 1, f"expected 'match:', got {lines[i]!r}")
        kind_token = line[len("match:"):].strip()
        try:
            kind = MatchKind(kind_token)
        except ValueError:
            raise ScriptParseError(i + 1, f"unknown match kind {kind_token!r}") from None
        i += 1
        contains = None
        if kind is MatchKind.CONTAINS:
            if i >= len(lines) or not lines[i].startswith("contains:"):
                raise ScriptParseError(i + 1, "match: contains requires a contains: line")
            contains = lines[i][len("contains:"):].strip()
            i += 1
        if i >= len(lines) or not lines[i].startswith("response <<"):
            raise ScriptParseError(i + 1, "expected 'response <<TOKEN'")
        token = lines[i][len("response <<"):].strip()
        if not token:
            raise ScriptParseError(i + 1, "heredoc token missing")
        i += 1
        body: list[str] = []
        while i < len(lines):
            if lines[i] == token:
                break
            body.append(lines[i])
            i += 1
        else:
            raise ScriptParseError(len(lines), f"heredoc terminator {token!r} not found")
        i += 1
        entries.append(ScriptEntry(kind, contains, "\n".join(body)))
    return ScriptedModel(entries)


def dump_script(responses: list[str]) -> str:
    """Render responses as an any-match script (the `record` output format)."""
    chunks = []
    for text in responses:
        token = "END_RESPONSE"
        n = 0
        while token in text.split("\n"):
            n += 1
            token = f"END_RESPONSE_{n}"
        chunks.append(f"match: any\nresponse <<{token}\n{text}\n{token}\n")
    return "\n".join(chunks)


@dataclass
class LiveEndpoint:
    """Chat-completions client with bounded retries and scrubbed errors."""

    base_url: str
    api_key: str
    retry_limit: int = DEFAULT_RETRY_LIMIT
    base_delay_ms: int = DEFAULT_BASE_DELAY_MS
    request_timeout_s: float = 120.0
    sleeper: Callable[[float], None] = field(default=time.sleep, repr=False)
    opener: Callable = field(default=urllib.request.urlopen, repr=False)

    def complete(self, request: ModelRequest) -> ModelResponse:
        payload = json.dumps(
            {
                "model": request.model_id,
                "messages": [m.to_wire() for m in request.messages],
                "temperature": request.temperature,
            }
        ).encode("utf-8")
        url = self.base_url.rstrip("/") + COMPLETIONS_PATH
        started = time.monotonic()
        last_error = "no attempt made"
        for attempt in range(self.retry_limit + 1):
            if attempt:
                # strictly increasing: 1x, 2x, 4x ... of the base delay
                self.sleeper(self.base_delay_ms * (2 ** (attempt - 1)) / 1000.0)
            req = urllib.request.Request(
                url,
                data=payload,
                headers={
                    "Content-Type": "application/json",
                    "Authorization": f"Bearer {self.api_key}",
                },
                method="POST",
            )
            try:
                with self.opener(req, timeout=self.request_timeout_s) as resp:
                    body = json.loads(resp.read().decode("utf-8"))
                latency = int((time.monotonic() - started) * 1000)
                return self._parse(body, request, latency)
            except urllib.error.HTTPError as exc:
                if exc.code in (401, 403):
                    raise AuthRejected(f"endpoint rejected credential (HTTP {exc.code})") from None
                if exc.code == 429 or exc.code >= 500:
                    last_error = f"HTTP {exc.code}"
                    continue
                raise GatewayError(f"endpoint error HTTP {exc.code}") from None
            except (urllib.error.URLError, ConnectionError, TimeoutError) as exc:
                last_error = getattr(exc, "reason", None) or exc.__class__.__name__
                continue
        raise EndpointUnreachable(
            f"gave up after {self.retry_limit + 1} attempts ({last_error})"
        )

    @staticmethod
    def _parse(body: dict, request: ModelRequest, latency: int) -> ModelResponse:
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
            reason_token = choice.get("finish_reason") or "other"
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion payload: {exc}") from None
        if reason_token == "stop":
            reason = FinishReason.STOP
        elif reason_token == "length":
            reason = FinishReason.LENGTH
        else:
            reason = FinishReason.OTHER
        text, clipped = _clip(text, request.max_response_chars)
        if clipped is FinishReason.LENGTH:
            reason = FinishReason.LENGTH
        return ModelResponse(text, reason, latency_ms=latency, source="live")


Backend = Union[ScriptedModel, LiveEndpoint]


def complete(request: ModelRequest, backend: Backend) -> ModelResponse:
    return backend.complete(request)
