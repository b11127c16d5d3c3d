"""Append-only JSONL record of everything a session does.

One event per line, densely numbered, flushed and fsynced before the append
returns: after a crash the file is always a valid prefix plus at most one
torn line, which loading tolerates and reports. The replay hash covers
every event with timing fields stripped, so two runs of the same script
hash identically regardless of wall-clock jitter.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .session import DEFAULT_MAX_STEPS, InvalidState, SessionState, StateFolder

TRANSCRIPT_FILENAME = "transcript.jsonl"

EVENT_KINDS = frozenset(
    {
        "task_submitted",
        "model_queried",
        "model_responded",
        "blocks_parsed",
        "snippet_staged",
        "command_started",
        "command_finished",
        "approval_requested",
        "approval_resolved",
        "paused",
        "resumed",
        "session_failed",
        "session_closed",
    }
)

#: measurement fields that legitimately differ between identical replays
TIMING_FIELDS = frozenset({"t", "latency_ms", "duration_ms"})


class TranscriptError(Exception):
    pass


@dataclass(frozen=True)
class TranscriptEvent:
    seq: int
    t: float
    kind: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "t": self.t, "kind": self.kind, "payload": self.payload},
            ensure_ascii=False,
            sort_keys=True,
        )


class TranscriptWriter:
    """Single appender; listeners get each event after it is durable."""

    def __init__(self, path: Path, clock: Callable[[], float] = time.time):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._lock = threading.Lock()
        self._listeners: list[Callable[[TranscriptEvent], None]] = []
        self._closed = False
        self._next_seq = 0
        if self.path.exists():
            loaded = load(self.path)
            self._next_seq = len(loaded.events)
            self._closed = any(e.kind == "session_closed" for e in loaded.events)

    def add_listener(self, listener: Callable[[TranscriptEvent], None]) -> None:
        with self._lock:
            self._listeners.append(listener)

    def append(self, kind: str, payload: dict) -> int:
        if kind not in EVENT_KINDS:
            raise TranscriptError(f"unknown event kind {kind!r}")
        with self._lock:
            if self._closed:
                raise TranscriptError("session is closed; transcript is sealed")
            event = TranscriptEvent(self._next_seq, self._clock(), kind, payload)
            line = event.to_json() + "\n"
            try:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line)
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise TranscriptError(f"cannot persist event: {exc}") from exc
            self._next_seq += 1
            if kind == "session_closed":
                self._closed = True
            listeners = list(self._listeners)
        for listener in listeners:
            listener(event)
        return event.seq


@dataclass
class TranscriptLoad:
    events: list[TranscriptEvent]
    state: SessionState
    corruption: str | None = None


def load(path: Path, session_id: str | None = None) -> TranscriptLoad:
    """Read the longest valid prefix and rebuild the session state from it.

    Both syntactic damage (torn lines, gapped sequences) and semantic damage
    (an event impossible for the reconstructed state) end the prefix; the
    events before the damage are returned with a corruption report.
    """
    path = Path(path)
    events: list[TranscriptEvent] = []
    corruption = None
    folder = StateFolder(
        session_dir=path.parent,
        session_id=session_id or path.parent.name,
        max_steps=DEFAULT_MAX_STEPS,  # real bound arrives with task_submitted
    )
    raw = path.read_text(encoding="utf-8", errors="replace")
    for i, line in enumerate(raw.split("\n")):
        if line == "":
            continue
        try:
            record = json.loads(line)
            event = TranscriptEvent(
                seq=record["seq"], t=record["t"], kind=record["kind"], payload=record["payload"]
            )
            if event.seq != len(events) or event.kind not in EVENT_KINDS:
                raise ValueError(f"bad seq or kind at line {i + 1}")
            folder.apply(event)
        except (ValueError, KeyError, TypeError, InvalidState) as exc:
            corruption = f"stopped at line {i + 1} (seq {len(events)}): {exc}"
            break
        events.append(event)
    return TranscriptLoad(events=events, state=folder.state, corruption=corruption)


def _scrub(value):
    if isinstance(value, dict):
        return {k: _scrub(v) for k, v in sorted(value.items()) if k not in TIMING_FIELDS}
    if isinstance(value, list):
        return [_scrub(v) for v in value]
    return value


def content_hash(events: list[TranscriptEvent]) -> str:
    """Replay-stable digest: identical runs hash identically across machines."""
    digest = hashlib.sha256()
    for event in events:
        canonical = json.dumps(
            {"seq": event.seq, "kind": event.kind, "payload": _scrub(event.payload)},
            ensure_ascii=False,
            sort_keys=True,
        )
        digest.update(canonical.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()
