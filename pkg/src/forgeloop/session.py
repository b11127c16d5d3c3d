"""Session lifecycle state and its transition rules.

A session is born awaiting a task, steps until it has nothing actionable
left (or hits its step bound, or the agent asks for the operator), pauses
for input, and resumes — any unrecoverable error parks it in Failed, from
which operator input may also resume it. The same transition relation that
drives the live loop is used to rebuild state from a transcript, so a
restart sees exactly what the crashed process saw at the last step boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .transcript import TranscriptEvent

DEFAULT_MAX_STEPS = 30


class SessionStatus(Enum):
    AWAITING_TASK = "awaiting_task"
    STEPPING = "stepping"
    AWAITING_HUMAN = "awaiting_human"
    FAILED = "failed"
    CLOSED = "closed"


class PauseReason(Enum):
    MARKER_REQUESTED = "marker_requested"
    NO_ACTIONABLE_OUTPUT = "no_actionable_output"
    APPROVAL_PENDING = "approval_pending"
    MAX_STEPS_REACHED = "max_steps_reached"


ALLOWED_TRANSITIONS: frozenset[tuple[SessionStatus, SessionStatus]] = frozenset(
    [
        (SessionStatus.AWAITING_TASK, SessionStatus.STEPPING),
        (SessionStatus.STEPPING, SessionStatus.STEPPING),
        (SessionStatus.STEPPING, SessionStatus.AWAITING_HUMAN),
        (SessionStatus.AWAITING_HUMAN, SessionStatus.STEPPING),
        # operator-inspected failures are resumable
        (SessionStatus.FAILED, SessionStatus.STEPPING),
    ]
    + [(s, SessionStatus.FAILED) for s in SessionStatus if s is not SessionStatus.CLOSED]
    + [(s, SessionStatus.CLOSED) for s in SessionStatus]
)


class InvalidState(Exception):
    pass


class BlankTask(Exception):
    pass


@dataclass(frozen=True)
class SessionState:
    session_id: str
    session_dir: Path
    status: SessionStatus = SessionStatus.AWAITING_TASK
    pause_reason: PauseReason | None = None
    failure_cause: str | None = None
    task: str | None = None
    step_index: int = 0
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.step_index > self.max_steps:
            raise ValueError("step_index cannot exceed max_steps")

    def moved_to(self, status: SessionStatus, **changes) -> "SessionState":
        if (self.status, status) not in ALLOWED_TRANSITIONS:
            raise InvalidState(f"cannot move {self.status.value} -> {status.value}")
        if status is not SessionStatus.AWAITING_HUMAN:
            changes.setdefault("pause_reason", None)
        if status is not SessionStatus.FAILED:
            changes.setdefault("failure_cause", None)
        return replace(self, status=status, **changes)


@dataclass
class _InFlightStep:
    step: int
    planned_snippets: int | None = None
    planned_commands: int | None = None
    outcome: str | None = None  # "continue" | "pause_marker" | "pause_no_actionable"
    staged: int = 0
    finished: int = 0
    parsed: bool = False

    def work_complete(self) -> bool:
        return (
            self.parsed
            and self.staged == self.planned_snippets
            and self.finished == self.planned_commands
        )


class StateFolder:
    """Incremental fold of transcript events into SessionState.

    A step counts only once every staging and command it announced has its
    event on disk (plus the pause event, for pausing steps); a partial final
    step is rolled back, matching what a restarted process can safely act on.
    ``apply`` raises on events that are impossible for the current state, so
    callers can treat the remainder as a corrupt suffix.
    """

    def __init__(self, session_dir: Path, session_id: str, max_steps: int):
        self._session_dir = Path(session_dir)
        self._default_id = session_id
        self._default_max = max_steps
        self.state = SessionState(
            session_id=session_id, session_dir=self._session_dir, max_steps=max_steps
        )
        self._flight: _InFlightStep | None = None

    def _commit_if_done(self) -> None:
        flight = self._flight
        if flight is not None and flight.outcome == "continue" and flight.work_complete():
            self.state = replace(self.state, step_index=flight.step + 1)
            self._flight = None

    def apply(self, event: "TranscriptEvent") -> None:
        kind, payload = event.kind, event.payload
        if kind == "task_submitted":
            self.state = SessionState(
                session_id=payload.get("session_id", self._default_id),
                session_dir=self._session_dir,
                status=SessionStatus.STEPPING,
                task=payload["task"],
                step_index=0,
                max_steps=payload.get("max_steps", self._default_max),
            )
            self._flight = None
        elif kind == "model_queried":
            self._flight = _InFlightStep(step=payload["step"])
        elif kind == "blocks_parsed":
            if self._flight is not None:
                self._flight.parsed = True
                self._flight.planned_snippets = payload["planned_snippets"]
                self._flight.planned_commands = payload["planned_commands"]
                self._flight.outcome = payload["outcome"]
                self._commit_if_done()
        elif kind == "snippet_staged":
            if self._flight is not None:
                self._flight.staged += 1
                self._commit_if_done()
        elif kind == "command_finished":
            if self._flight is not None:
                self._flight.finished += 1
                self._commit_if_done()
        elif kind == "paused":
            reason = PauseReason(payload["reason"])
            if self._flight is not None and self._flight.work_complete():
                self.state = replace(self.state, step_index=self._flight.step + 1)
            self._flight = None
            self.state = self.state.moved_to(
                SessionStatus.AWAITING_HUMAN, pause_reason=reason
            )
        elif kind == "resumed":
            self.state = self.state.moved_to(SessionStatus.STEPPING)
            self._flight = None
        elif kind == "session_failed":
            self.state = self.state.moved_to(
                SessionStatus.FAILED, failure_cause=payload.get("cause")
            )
            self._flight = None
        elif kind == "session_closed":
            self.state = self.state.moved_to(SessionStatus.CLOSED)
            self._flight = None


def reconstruct_state(
    events: list["TranscriptEvent"],
    session_dir: Path,
    session_id: str = "session",
    max_steps: int = DEFAULT_MAX_STEPS,
) -> SessionState:
    """State at the last committed step boundary of an event sequence."""
    folder = StateFolder(session_dir, session_id, max_steps)
    for event in events:
        folder.apply(event)
    return folder.state


@dataclass
class PendingApproval:
    exec_id: str
    command: str


def pending_approval(events: list["TranscriptEvent"]) -> PendingApproval | None:
    """The unresolved approval request, if any, per the transcript prefix."""
    open_requests: dict[str, str] = {}
    for event in events:
        if event.kind == "approval_requested":
            open_requests[event.payload["exec_id"]] = event.payload["command"]
        elif event.kind == "approval_resolved":
            open_requests.pop(event.payload["exec_id"], None)
    if not open_requests:
        return None
    exec_id, command = next(iter(open_requests.items()))
    return PendingApproval(exec_id=exec_id, command=command)


# used by summaries: hold-for-approval shows as an operator-facing pause
def effective_status(state: SessionState, events: list["TranscriptEvent"]) -> tuple[str, str | None]:
    if state.status is SessionStatus.STEPPING and pending_approval(events) is not None:
        return SessionStatus.AWAITING_HUMAN.value, PauseReason.APPROVAL_PENDING.value
    reason = state.pause_reason.value if state.pause_reason else None
    return state.status.value, reason
