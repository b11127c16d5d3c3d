"""Threaded session hosting for the console: one worker loop per session.

Operator inputs and approval decisions arrive from HTTP handler threads and
are handed to the worker through a mailbox; transcript events fan out to any
number of subscriber queues without ever blocking the loop (a subscriber
that stops draining is disconnected, not waited on).
"""
from __future__ import annotations

import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .execution import CommandRequest
from .gateway import Backend
from .loop import LoopConfig, SessionLoop
from .session import (
    BlankTask,
    InvalidState,
    PendingApproval,
    SessionState,
    SessionStatus,
    effective_status,
    pending_approval,
)
from .transcript import TRANSCRIPT_FILENAME, TranscriptEvent, TranscriptWriter

SUBSCRIBER_BUFFER = 1000
CLOSE_SENTINEL = None


class UnknownSession(KeyError):
    pass


class WrongSessionState(Exception):
    pass


class UnknownApproval(KeyError):
    pass


class AlreadyResolved(Exception):
    pass


@dataclass
class SessionSummary:
    session_id: str
    status: str
    pause_reason: str | None
    task: str | None
    step_index: int
    max_steps: int
    pending_approval: dict | None
    created_at: float

    def to_wire(self) -> dict:
        return {
            "session_id": self.session_id,
            "status": self.status,
            "pause_reason": self.pause_reason,
            "task": self.task,
            "step_index": self.step_index,
            "max_steps": self.max_steps,
            "pending_approval": self.pending_approval,
            "created_at": self.created_at,
        }


class _MailboxApproval:
    """Blocks the worker on a decision delivered via the console, or times out."""

    def __init__(self, timeout_s: float | None):
        self.timeout_s = timeout_s
        self._lock = threading.Lock()
        self._pending: dict[str, tuple[threading.Event, list]] = {}
        self._resolved: set[str] = set()

    def register(self, request: CommandRequest) -> None:
        with self._lock:
            self._pending[request.exec_id] = (threading.Event(), [])

    def decide(self, request: CommandRequest) -> bool | None:
        with self._lock:
            entry = self._pending.get(request.exec_id)
        if entry is None:  # direct-execution path without prior registration
            return None
        event, slot = entry
        event.wait(self.timeout_s)
        with self._lock:
            self._pending.pop(request.exec_id, None)
            self._resolved.add(request.exec_id)
        return slot[0] if slot else None

    def resolve(self, exec_id: str, approved: bool) -> None:
        with self._lock:
            entry = self._pending.get(exec_id)
            if entry is None:
                if exec_id in self._resolved:
                    raise AlreadyResolved(exec_id)
                raise UnknownApproval(exec_id)
            event, slot = entry
            if slot:
                raise AlreadyResolved(exec_id)
            slot.append(approved)
        event.set()

    def deny_all(self) -> None:
        with self._lock:
            entries = list(self._pending.values())
        for event, slot in entries:
            if not slot:
                slot.append(False)
            event.set()


class SessionRuntime:
    """One live session: loop worker, transcript fanout, input mailbox."""

    def __init__(
        self,
        session_id: str,
        session_dir: Path,
        backend: Backend,
        config: LoopConfig,
        max_steps: int,
        approval_timeout_s: float | None = None,
    ):
        self.session_id = session_id
        self.created_at = time.time()
        session_dir.mkdir(parents=True, exist_ok=True)
        self.writer = TranscriptWriter(session_dir / TRANSCRIPT_FILENAME)
        self.events: list[TranscriptEvent] = []
        self._events_lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []
        self.writer.add_listener(self._fanout)
        self.approvals = _MailboxApproval(approval_timeout_s)
        state = SessionState(
            session_id=session_id, session_dir=session_dir, max_steps=max_steps
        )
        self.loop = SessionLoop(
            state=state,
            backend=backend,
            writer=self.writer,
            config=config,
            approval=self.approvals,
            register_pending_approval=self.approvals.register,
        )
        self._inbox: queue.Queue = queue.Queue()
        self._pending_input = False
        self._state_lock = threading.Lock()
        self._closing = False
        self._worker = threading.Thread(target=self._run, daemon=True, name=f"session-{session_id}")
        self._worker.start()

    # -- transcript fanout ---------------------------------------------------

    def _fanout(self, event: TranscriptEvent) -> None:
        with self._events_lock:
            self.events.append(event)
            subscribers = list(self._subscribers)
        for q in subscribers:
            try:
                q.put_nowait(event)
            except queue.Full:
                self._drop_subscriber(q)

    def _drop_subscriber(self, q: queue.Queue) -> None:
        with self._events_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)
        # evict one buffered event if needed so the close sentinel always fits
        try:
            q.put_nowait(CLOSE_SENTINEL)
        except queue.Full:
            try:
                q.get_nowait()
            except queue.Empty:
                pass
            try:
                q.put_nowait(CLOSE_SENTINEL)
            except queue.Full:
                pass

    def subscribe(self, from_seq: int = 0) -> tuple[list[TranscriptEvent], queue.Queue]:
        """Snapshot plus live tail with no gap: subscribe under the same lock."""
        q: queue.Queue = queue.Queue(maxsize=SUBSCRIBER_BUFFER)
        with self._events_lock:
            snapshot = [e for e in self.events if e.seq >= from_seq]
            self._subscribers.append(q)
        return snapshot, q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._events_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    # -- operator surface ------------------------------------------------------

    @property
    def state(self) -> SessionState:
        return self.loop.state

    def summary(self) -> SessionSummary:
        with self._events_lock:
            events = list(self.events)
        status, reason = effective_status(self.state, events)
        pending: PendingApproval | None = pending_approval(events)
        return SessionSummary(
            session_id=self.session_id,
            status=status,
            pause_reason=reason,
            task=self.state.task,
            step_index=self.state.step_index,
            max_steps=self.state.max_steps,
            pending_approval=(
                {"exec_id": pending.exec_id, "command": pending.command} if pending else None
            ),
            created_at=self.created_at,
        )

    def submit_input(self, text: str) -> None:
        if not text.strip():
            raise BlankTask("input must be non-blank")
        with self._state_lock:
            acceptable = self.state.status in (
                SessionStatus.AWAITING_TASK,
                SessionStatus.AWAITING_HUMAN,
                SessionStatus.FAILED,
            )
            if not acceptable or self._pending_input or self._closing:
                raise WrongSessionState(self.state.status.value)
            self._pending_input = True
        self._inbox.put(text)

    def resolve_approval(self, exec_id: str, approved: bool) -> None:
        self.approvals.resolve(exec_id, approved)

    def close(self) -> None:
        with self._state_lock:
            if self._closing:
                return
            self._closing = True
        self.approvals.deny_all()
        self._inbox.put(CLOSE_SENTINEL)
        self._worker.join(timeout=10)
        if self.state.status is not SessionStatus.CLOSED:
            self.loop.state = self.state.moved_to(SessionStatus.CLOSED)
            self.writer.append("session_closed", {})
        with self._events_lock:
            subscribers = list(self._subscribers)
            self._subscribers.clear()
        for q in subscribers:
            try:
                q.put_nowait(CLOSE_SENTINEL)
            except queue.Full:
                pass

    # -- worker -----------------------------------------------------------------

    def _run(self) -> None:
        while True:
            text = self._inbox.get()
            if text is CLOSE_SENTINEL:
                return
            try:
                self.loop.submit_task(text)
            except (BlankTask, InvalidState):
                continue
            finally:
                with self._state_lock:
                    self._pending_input = False
            try:
                self.loop.run_until_pause()
            except Exception as exc:  # worker must survive; session shows Failed
                try:
                    self.loop.state = self.state.moved_to(
                        SessionStatus.FAILED, failure_cause=f"worker: {exc}"
                    )
                    self.writer.append("session_failed", {"cause": f"worker: {exc}"})
                except Exception:
                    pass


@dataclass
class ManagerConfig:
    session_root: Path
    loop_config_factory: Callable[[], LoopConfig]
    backend_factory: Callable[[], Backend]
    max_steps: int = 30
    approval_timeout_s: float | None = None


class SessionManager:
    def __init__(self, config: ManagerConfig):
        self.config = config
        self._sessions: dict[str, SessionRuntime] = {}
        self._lock = threading.Lock()

    def create_session(self, overrides: dict | None = None) -> SessionRuntime:
        overrides = overrides or {}
        unknown = set(overrides) - {"max_steps", "session_id"}
        if unknown:
            raise ValueError(f"unknown overrides: {', '.join(sorted(unknown))}")
        max_steps = int(overrides.get("max_steps", self.config.max_steps))
        if max_steps < 1:
            raise ValueError("max_steps must be positive")
        session_id = str(overrides.get("session_id") or uuid.uuid4().hex[:12])
        with self._lock:
            if session_id in self._sessions:
                raise ValueError(f"session {session_id} already exists")
            runtime = SessionRuntime(
                session_id=session_id,
                session_dir=Path(self.config.session_root) / session_id,
                backend=self.config.backend_factory(),
                config=self.config.loop_config_factory(),
                max_steps=max_steps,
                approval_timeout_s=self.config.approval_timeout_s,
            )
            self._sessions[session_id] = runtime
        return runtime

    def get(self, session_id: str) -> SessionRuntime:
        with self._lock:
            runtime = self._sessions.get(session_id)
        if runtime is None:
            raise UnknownSession(session_id)
        return runtime

    def list_summaries(self) -> list[SessionSummary]:
        with self._lock:
            runtimes = list(self._sessions.values())
        return [r.summary() for r in sorted(runtimes, key=lambda r: r.created_at)]

    def close_session(self, session_id: str) -> None:
        self.get(session_id).close()

    def shutdown(self) -> None:
        with self._lock:
            runtimes = list(self._sessions.values())
        for runtime in runtimes:
            runtime.close()
