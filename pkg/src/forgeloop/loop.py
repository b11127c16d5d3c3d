"""The stepping loop: query, parse, stage, execute, re-prompt.

One step is one model round trip. Code blocks land in the snippet store
before any command from the same response runs; commands execute strictly
in order; their outputs become the next prompt. A response with nothing
actionable, an explicit pause marker, or the step bound hands control back
to the operator. Every externally visible action is appended to the
transcript before the loop moves on, which is what makes replay and crash
recovery exact.
"""
from __future__ import annotations

import hashlib
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .execution import (
    ApprovalOracle,
    CommandExecutor,
    CommandRequest,
    ExecutionRecord,
    ExecutorEvents,
    Policy,
)
from .gateway import Backend, GatewayError, ModelRequest, ModelResponse
from .parsing import BlockKind, ParsedResponse, ParserConfig, parse_response, split_commands
from .prompts import (
    Message,
    PromptTemplateSet,
    render_empty,
    render_initial,
    render_resume,
    render_step,
)
from .session import (
    BlankTask,
    InvalidState,
    PauseReason,
    SessionState,
    SessionStatus,
)
from .snippets import StorageFailure, stage
from .transcript import TranscriptWriter

DEFAULT_HISTORY_WINDOW = 20

OUTCOME_CONTINUE = "continue"
OUTCOME_BY_REASON = {
    PauseReason.MARKER_REQUESTED: "pause_marker",
    PauseReason.NO_ACTIONABLE_OUTPUT: "pause_no_actionable",
}


class StepFailure(Exception):
    """The step hit an unrecoverable gateway/storage error; state is Failed."""


def default_env_facts(parser: ParserConfig, session_dir: Path) -> dict[str, str]:
    shell_tags = sorted(t for t, k in parser.tag_map.items() if k is BlockKind.SHELL)
    return {
        "os": platform.system().lower() or "unknown",
        "shell_tags": ", ".join(shell_tags),
        "snippet_path": "snippets/latest.py",
        "primary_shell": "cmd" if sys.platform == "win32" else "sh",
        "pause_marker": parser.pause_marker,
        "session_dir": str(session_dir),
    }


@dataclass
class LoopConfig:
    parser: ParserConfig = field(default_factory=ParserConfig)
    templates: PromptTemplateSet = field(default_factory=PromptTemplateSet.load)
    policy: Policy = field(default_factory=Policy)
    model_id: str = "scripted"
    temperature: float = 0.0
    history_window: int = DEFAULT_HISTORY_WINDOW
    env_facts: dict[str, str] | None = None


@dataclass
class StepRecord:
    step_index: int
    prompt_digest: str
    response: ModelResponse
    parsed: ParsedResponse
    staged: list = field(default_factory=list)
    executions: list[ExecutionRecord] = field(default_factory=list)
    outcome: str = OUTCOME_CONTINUE  # "continue" or a PauseReason value


class _TranscriptedExecution(ExecutorEvents):
    def __init__(self, writer: TranscriptWriter, register=None):
        self.writer = writer
        self.register = register

    def approval_requested(self, request: CommandRequest) -> None:
        if self.register is not None:
            self.register(request)
        self.writer.append(
            "approval_requested",
            {
                "step": request.step,
                "ordinal": request.ordinal,
                "exec_id": request.exec_id,
                "command": request.command,
            },
        )

    def approval_resolved(self, request: CommandRequest, decision: str) -> None:
        self.writer.append(
            "approval_resolved", {"exec_id": request.exec_id, "decision": decision}
        )

    def command_started(self, request: CommandRequest) -> None:
        self.writer.append(
            "command_started",
            {
                "step": request.step,
                "ordinal": request.ordinal,
                "exec_id": request.exec_id,
                "command": request.command,
                "shell_tag": request.shell_tag,
            },
        )

    def command_finished(self, record: ExecutionRecord) -> None:
        self.writer.append("command_finished", record.to_payload())


class SessionLoop:
    """Drives one session against one backend, appending to one transcript."""

    def __init__(
        self,
        state: SessionState,
        backend: Backend,
        writer: TranscriptWriter,
        config: LoopConfig | None = None,
        executor: CommandExecutor | None = None,
        approval: ApprovalOracle | None = None,
        register_pending_approval=None,
    ):
        self.state = state
        self.backend = backend
        self.writer = writer
        self.config = config or LoopConfig()
        self.executor = executor or CommandExecutor()
        self.approval = approval
        self.history: list[Message] = []
        self._pending_user: Message | None = None
        self._system: Message | None = None
        self._exec_events = _TranscriptedExecution(writer, register_pending_approval)

    # -- operator inputs ---------------------------------------------------

    def submit_task(self, text: str) -> SessionState:
        if self.state.status not in (
            SessionStatus.AWAITING_TASK,
            SessionStatus.AWAITING_HUMAN,
            SessionStatus.FAILED,
        ):
            raise InvalidState(f"cannot accept input while {self.state.status.value}")
        if not text.strip():
            raise BlankTask("input must be non-blank")
        env = self.config.env_facts or default_env_facts(
            self.config.parser, self.state.session_dir
        )
        if self.state.status is SessionStatus.AWAITING_TASK:
            system, user = render_initial(text, self.config.templates, env)
            self._system = system
            self._pending_user = user
            self.state = self.state.moved_to(
                SessionStatus.STEPPING, task=text, step_index=0
            )
            self.writer.append(
                "task_submitted",
                {
                    "task": text,
                    "session_id": self.state.session_id,
                    "max_steps": self.state.max_steps,
                },
            )
        else:
            if self._system is None:
                system, _ = render_initial(text, self.config.templates, env)
                self._system = system
            self._pending_user = render_resume(text, self.config.templates)
            self.state = self.state.moved_to(SessionStatus.STEPPING)
            self.writer.append("resumed", {"text": text})
        return self.state

    # -- one iteration -----------------------------------------------------

    def _messages(self) -> list[Message]:
        window = self.config.history_window
        recent = self.history[-window:] if window > 0 else []
        messages = [self._system] if self._system else []
        messages.extend(recent)
        if self._pending_user is not None:
            messages.append(self._pending_user)
        return messages

    def _fail(self, cause: str) -> None:
        self.state = self.state.moved_to(SessionStatus.FAILED, failure_cause=cause)
        self.writer.append("session_failed", {"cause": cause})

    def step(self) -> StepRecord:
        if self.state.status is not SessionStatus.STEPPING:
            raise InvalidState(f"cannot step while {self.state.status.value}")
        if self.state.step_index >= self.state.max_steps:
            raise InvalidState("step bound already reached")
        step_index = self.state.step_index
        messages = self._messages()
        wire = json.dumps([m.to_wire() for m in messages], sort_keys=True, ensure_ascii=False)
        digest = hashlib.sha256(wire.encode("utf-8")).hexdigest()
        self.writer.append(
            "model_queried",
            {"step": step_index, "prompt_digest": digest, "message_count": len(messages)},
        )
        request = ModelRequest(
            messages=tuple(messages),
            model_id=self.config.model_id,
            temperature=self.config.temperature,
        )
        try:
            response = self.backend.complete(request)
        except GatewayError as exc:
            self._fail(f"{exc.__class__.__name__}: {exc}")
            raise StepFailure(str(exc)) from exc
        self.writer.append(
            "model_responded",
            {
                "step": step_index,
                "text": response.text,
                "finish_reason": response.finish_reason.value,
                "source": response.source,
                "latency_ms": response.latency_ms,
            },
        )

        parsed = parse_response(response.text, self.config.parser)
        code_blocks = [
            (b, c) for b, c in parsed.blocks if c.kind is BlockKind.CODE
        ]
        command_batches = [
            (block, split_commands(block, cls.tag))
            for block, cls in parsed.blocks
            if cls.kind is BlockKind.SHELL
        ]
        planned_commands = sum(len(cmds) for _, cmds in command_batches)
        if parsed.human_input_requested:
            outcome = OUTCOME_BY_REASON[PauseReason.MARKER_REQUESTED]
        elif parsed.terminal:
            outcome = OUTCOME_BY_REASON[PauseReason.NO_ACTIONABLE_OUTPUT]
        else:
            outcome = OUTCOME_CONTINUE
        self.writer.append(
            "blocks_parsed",
            {
                "step": step_index,
                "blocks": [
                    {
                        "ordinal": b.ordinal,
                        "info_tag": b.info_tag,
                        "kind": c.kind.value,
                        "span": list(b.span),
                    }
                    for b, c in parsed.blocks
                ],
                "human_input_requested": parsed.human_input_requested,
                "terminal": parsed.terminal,
                "outcome": outcome,
                "planned_snippets": len(code_blocks),
                "planned_commands": planned_commands,
            },
        )

        # code reaches the workspace before any command from this response
        try:
            staged = stage(code_blocks, self.state.session_dir, step_index)
        except StorageFailure as exc:
            self._fail(f"StorageFailure: {exc}")
            raise StepFailure(str(exc)) from exc
        for snippet in staged:
            self.writer.append(
                "snippet_staged",
                {
                    "step": step_index,
                    "ordinal": snippet.source_ordinal,
                    "language_tag": snippet.language_tag,
                    "latest_path": snippet.latest_path.relative_to(self.state.session_dir).as_posix(),
                    "archive_path": snippet.archive_path.relative_to(self.state.session_dir).as_posix(),
                    "content_hash": snippet.content_hash,
                },
            )

        requests = []
        for block, commands in command_batches:
            for command in commands:
                requests.append(
                    CommandRequest(
                        command=command,
                        shell_tag=block.info_tag,
                        working_dir=self.state.session_dir,
                        step=step_index,
                        ordinal=len(requests),
                    )
                )
        executions = self.executor.execute_all(
            requests,
            self.config.policy,
            approval=self.approval,
            events=self._exec_events,
            confine_root=self.state.session_dir,
        )

        assistant = Message("assistant", response.text)
        if self._pending_user is not None:
            self.history.append(self._pending_user)
        self.history.append(assistant)
        if executions:
            self._pending_user = render_step(executions, self.config.templates)
        elif outcome == OUTCOME_CONTINUE:
            self._pending_user = render_empty(self.config.templates)
        else:
            self._pending_user = None

        self.state = self.state.moved_to(SessionStatus.STEPPING, step_index=step_index + 1)
        record = StepRecord(
            step_index=step_index,
            prompt_digest=digest,
            response=response,
            parsed=parsed,
            staged=staged,
            executions=executions,
            outcome=outcome,
        )
        if outcome != OUTCOME_CONTINUE:
            reason = (
                PauseReason.MARKER_REQUESTED
                if outcome == "pause_marker"
                else PauseReason.NO_ACTIONABLE_OUTPUT
            )
            self.writer.append("paused", {"step": step_index, "reason": reason.value})
            self.state = self.state.moved_to(
                SessionStatus.AWAITING_HUMAN, pause_reason=reason
            )
            record.outcome = reason.value
        return record

    # -- run to the next operator touchpoint --------------------------------

    def run_until_pause(self, step_budget: int | None = None) -> list[StepRecord]:
        records: list[StepRecord] = []
        while self.state.status is SessionStatus.STEPPING:
            if self.state.step_index >= self.state.max_steps:
                self.writer.append(
                    "paused",
                    {
                        "step": self.state.step_index,
                        "reason": PauseReason.MAX_STEPS_REACHED.value,
                    },
                )
                self.state = self.state.moved_to(
                    SessionStatus.AWAITING_HUMAN,
                    pause_reason=PauseReason.MAX_STEPS_REACHED,
                )
                break
            if step_budget is not None and len(records) >= step_budget:
                break
            try:
                records.append(self.step())
            except StepFailure:
                break
        return records
