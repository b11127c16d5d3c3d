"""Policied, sequential execution of agent terminal commands.

Commands run one at a time, each under the shell named by its block tag,
with a wall-clock timeout, per-stream output caps, and a rule layer that can
deny or hold a command for operator approval before any process exists.
A non-zero exit status is data for the agent, never an error here; the only
hard failures are recorded on the ExecutionRecord, so one pathological
command can never take down the run.
"""
from __future__ import annotations

import fnmatch
import os
import re
import shutil
import signal
import subprocess
import sys
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol

DEFAULT_TIMEOUT_MS = 30_000
DEFAULT_MAX_OUTPUT_BYTES = 16_384

REGEX_RULE_PREFIX = "re:"


class MalformedRule(Exception):
    def __init__(self, pattern: str, cause: str):
        super().__init__(f"bad policy rule {pattern!r}: {cause}")
        self.pattern = pattern


class PolicyMode(Enum):
    AUTO_RUN = "auto_run"
    APPROVE_ALL = "approve_all"
    RULES_ONLY = "rules_only"


class _Rule:
    """One deny/allow pattern: glob by default, regex with a ``re:`` prefix."""

    def __init__(self, pattern: str):
        self.pattern = pattern
        if pattern.startswith(REGEX_RULE_PREFIX):
            try:
                self._regex = re.compile(pattern[len(REGEX_RULE_PREFIX):])
            except re.error as exc:
                raise MalformedRule(pattern, str(exc)) from exc
        else:
            self._regex = re.compile(fnmatch.translate(pattern))

    def matches(self, command: str) -> bool:
        return self._regex.match(command) is not None


@dataclass
class Policy:
    mode: PolicyMode = PolicyMode.AUTO_RUN
    deny: list[str] = field(default_factory=list)
    allow: list[str] = field(default_factory=list)
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_output_bytes: int = DEFAULT_MAX_OUTPUT_BYTES
    confine_working_dir: bool = False

    def __post_init__(self):
        # malformed patterns surface here, never during evaluation
        self._deny_rules = [_Rule(p) for p in self.deny]
        self._allow_rules = [_Rule(p) for p in self.allow]

    @classmethod
    def from_dict(cls, raw: dict) -> "Policy":
        known = {"mode", "deny", "allow", "timeout_ms", "max_output_bytes", "confine_working_dir"}
        unknown = set(raw) - known
        if unknown:
            raise MalformedRule(", ".join(sorted(unknown)), "unknown policy key")
        mode = raw.get("mode", PolicyMode.AUTO_RUN.value)
        try:
            parsed_mode = PolicyMode(mode)
        except ValueError as exc:
            raise MalformedRule(str(mode), "unknown mode") from exc
        return cls(
            mode=parsed_mode,
            deny=list(raw.get("deny", [])),
            allow=list(raw.get("allow", [])),
            timeout_ms=int(raw.get("timeout_ms", DEFAULT_TIMEOUT_MS)),
            max_output_bytes=int(raw.get("max_output_bytes", DEFAULT_MAX_OUTPUT_BYTES)),
            confine_working_dir=bool(raw.get("confine_working_dir", False)),
        )

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "deny": list(self.deny),
            "allow": list(self.allow),
            "timeout_ms": self.timeout_ms,
            "max_output_bytes": self.max_output_bytes,
            "confine_working_dir": self.confine_working_dir,
        }


class DecisionKind(Enum):
    ALLOW = "allow"
    DENY = "deny"
    NEEDS_APPROVAL = "needs_approval"


@dataclass(frozen=True)
class PolicyDecision:
    kind: DecisionKind
    rule_id: str | None = None


def evaluate_policy(command: str, policy: Policy) -> PolicyDecision:
    """Deny rules first, then allow rules, then the mode's default."""
    for rule in policy._deny_rules:
        if rule.matches(command):
            return PolicyDecision(DecisionKind.DENY, rule.pattern)
    for rule in policy._allow_rules:
        if rule.matches(command):
            return PolicyDecision(DecisionKind.ALLOW, rule.pattern)
    if policy.mode is PolicyMode.AUTO_RUN:
        return PolicyDecision(DecisionKind.ALLOW)
    if policy.mode is PolicyMode.APPROVE_ALL:
        return PolicyDecision(DecisionKind.NEEDS_APPROVAL)
    return PolicyDecision(DecisionKind.DENY, "default")


@dataclass(frozen=True)
class CommandRequest:
    command: str
    shell_tag: str
    working_dir: Path
    step: int
    ordinal: int

    @property
    def exec_id(self) -> str:
        return f"{self.step}-{self.ordinal}"


class Verdict(Enum):
    RAN = "ran"
    DENIED = "denied"
    NEEDS_APPROVAL_TIMED_OUT = "needs_approval_timed_out"
    TIMED_OUT = "timed_out"
    SPAWN_FAILED = "spawn_failed"


@dataclass(frozen=True)
class ExecutionRecord:
    request: CommandRequest
    verdict: Verdict
    exit_status: int | None = None
    stdout: str = ""
    stderr: str = ""
    duration_ms: int = 0
    stdout_truncated: bool = False
    stderr_truncated: bool = False
    rule_id: str | None = None
    spawn_error: str | None = None

    def to_payload(self) -> dict:
        return {
            "step": self.request.step,
            "ordinal": self.request.ordinal,
            "exec_id": self.request.exec_id,
            "command": self.request.command,
            "shell_tag": self.request.shell_tag,
            "verdict": self.verdict.value,
            "exit_status": self.exit_status,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "duration_ms": self.duration_ms,
            "stdout_truncated": self.stdout_truncated,
            "stderr_truncated": self.stderr_truncated,
            "rule_id": self.rule_id,
            "spawn_error": self.spawn_error,
        }


class ApprovalOracle(Protocol):
    """Resolves a held command: True approves, False denies, None times out."""

    def decide(self, request: CommandRequest) -> bool | None: ...


class AutoApprove:
    def decide(self, request: CommandRequest) -> bool | None:
        return True


class AutoDeny:
    def decide(self, request: CommandRequest) -> bool | None:
        return False


class ScriptedApprovals:
    """Replays a fixed decision sequence; exhaustion denies."""

    def __init__(self, decisions: list[bool | None]):
        self.decisions = list(decisions)
        self.cursor = 0

    def decide(self, request: CommandRequest) -> bool | None:
        if self.cursor >= len(self.decisions):
            return False
        decision = self.decisions[self.cursor]
        self.cursor += 1
        return decision


class ExecutorEvents:
    """Override points for transcript wiring; the defaults do nothing."""

    def approval_requested(self, request: CommandRequest) -> None: ...

    def approval_resolved(self, request: CommandRequest, decision: str) -> None: ...

    def command_started(self, request: CommandRequest) -> None: ...

    def command_finished(self, record: ExecutionRecord) -> None: ...


def default_shell_map() -> dict[str, list[str]]:
    mapping: dict[str, list[str]] = {}
    if sys.platform == "win32":
        mapping["cmd"] = ["cmd", "/c"]
        mapping["powershell"] = ["powershell", "-NoProfile", "-Command"]
    for tag, binary in (("bash", "bash"), ("sh", "sh"), ("shell", "sh")):
        if shutil.which(binary):
            mapping[tag] = [binary, "-c"]
    return mapping


def _truncate(raw: bytes, cap: int) -> tuple[str, bool]:
    truncated = len(raw) > cap
    text = raw[:cap].decode("utf-8", errors="replace")
    return text.replace("\r\n", "\n").replace("\r", "\n"), truncated


def _within(path: Path, root: Path) -> bool:
    try:
        path.resolve().relative_to(root.resolve())
        return True
    except ValueError:
        return False


class CommandExecutor:
    """Runs one command at a time under a Policy.

    ``on_spawn`` fires with the argv immediately before a process is created;
    a denied or approval-timed-out command never reaches it. ``raw_capture_dir``
    keeps unmodified stream bytes beside the normalized record.
    """

    def __init__(
        self,
        shell_map: dict[str, list[str]] | None = None,
        on_spawn: Callable[[list[str]], None] | None = None,
        raw_capture_dir: Path | None = None,
    ):
        self.shell_map = shell_map if shell_map is not None else default_shell_map()
        self.on_spawn = on_spawn
        self.raw_capture_dir = Path(raw_capture_dir) if raw_capture_dir else None
        self.spawn_count = 0

    def execute(
        self,
        request: CommandRequest,
        policy: Policy,
        approval: ApprovalOracle | None = None,
        events: ExecutorEvents | None = None,
        confine_root: Path | None = None,
    ) -> ExecutionRecord:
        events = events or ExecutorEvents()
        record = self._decide_and_run(request, policy, approval, events, confine_root)
        events.command_finished(record)
        return record

    def _decide_and_run(self, request, policy, approval, events, confine_root) -> ExecutionRecord:
        if policy.confine_working_dir and confine_root is not None:
            if not _within(Path(request.working_dir), Path(confine_root)):
                events.command_started(request)
                return ExecutionRecord(
                    request, Verdict.DENIED, rule_id="working_dir_confinement"
                )
        decision = evaluate_policy(request.command, policy)
        if decision.kind is DecisionKind.DENY:
            events.command_started(request)
            return ExecutionRecord(request, Verdict.DENIED, rule_id=decision.rule_id)
        if decision.kind is DecisionKind.NEEDS_APPROVAL:
            events.approval_requested(request)
            granted = approval.decide(request) if approval is not None else None
            if granted is None:
                events.approval_resolved(request, "timed_out")
                events.command_started(request)
                return ExecutionRecord(request, Verdict.NEEDS_APPROVAL_TIMED_OUT)
            events.approval_resolved(request, "approved" if granted else "denied")
            if not granted:
                events.command_started(request)
                return ExecutionRecord(request, Verdict.DENIED, rule_id="approval")
        events.command_started(request)
        return self._spawn(request, policy)

    def _spawn(self, request: CommandRequest, policy: Policy) -> ExecutionRecord:
        argv_prefix = self.shell_map.get(request.shell_tag)
        if argv_prefix is None:
            return ExecutionRecord(
                request,
                Verdict.SPAWN_FAILED,
                spawn_error=f"no shell configured for tag {request.shell_tag!r}",
            )
        argv = argv_prefix + [request.command]
        if self.on_spawn:
            self.on_spawn(argv)
        self.spawn_count += 1
        start = time.monotonic()
        try:
            proc = subprocess.Popen(
                argv,
                cwd=request.working_dir,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                stdin=subprocess.DEVNULL,
                start_new_session=(os.name == "posix"),
            )
        except OSError as exc:
            return ExecutionRecord(request, Verdict.SPAWN_FAILED, spawn_error=str(exc))

        timed_out = False
        try:
            out, err = proc.communicate(timeout=policy.timeout_ms / 1000.0)
        except subprocess.TimeoutExpired:
            timed_out = True
            self._kill_tree(proc)
            out, err = proc.communicate()
        duration_ms = int((time.monotonic() - start) * 1000)

        self._keep_raw(request, out or b"", err or b"")
        stdout, out_trunc = _truncate(out or b"", policy.max_output_bytes)
        stderr, err_trunc = _truncate(err or b"", policy.max_output_bytes)
        if timed_out:
            return ExecutionRecord(
                request,
                Verdict.TIMED_OUT,
                stdout=stdout,
                stderr=stderr,
                duration_ms=duration_ms,
                stdout_truncated=out_trunc,
                stderr_truncated=err_trunc,
            )
        return ExecutionRecord(
            request,
            Verdict.RAN,
            exit_status=proc.returncode,
            stdout=stdout,
            stderr=stderr,
            duration_ms=duration_ms,
            stdout_truncated=out_trunc,
            stderr_truncated=err_trunc,
        )

    @staticmethod
    def _kill_tree(proc: subprocess.Popen) -> None:
        if os.name == "posix":
            try:
                os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                pass
        else:
            proc.kill()

    def _keep_raw(self, request: CommandRequest, out: bytes, err: bytes) -> None:
        if self.raw_capture_dir is None:
            return
        self.raw_capture_dir.mkdir(parents=True, exist_ok=True)
        base = f"step{request.step}_cmd{request.ordinal}"
        (self.raw_capture_dir / f"{base}.out").write_bytes(out)
        (self.raw_capture_dir / f"{base}.err").write_bytes(err)

    def execute_all(
        self,
        requests: list[CommandRequest],
        policy: Policy,
        approval: ApprovalOracle | None = None,
        events: ExecutorEvents | None = None,
        confine_root: Path | None = None,
    ) -> list[ExecutionRecord]:
        """Strictly sequential; later commands run even when earlier ones fail."""
        return [
            self.execute(request, policy, approval, events, confine_root)
            for request in requests
        ]
