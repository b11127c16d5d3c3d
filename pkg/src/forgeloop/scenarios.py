"""Hermetic, self-checking replays of complete agent workflows.

A scenario file packages everything one desk-scale run needs: the scripted
model responses, seeded workspace files, local stub web routes, the operator
inputs, and machine-checkable assertions over the resulting workspace and
transcript. No network beyond loopback, no credentials.

File format (line-oriented, heredocs for multi-line values)::

    name: case1
    max_steps: 20
    input: build me a viewer
    seed sample.txt <<END
    ...file content...
    END
    route /page text/html <<END
    ...response body...
    END
    script <<END
    ...model script, gateway format...
    END
    assert_exists viewfile.py
    assert_contains sample.txt <<END
    expected substring
    END
    assert_output python3 viewfile.py sample.txt <<END
    expected stdout, exactly
    END
    assert_ranking 4,1,6 python3 search.py corpus.txt "query"
    assert_status awaiting_human
    assert_pause_count marker_requested 1

When routes are present the harness starts a loopback HTTP service on an
ephemeral port and seeds ``service_url.txt`` with its base URL, so neither
the script nor the transcript ever contains the varying port. ``{{stub_url}}``
is also substituted into scripts, seeds, inputs, and assertions.
"""
from __future__ import annotations

import shutil
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Iterable
from urllib.parse import urlparse

from .execution import CommandExecutor, CommandRequest, Policy, Verdict
from .gateway import parse_script
from .loop import LoopConfig, SessionLoop
from .session import SessionState, SessionStatus
from .transcript import TRANSCRIPT_FILENAME, TranscriptWriter, content_hash, load

PACKAGED_SCENARIO_DIR = Path(__file__).parent / "scenarios"
SERVICE_URL_FILE = "service_url.txt"

#: hermeticity: common external fetchers are denied at the policy layer
SCENARIO_DENY_RULES = ["curl *", "wget *"]


class ScenarioInfrastructureError(Exception):
    """Setup failed (ports, seeding, parse) — distinct from assertion failures."""


class ScenarioParseError(ScenarioInfrastructureError):
    def __init__(self, line: int, cause: str):
        super().__init__(f"scenario line {line}: {cause}")
        self.line = line


@dataclass(frozen=True)
class StubRoute:
    path: str
    content_type: str
    body: str


@dataclass(frozen=True)
class ScenarioAssertion:
    kind: str  # exists | contains | output | status | ranking | pause_count
    path: str = ""
    command: str = ""
    expected: str = ""
    ids: tuple[int, ...] = ()
    reason: str = ""
    count: int = 0

    def describe(self) -> str:
        if self.kind == "exists":
            return f"file exists: {self.path}"
        if self.kind == "contains":
            return f"file {self.path} contains {self.expected!r}"
        if self.kind == "output":
            return f"output of {self.command!r}"
        if self.kind == "status":
            return f"session ended {self.expected}"
        if self.kind == "ranking":
            return f"ranking of {self.command!r} is {','.join(map(str, self.ids))}"
        return f"pause count {self.reason} == {self.count}"


@dataclass
class Scenario:
    name: str
    script_text: str
    inputs: list[str]
    seeds: list[tuple[str, str]] = field(default_factory=list)
    routes: list[StubRoute] = field(default_factory=list)
    assertions: list[ScenarioAssertion] = field(default_factory=list)
    max_steps: int = 30


@dataclass
class AssertionResult:
    description: str
    passed: bool
    detail: str = ""


@dataclass
class ScenarioReport:
    name: str
    results: list[AssertionResult]
    transcript_hash: str
    final_status: str
    pause_counts: dict[str, int]
    session_dir: Path
    steps: int

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)


def _read_heredoc(lines: list[str], i: int, token: str) -> tuple[str, int]:
    body: list[str] = []
    j = i
    while j < len(lines):
        if lines[j] == token:
            return "\n".join(body), j + 1
        body.append(lines[j])
        j += 1
    raise ScenarioParseError(len(lines), f"heredoc terminator {token!r} not found")


def parse_scenario(text: str) -> Scenario:
    lines = text.split("\n")
    name = ""
    max_steps = 30
    inputs: list[str] = []
    seeds: list[tuple[str, str]] = []
    routes: list[StubRoute] = []
    assertions: list[ScenarioAssertion] = []
    script_text: str | None = None

    i = 0
    while i < len(lines):
        line = lines[i].strip()
        lineno = i + 1
        if not line or line.startswith("#"):
            i += 1
            continue
        if line.startswith("name:"):
            name = line[len("name:"):].strip()
            i += 1
        elif line.startswith("max_steps:"):
            max_steps = int(line[len("max_steps:"):].strip())
            i += 1
        elif line.startswith("input:"):
            inputs.append(line[len("input:"):].strip())
            i += 1
        elif line.startswith("seed "):
            rest = line[len("seed "):]
            path, _, heredoc = rest.rpartition(" <<")
            if not path:
                raise ScenarioParseError(lineno, "seed needs: seed <path> <<TOKEN")
            body, i = _read_heredoc(lines, i + 1, heredoc.strip())
            seeds.append((path.strip(), body + "\n" if body else ""))
        elif line.startswith("route "):
            rest = line[len("route "):]
            head, _, heredoc = rest.rpartition(" <<")
            parts = head.split()
            if len(parts) != 2:
                raise ScenarioParseError(lineno, "route needs: route <path> <content-type> <<TOKEN")
            body, i = _read_heredoc(lines, i + 1, heredoc.strip())
            routes.append(StubRoute(parts[0], parts[1], body + "\n" if body else ""))
        elif line.startswith("script <<"):
            token = line[len("script <<"):].strip()
            script_text, i = _read_heredoc(lines, i + 1, token)
        elif line.startswith("assert_exists "):
            assertions.append(ScenarioAssertion("exists", path=line[len("assert_exists "):].strip()))
            i += 1
        elif line.startswith("assert_contains "):
            rest = line[len("assert_contains "):]
            path, _, heredoc = rest.rpartition(" <<")
            body, i = _read_heredoc(lines, i + 1, heredoc.strip())
            assertions.append(ScenarioAssertion("contains", path=path.strip(), expected=body))
        elif line.startswith("assert_output "):
            rest = line[len("assert_output "):]
            command, _, heredoc = rest.rpartition(" <<")
            body, i = _read_heredoc(lines, i + 1, heredoc.strip())
            assertions.append(
                ScenarioAssertion(
                    "output", command=command.strip(), expected=body + "\n" if body else ""
                )
            )
        elif line.startswith("assert_status "):
            assertions.append(
                ScenarioAssertion("status", expected=line[len("assert_status "):].strip())
            )
            i += 1
        elif line.startswith("assert_ranking "):
            rest = line[len("assert_ranking "):].split(None, 1)
            if len(rest) != 2:
                raise ScenarioParseError(lineno, "assert_ranking needs: <ids> <command>")
            try:
                ids = tuple(int(x) for x in rest[0].split(","))
            except ValueError:
                raise ScenarioParseError(lineno, f"bad id list {rest[0]!r}") from None
            assertions.append(ScenarioAssertion("ranking", ids=ids, command=rest[1]))
            i += 1
        elif line.startswith("assert_pause_count "):
            parts = line[len("assert_pause_count "):].split()
            if len(parts) != 2:
                raise ScenarioParseError(lineno, "assert_pause_count needs: <reason> <n>")
            assertions.append(
                ScenarioAssertion("pause_count", reason=parts[0], count=int(parts[1]))
            )
            i += 1
        else:
            raise ScenarioParseError(lineno, f"unknown directive {line!r}")

    if not name:
        raise ScenarioParseError(1, "scenario has no name")
    if script_text is None:
        raise ScenarioParseError(1, "scenario has no script")
    if not inputs:
        raise ScenarioParseError(1, "scenario has no operator input")
    return Scenario(
        name=name,
        script_text=script_text,
        inputs=inputs,
        seeds=seeds,
        routes=routes,
        assertions=assertions,
        max_steps=max_steps,
    )


def scenario_search_dirs(extra: Iterable[Path] = ()) -> list[Path]:
    return [*map(Path, extra), Path.cwd() / "scenarios", PACKAGED_SCENARIO_DIR]


def load_scenario(name_or_path: str, extra_dirs: Iterable[Path] = ()) -> Scenario:
    candidate = Path(name_or_path)
    if candidate.is_file():
        return parse_scenario(candidate.read_text(encoding="utf-8"))
    for directory in scenario_search_dirs(extra_dirs):
        path = directory / f"{name_or_path}.scenario"
        if path.is_file():
            return parse_scenario(path.read_text(encoding="utf-8"))
    raise ScenarioInfrastructureError(f"scenario {name_or_path!r} not found")


class StubWebService:
    """Loopback HTTP server answering only the configured GET routes."""

    def __init__(self, routes: list[StubRoute]):
        table = {r.path: r for r in routes}

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                route = table.get(urlparse(self.path).path)
                if route is None:
                    self.send_error(404)
                    return
                data = route.body.encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", route.content_type)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        try:
            self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        except OSError as exc:
            raise ScenarioInfrastructureError(f"cannot bind stub service: {exc}") from exc
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self._server.server_address[1]}"

    def start(self) -> str:
        self._thread.start()
        return self.base_url

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


def _sub(text: str, stub_url: str | None) -> str:
    return text.replace("{{stub_url}}", stub_url) if stub_url else text


def _run_check_command(command: str, session_dir: Path) -> tuple[int | None, str, str]:
    executor = CommandExecutor()
    record = executor.execute(
        CommandRequest(command, "sh", session_dir, step=0, ordinal=0),
        Policy(timeout_ms=20_000, max_output_bytes=262_144),
    )
    return record.exit_status, record.stdout, record.stderr


def _check(assertion: ScenarioAssertion, session_dir: Path, final_status: str,
           pause_counts: dict[str, int]) -> AssertionResult:
    description = assertion.describe()
    if assertion.kind == "exists":
        ok = (session_dir / assertion.path).is_file()
        return AssertionResult(description, ok, "" if ok else "missing")
    if assertion.kind == "contains":
        target = session_dir / assertion.path
        if not target.is_file():
            return AssertionResult(description, False, "file missing")
        ok = assertion.expected in target.read_text(encoding="utf-8")
        return AssertionResult(description, ok, "" if ok else "substring absent")
    if assertion.kind == "output":
        _, stdout, stderr = _run_check_command(assertion.command, session_dir)
        ok = stdout == assertion.expected
        detail = "" if ok else f"got {stdout!r} (stderr {stderr!r})"
        return AssertionResult(description, ok, detail)
    if assertion.kind == "ranking":
        _, stdout, stderr = _run_check_command(assertion.command, session_dir)
        try:
            got = tuple(int(line.split()[0]) for line in stdout.splitlines() if line.strip())
        except (ValueError, IndexError):
            return AssertionResult(description, False, f"unparseable output {stdout!r}")
        ok = got == assertion.ids
        return AssertionResult(description, ok, "" if ok else f"got {got} (stderr {stderr!r})")
    if assertion.kind == "status":
        ok = final_status == assertion.expected
        return AssertionResult(description, ok, "" if ok else f"got {final_status}")
    if assertion.kind == "pause_count":
        got = pause_counts.get(assertion.reason, 0)
        ok = got == assertion.count
        return AssertionResult(description, ok, "" if ok else f"got {got}")
    return AssertionResult(description, False, f"unknown assertion kind {assertion.kind}")


def run_scenario(scenario: Scenario, work_root: Path) -> ScenarioReport:
    """Seed, replay to completion, evaluate every assertion, report.

    The session directory is left in place as evidence; the caller owns it.
    """
    session_dir = Path(work_root) / scenario.name
    if session_dir.exists():
        shutil.rmtree(session_dir)
    try:
        session_dir.mkdir(parents=True)
    except OSError as exc:
        raise ScenarioInfrastructureError(f"cannot create session dir: {exc}") from exc

    stub = StubWebService(scenario.routes) if scenario.routes else None
    stub_url = stub.start() if stub else None
    try:
        try:
            for rel_path, body in scenario.seeds:
                target = session_dir / rel_path
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(_sub(body, stub_url), encoding="utf-8")
            if stub_url:
                (session_dir / SERVICE_URL_FILE).write_text(stub_url + "\n", encoding="utf-8")
        except OSError as exc:
            raise ScenarioInfrastructureError(f"cannot seed files: {exc}") from exc

        model = parse_script(_sub(scenario.script_text, stub_url))
        state = SessionState(
            session_id=scenario.name, session_dir=session_dir, max_steps=scenario.max_steps
        )
        writer = TranscriptWriter(session_dir / TRANSCRIPT_FILENAME)
        config = LoopConfig(policy=Policy(deny=list(SCENARIO_DENY_RULES)))
        loop = SessionLoop(state=state, backend=model, writer=writer, config=config)

        steps = 0
        inputs = [_sub(text, stub_url) for text in scenario.inputs]
        loop.submit_task(inputs[0])
        steps += len(loop.run_until_pause())
        for text in inputs[1:]:
            if loop.state.status is not SessionStatus.AWAITING_HUMAN:
                break
            loop.submit_task(text)
            steps += len(loop.run_until_pause())

        loaded = load(session_dir / TRANSCRIPT_FILENAME, session_id=scenario.name)
        pause_counts: dict[str, int] = {}
        for event in loaded.events:
            if event.kind == "paused":
                reason = event.payload["reason"]
                pause_counts[reason] = pause_counts.get(reason, 0) + 1
        final_status = loop.state.status.value

        results = [
            _check(a, session_dir, final_status, pause_counts) for a in scenario.assertions
        ]
        return ScenarioReport(
            name=scenario.name,
            results=results,
            transcript_hash=content_hash(loaded.events),
            final_status=final_status,
            pause_counts=pause_counts,
            session_dir=session_dir,
            steps=steps,
        )
    finally:
        if stub:
            stub.stop()
