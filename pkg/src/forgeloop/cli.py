"""Operator entry points: repl, run, serve, replay, record."""
from __future__ import annotations

import argparse
import json
import shutil
import sys
import tempfile
import uuid
from pathlib import Path

from .config import ConfigError, RuntimeConfig, api_key, load_config
from .execution import CommandExecutor, CommandRequest, Policy
from .gateway import LiveEndpoint, dump_script, load_script, parse_script
from .loop import LoopConfig, SessionLoop, StepRecord
from .manager import ManagerConfig, SessionManager
from .prompts import PromptTemplateSet
from .scenarios import ScenarioInfrastructureError, load_scenario, run_scenario
from .session import PauseReason, SessionState, SessionStatus
from .transcript import TRANSCRIPT_FILENAME, TranscriptWriter, content_hash, load


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forgeloop", description=__doc__)
    parser.add_argument("--config", help="config file path (JSON); env FORGELOOP_CONFIG")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--endpoint", help="chat endpoint base URL")
    common.add_argument("--model", help="model id for live completions")
    common.add_argument("--max-steps", type=int, help="step bound per task")
    common.add_argument("--policy", help="policy file (JSON)")
    common.add_argument("--script", help="scripted model file; use instead of live endpoint")
    common.add_argument("--session-dir", help="session working directory")
    common.add_argument("--raw-capture", action="store_true", help="keep raw output bytes")

    sub = parser.add_subparsers(dest="command")
    repl = sub.add_parser("repl", parents=[common], help="interactive session")
    run = sub.add_parser("run", parents=[common], help="headless single task")
    run.add_argument("task", help="task text")
    serve = sub.add_parser("serve", parents=[common], help="host the console API")
    serve.add_argument("--port", type=int, help="console port")
    serve.add_argument("--bind", default="127.0.0.1", help="bind address (loopback by default)")
    serve.add_argument("--auth-token", help="required when binding non-loopback")
    serve.add_argument("--ui-dir", help="static directory for the browser console")
    replay = sub.add_parser("replay", parents=[common], help="replay a scenario or transcript")
    replay.add_argument("transcript", nargs="?", help="transcript file to re-execute")
    replay.add_argument("--scenario", help="packaged or ./scenarios/<name>.scenario")
    record = sub.add_parser("record", parents=[common], help="capture a live session as a script")
    record.add_argument("task", help="task text")
    record.add_argument("--out", required=True, help="script file to write")
    for p in (repl, run, serve, replay, record):
        p.set_defaults(func=COMMANDS[p.prog.split()[-1]])
    return parser


def _runtime_config(args) -> RuntimeConfig:
    flags = {
        "endpoint_url": getattr(args, "endpoint", None),
        "model_id": getattr(args, "model", None),
        "max_steps": getattr(args, "max_steps", None),
        "console_port": getattr(args, "port", None),
    }
    policy_path = getattr(args, "policy", None)
    if policy_path:
        raw = json.loads(Path(policy_path).read_text(encoding="utf-8"))
        flags["policy"] = Policy.from_dict(raw)
    return load_config(flags=flags, config_path=args.config)


def _loop_config(config: RuntimeConfig) -> LoopConfig:
    templates = PromptTemplateSet.load(
        Path(config.templates_dir) if config.templates_dir else None
    )
    return LoopConfig(
        parser=config.parser,
        templates=templates,
        policy=config.policy,
        model_id=config.model_id,
        history_window=config.history_window,
    )


def _backend(config: RuntimeConfig, args):
    script = getattr(args, "script", None)
    if script:
        return load_script(Path(script))
    key = api_key()
    if not key:
        raise ConfigError(
            "live mode needs FORGELOOP_API_KEY (or pass --script for a scripted backend)"
        )
    return LiveEndpoint(base_url=config.endpoint_url, api_key=key)


def _session_dir(config: RuntimeConfig, args, kind: str) -> Path:
    explicit = getattr(args, "session_dir", None)
    if explicit:
        return Path(explicit)
    return Path(config.session_root) / f"{kind}-{uuid.uuid4().hex[:8]}"


def _executor(args, session_dir: Path) -> CommandExecutor:
    raw_dir = session_dir / "raw" if getattr(args, "raw_capture", False) else None
    return CommandExecutor(raw_capture_dir=raw_dir)


def _print_step(record: StepRecord) -> None:
    print(f"-- step {record.step_index}: {len(record.staged)} staged, "
          f"{len(record.executions)} commands, outcome {record.outcome}")
    for execution in record.executions:
        status = execution.exit_status if execution.exit_status is not None else "-"
        print(f"   $ {execution.request.command}  [{execution.verdict.value}, exit {status}]")


def _make_loop(config: RuntimeConfig, args, session_dir: Path, approval=None) -> SessionLoop:
    session_dir.mkdir(parents=True, exist_ok=True)
    state = SessionState(
        session_id=session_dir.name, session_dir=session_dir, max_steps=config.max_steps
    )
    writer = TranscriptWriter(session_dir / TRANSCRIPT_FILENAME)
    return SessionLoop(
        state=state,
        backend=_backend(config, args),
        writer=writer,
        config=_loop_config(config),
        executor=_executor(args, session_dir),
        approval=approval,
    )


class _PromptApproval:
    def decide(self, request: CommandRequest) -> bool | None:
        try:
            answer = input(f"approve command? [{request.command}] y/N: ")
        except EOFError:
            return None
        return answer.strip().lower() in ("y", "yes")


def cmd_repl(args) -> int:
    config = _runtime_config(args)
    session_dir = _session_dir(config, args, "repl")
    loop = _make_loop(config, args, session_dir, approval=_PromptApproval())
    print(f"session {loop.state.session_id} in {session_dir}")
    while True:
        prompt = "task> " if loop.state.status is SessionStatus.AWAITING_TASK else "input> "
        try:
            text = input(prompt)
        except EOFError:
            print()
            return 0
        if not text.strip():
            continue
        loop.submit_task(text)
        for record in loop.run_until_pause():
            _print_step(record)
        status = loop.state.status
        if status is SessionStatus.FAILED:
            print(f"session failed: {loop.state.failure_cause}")
        elif loop.state.pause_reason:
            print(f"paused: {loop.state.pause_reason.value}")


def cmd_run(args) -> int:
    config = _runtime_config(args)
    session_dir = _session_dir(config, args, "run")
    loop = _make_loop(config, args, session_dir)
    loop.submit_task(args.task)
    for record in loop.run_until_pause():
        _print_step(record)
    state = loop.state
    print(f"final: {state.status.value}"
          + (f" ({state.pause_reason.value})" if state.pause_reason else ""))
    if state.status is SessionStatus.FAILED:
        print(f"cause: {state.failure_cause}", file=sys.stderr)
        return 2
    if state.pause_reason is PauseReason.MAX_STEPS_REACHED:
        return 3
    return 0


def cmd_record(args) -> int:
    config = _runtime_config(args)
    session_dir = _session_dir(config, args, "record")
    loop = _make_loop(config, args, session_dir, approval=_PromptApproval())
    loop.submit_task(args.task)
    for record in loop.run_until_pause():
        _print_step(record)
    loaded = load(session_dir / TRANSCRIPT_FILENAME)
    responses = [e.payload["text"] for e in loaded.events if e.kind == "model_responded"]
    Path(args.out).write_text(dump_script(responses), encoding="utf-8")
    print(f"wrote {len(responses)}-entry script to {args.out}")
    return 0 if loop.state.status is not SessionStatus.FAILED else 2


def _replay_transcript(args, config: RuntimeConfig) -> int:
    source = Path(args.transcript)
    if not source.is_file():
        print(f"transcript not found: {source}", file=sys.stderr)
        return 2
    original = load(source)
    if original.corruption:
        print(f"warning: {original.corruption}", file=sys.stderr)
    responses = [e.payload["text"] for e in original.events if e.kind == "model_responded"]
    inputs = [
        e.payload["task"] if e.kind == "task_submitted" else e.payload["text"]
        for e in original.events
        if e.kind in ("task_submitted", "resumed")
    ]
    if not inputs:
        print("transcript contains no operator input; nothing to replay", file=sys.stderr)
        return 2
    first = next(e for e in original.events if e.kind == "task_submitted")
    work = Path(tempfile.mkdtemp(prefix="forgeloop-replay-"))
    session_dir = work / first.payload.get("session_id", "replay")
    state = SessionState(
        session_id=first.payload.get("session_id", "replay"),
        session_dir=session_dir,
        max_steps=first.payload.get("max_steps", config.max_steps),
    )
    session_dir.mkdir(parents=True)
    loop = SessionLoop(
        state=state,
        backend=parse_script(dump_script(responses)),
        writer=TranscriptWriter(session_dir / TRANSCRIPT_FILENAME),
        config=_loop_config(config),
    )
    loop.submit_task(inputs[0])
    loop.run_until_pause()
    for text in inputs[1:]:
        if loop.state.status not in (SessionStatus.AWAITING_HUMAN, SessionStatus.FAILED):
            break
        loop.submit_task(text)
        loop.run_until_pause()
    replayed = load(session_dir / TRANSCRIPT_FILENAME)
    original_hash = content_hash(original.events)
    replay_hash = content_hash(replayed.events)
    print(f"original {original_hash}")
    print(f"replayed {replay_hash}")
    shutil.rmtree(work, ignore_errors=True)
    if original_hash == replay_hash:
        print("deterministic replay: hashes match")
        return 0
    print("hashes diverge", file=sys.stderr)
    return 1


def cmd_replay(args) -> int:
    config = _runtime_config(args)
    if args.scenario:
        try:
            scenario = load_scenario(args.scenario)
            report = run_scenario(scenario, Path(config.session_root) / "replays")
        except ScenarioInfrastructureError as exc:
            print(f"infrastructure error: {exc}", file=sys.stderr)
            return 2
        for result in report.results:
            mark = "PASS" if result.passed else "FAIL"
            detail = f"  ({result.detail})" if result.detail else ""
            print(f"{mark}  {result.description}{detail}")
        print(f"transcript hash {report.transcript_hash}")
        return 0 if report.all_passed else 1
    if args.transcript:
        return _replay_transcript(args, config)
    print("replay needs --scenario <name> or a transcript path", file=sys.stderr)
    return 2


def cmd_serve(args) -> int:
    import uvicorn

    from .console import create_app

    config = _runtime_config(args)
    loopback = args.bind in ("127.0.0.1", "localhost", "::1")
    if not loopback and not args.auth_token:
        print("non-loopback bind requires --auth-token", file=sys.stderr)
        return 2
    script = getattr(args, "script", None)
    if script:
        script_path = Path(script)
        def backend_factory():
            return load_script(script_path)
    else:
        key = api_key()
        if not key:
            print("live mode needs FORGELOOP_API_KEY (or pass --script)", file=sys.stderr)
            return 2
        def backend_factory():
            return LiveEndpoint(base_url=config.endpoint_url, api_key=key)
    manager = SessionManager(
        ManagerConfig(
            session_root=Path(config.session_root),
            loop_config_factory=lambda: _loop_config(config),
            backend_factory=backend_factory,
            max_steps=config.max_steps,
        )
    )
    ui_dir = getattr(args, "ui_dir", None)
    static = Path(ui_dir) if ui_dir else Path.cwd() / "frontend" / "dist"
    app = create_app(manager, auth_token=args.auth_token, static_dir=static)
    port = config.console_port
    print(f"console at http://{args.bind}:{port}")
    try:
        uvicorn.run(app, host=args.bind, port=port, log_level="warning")
    except SystemExit as exc:  # uvicorn raises on bind failure
        if exc.code:
            print(f"cannot serve on port {port}", file=sys.stderr)
            return 2
    except KeyboardInterrupt:
        pass
    finally:
        print("transcripts flushed; bye")
    return 0


COMMANDS = {
    "repl": cmd_repl,
    "run": cmd_run,
    "serve": cmd_serve,
    "replay": cmd_replay,
    "record": cmd_record,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
