"""Gateway contract: scripted replay guards, live wire handling, backoff."""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from forgeloop.gateway import (
    AuthRejected,
    EndpointUnreachable,
    FinishReason,
    LiveEndpoint,
    MatchKind,
    ModelRequest,
    ScriptEntry,
    ScriptedModel,
    ScriptExhausted,
    ScriptMismatch,
    ScriptParseError,
    complete,
    dump_script,
    load_script,
)
from forgeloop.prompts import Message


def request_with(*contents: str) -> ModelRequest:
    return ModelRequest(messages=tuple(Message("user", c) for c in contents))


def test_any_entry_returns_text_and_position():
    model = ScriptedModel([ScriptEntry(MatchKind.ANY, None, "done.")])
    response = complete(request_with("anything"), model)
    assert response.text == "done."
    assert response.source == "scripted:0"
    assert response.finish_reason is FinishReason.STOP
    assert model.cursor == 1


def test_contains_entry_matches_probe():
    model = ScriptedModel([ScriptEntry(MatchKind.CONTAINS, "exit 0", "ok")])
    response = complete(request_with("command finished with exit 0"), model)
    assert response.text == "ok"


def test_contains_mismatch_is_fatal_and_does_not_advance():
    model = ScriptedModel([ScriptEntry(MatchKind.CONTAINS, "exit 0", "ok")])
    with pytest.raises(ScriptMismatch) as err:
        complete(request_with("no such marker"), model)
    assert err.value.expected == "exit 0"
    assert model.cursor == 0


def test_exhausted_script_raises_never_repeats():
    model = ScriptedModel([ScriptEntry(MatchKind.ANY, None, "once")])
    complete(request_with("a"), model)
    with pytest.raises(ScriptExhausted):
        complete(request_with("b"), model)


def test_replay_determinism_same_script_same_outputs():
    entries = [
        ScriptEntry(MatchKind.ANY, None, "first"),
        ScriptEntry(MatchKind.ANY, None, "second"),
    ]
    runs = []
    for _ in range(2):
        model = ScriptedModel(list(entries))
        runs.append([complete(request_with(str(i)), model).text for i in range(2)])
    assert runs[0] == runs[1] == ["first", "second"]


def test_load_script_empty_file(tmp_path):
    path = tmp_path / "empty.script"
    path.write_text("")
    assert load_script(path).entries == []


def test_load_script_entries_in_order(tmp_path):
    path = tmp_path / "case.script"
    path.write_text(
        "# four-entry script\n"
        "match: any\n"
        "response <<EOF\n"
        "resp one\nwith two lines\n"
        "EOF\n"
        "\n"
        "match: contains\n"
        "contains: exit 0\n"
        "response <<EOF\n"
        "resp two\n"
        "EOF\n"
        "match: any\n"
        "response <<EOF\n"
        "EOF\n"
        "match: any\n"
        "response <<DONE\n"
        "contains EOF in body\nEOF\n"
        "DONE\n"
    )
    model = load_script(path)
    assert len(model.entries) == 4
    assert model.cursor == 0
    assert model.entries[0].response_text == "resp one\nwith two lines"
    assert model.entries[1].contains == "exit 0"
    assert model.entries[2].response_text == ""
    assert "EOF" in model.entries[3].response_text


def test_load_script_malformed_reports_line(tmp_path):
    path = tmp_path / "bad.script"
    path.write_text("match: any\nresponse <<EOF\nnever terminated\n")
    with pytest.raises(ScriptParseError) as err:
        load_script(path)
    assert err.value.line == 4

    path.write_text("match: sometimes\nresponse <<EOF\nEOF\n")
    with pytest.raises(ScriptParseError) as err:
        load_script(path)
    assert err.value.line == 1


def test_dump_script_round_trips(tmp_path):
    responses = ["first\n```python\nx=1\n```", "END_RESPONSE hazard\nEND_RESPONSE", "last"]
    path = tmp_path / "dumped.script"
    path.write_text(dump_script(responses))
    model = load_script(path)
    assert [e.response_text for e in model.entries] == responses


class _StubHandler(BaseHTTPRequestHandler):
    behavior: list = []  # (status, body_dict|None) per request, last repeats
    seen: list = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).seen.append((dict(self.headers), body))
        idx = min(len(type(self).seen) - 1, len(type(self).behavior) - 1)
        status, payload = type(self).behavior[idx]
        data = json.dumps(payload or {}).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.behavior = []
    _StubHandler.seen = []
    yield f"http://127.0.0.1:{server.server_address[1]}", _StubHandler
    server.shutdown()


def ok_payload(text: str, reason: str = "stop") -> dict:
    return {"choices": [{"message": {"content": text}, "finish_reason": reason}]}


def test_live_success_round_trip(stub_server):
    url, handler = stub_server
    handler.behavior = [(200, ok_payload("hello from model"))]
    endpoint = LiveEndpoint(base_url=url, api_key="sk-test")
    response = endpoint.complete(
        ModelRequest(messages=(Message("user", "hi"),), model_id="m1", temperature=0.5)
    )
    assert response.text == "hello from model"
    assert response.source == "live"
    headers, body = handler.seen[0]
    assert headers["Authorization"] == "Bearer sk-test"
    assert body["model"] == "m1"
    assert body["temperature"] == 0.5
    assert body["messages"] == [{"role": "user", "content": "hi"}]


def test_live_retries_on_5xx_then_succeeds(stub_server):
    url, handler = stub_server
    handler.behavior = [(500, None), (429, None), (200, ok_payload("eventually"))]
    delays = []
    endpoint = LiveEndpoint(base_url=url, api_key="k", sleeper=delays.append)
    response = endpoint.complete(request_with("x"))
    assert response.text == "eventually"
    assert len(handler.seen) == 3
    assert delays == sorted(delays) and len(set(delays)) == len(delays)


def test_live_auth_rejected_no_retry(stub_server):
    url, handler = stub_server
    handler.behavior = [(401, None)]
    endpoint = LiveEndpoint(base_url=url, api_key="bad", sleeper=lambda s: None)
    with pytest.raises(AuthRejected):
        endpoint.complete(request_with("x"))
    assert len(handler.seen) == 1


def test_live_unreachable_after_bounded_attempts(stub_server):
    url, handler = stub_server
    handler.behavior = [(503, None)]
    delays = []
    endpoint = LiveEndpoint(base_url=url, api_key="k", retry_limit=2, sleeper=delays.append)
    with pytest.raises(EndpointUnreachable):
        endpoint.complete(request_with("x"))
    assert len(handler.seen) == 3  # retry_limit + 1
    assert delays == sorted(delays) and len(set(delays)) == len(delays)


def test_live_connection_refused_unreachable():
    endpoint = LiveEndpoint(
        base_url="http://127.0.0.1:9", api_key="k", retry_limit=1, sleeper=lambda s: None
    )
    with pytest.raises(EndpointUnreachable):
        endpoint.complete(request_with("x"))


def test_max_response_chars_clips_and_flags():
    model = ScriptedModel([ScriptEntry(MatchKind.ANY, None, "abcdef")])
    request = ModelRequest(messages=(Message("user", "x"),), max_response_chars=3)
    response = complete(request, model)
    assert response.text == "abc"
    assert response.finish_reason is FinishReason.LENGTH


def test_credential_never_reaches_transcript_or_responses(stub_server, tmp_path):
    from forgeloop.loop import LoopConfig, SessionLoop
    from forgeloop.session import SessionState
    from forgeloop.transcript import TranscriptWriter

    url, handler = stub_server
    handler.behavior = [
        (200, ok_payload("first reply\n```sh\necho from-live\n```")),
        (200, ok_payload("All finished.")),
    ]
    secret = "sk-SECRET-scrub-me-123"
    session_dir = tmp_path / "live-session"
    session_dir.mkdir()
    loop = SessionLoop(
        state=SessionState(session_id="live", session_dir=session_dir, max_steps=5),
        backend=LiveEndpoint(base_url=url, api_key=secret),
        writer=TranscriptWriter(session_dir / "transcript.jsonl"),
        config=LoopConfig(),
    )
    loop.submit_task("run the live round trip")
    loop.run_until_pause()
    transcript_text = (session_dir / "transcript.jsonl").read_text()
    assert "from-live" in transcript_text  # the session really ran
    assert secret not in transcript_text
    assert secret not in repr(loop.state)
