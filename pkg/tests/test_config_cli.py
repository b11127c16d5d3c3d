"""Config precedence matrix and CLI exit-code contract."""
from __future__ import annotations

import json
from pathlib import Path

import pytest

from forgeloop.cli import main
from forgeloop.config import ConfigError, load_config
from forgeloop.execution import PolicyMode
from forgeloop.transcript import load


def test_defaults_when_nothing_given():
    config = load_config(flags={}, env={})
    assert config.endpoint_url.startswith("https://")
    assert config.max_steps == 30
    assert config.history_window == 20
    assert config.console_port == 7466
    assert config.policy.mode is PolicyMode.AUTO_RUN


def test_precedence_flag_over_env_over_file(tmp_path):
    config_file = tmp_path / "cfg.json"
    config_file.write_text(json.dumps({"max_steps": 5, "model_id": "file-model"}))
    env = {"FORGELOOP_MAX_STEPS": "7", "FORGELOOP_MODEL_ID": "env-model"}

    file_only = load_config(flags={}, env={}, config_path=config_file)
    assert (file_only.max_steps, file_only.model_id) == (5, "file-model")

    env_over_file = load_config(flags={}, env=env, config_path=config_file)
    assert (env_over_file.max_steps, env_over_file.model_id) == (7, "env-model")

    flag_over_all = load_config(
        flags={"max_steps": 9, "model_id": "flag-model"}, env=env, config_path=config_file
    )
    assert (flag_over_all.max_steps, flag_over_all.model_id) == (9, "flag-model")


def test_config_file_via_env_var(tmp_path):
    config_file = tmp_path / "cfg.json"
    config_file.write_text(json.dumps({"console_port": 9911}))
    config = load_config(flags={}, env={"FORGELOOP_CONFIG": str(config_file)})
    assert config.console_port == 9911


def test_embedded_policy_parsed(tmp_path):
    config_file = tmp_path / "cfg.json"
    config_file.write_text(json.dumps({"policy": {"mode": "rules_only", "deny": ["x*"]}}))
    config = load_config(flags={}, env={}, config_path=config_file)
    assert config.policy.mode is PolicyMode.RULES_ONLY
    assert config.policy.deny == ["x*"]


def test_unknown_key_and_bad_values_rejected(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"maxsteps": 3}))
    with pytest.raises(ConfigError):
        load_config(flags={}, env={}, config_path=bad)
    with pytest.raises(ConfigError):
        load_config(flags={"max_steps": 0}, env={})
    with pytest.raises(ConfigError):
        load_config(flags={}, env={}, config_path=tmp_path / "missing.json")


def write_script(tmp_path: Path, *responses: str) -> Path:
    lines = []
    for r in responses:
        lines.append("match: any")
        lines.append("response <<X")
        lines.append(r)
        lines.append("X")
    path = tmp_path / "model.script"
    path.write_text("\n".join(lines) + "\n")
    return path


COMPLETE = "```sh\necho one\n```"
DONE = "Finished without further action."


def test_run_completing_script_exits_zero(tmp_path, capsys):
    script = write_script(tmp_path, COMPLETE, DONE)
    code = main([
        "run", "do a thing", "--script", str(script),
        "--session-dir", str(tmp_path / "s1"),
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "final: awaiting_human" in out
    assert (tmp_path / "s1" / "transcript.jsonl").exists()


def test_run_exhausted_script_exits_two(tmp_path, capsys):
    script = write_script(tmp_path, COMPLETE)  # loop wants a second response
    code = main([
        "run", "do a thing", "--script", str(script),
        "--session-dir", str(tmp_path / "s2"),
    ])
    assert code == 2


def test_run_max_steps_exits_three(tmp_path):
    script = write_script(tmp_path, COMPLETE, COMPLETE, COMPLETE)
    code = main([
        "run", "go", "--script", str(script), "--max-steps", "1",
        "--session-dir", str(tmp_path / "s3"),
    ])
    assert code == 3


def test_run_without_key_or_script_is_config_error(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("FORGELOOP_API_KEY", raising=False)
    code = main(["run", "task", "--session-dir", str(tmp_path / "s4")])
    assert code == 2
    assert "FORGELOOP_API_KEY" in capsys.readouterr().err


def test_replay_scenario_exit_codes(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["replay", "--scenario", "case1"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    assert main(["replay", "--scenario", "missing_scenario"]) == 2
    assert main(["replay"]) == 2


def test_replay_transcript_hash_match(tmp_path, capsys):
    script = write_script(tmp_path, COMPLETE, DONE)
    session = tmp_path / "orig"
    assert main(["run", "greet", "--script", str(script), "--session-dir", str(session)]) == 0
    assert main(["replay", str(session / "transcript.jsonl")]) == 0
    assert "hashes match" in capsys.readouterr().out


def test_replay_transcript_detects_divergence(tmp_path, capsys):
    script = write_script(tmp_path, COMPLETE, DONE)
    session = tmp_path / "orig"
    main(["run", "greet", "--script", str(script), "--session-dir", str(session)])
    transcript = session / "transcript.jsonl"
    # corrupt one captured output byte in place
    lines = transcript.read_text().splitlines()
    mutated = [line.replace("one", "two") if "command_finished" in line else line for line in lines]
    transcript.write_text("\n".join(mutated) + "\n")
    assert main(["replay", str(transcript)]) == 1


def test_record_writes_replayable_script(tmp_path):
    # capture from a scripted "live" stand-in, then replay the capture
    script = write_script(tmp_path, COMPLETE, DONE)
    out_script = tmp_path / "captured.script"
    code = main([
        "record", "greet", "--script", str(script),
        "--session-dir", str(tmp_path / "a" / "cap"), "--out", str(out_script),
    ])
    assert code == 0
    code = main([
        "run", "greet", "--script", str(out_script),
        "--session-dir", str(tmp_path / "b" / "cap"),
    ])
    assert code == 0
    first = load(tmp_path / "a" / "cap" / "transcript.jsonl")
    second = load(tmp_path / "b" / "cap" / "transcript.jsonl")
    from forgeloop.transcript import content_hash
    assert content_hash(first.events) == content_hash(second.events)


def test_raw_capture_flag_writes_sidecars(tmp_path):
    script = write_script(tmp_path, COMPLETE, DONE)
    session = tmp_path / "raw-session"
    main([
        "run", "go", "--script", str(script),
        "--session-dir", str(session), "--raw-capture",
    ])
    assert (session / "raw" / "step0_cmd0.out").read_bytes() == b"one\n"


def test_no_command_prints_help(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().out.lower()


def test_parser_config_overridable_via_config_file(tmp_path):
    from forgeloop.parsing import BlockKind

    config_file = tmp_path / "cfg.json"
    config_file.write_text(json.dumps({
        "parser": {"tags": {"ruby": "code", "zsh": "shell"}, "pause_marker": "<<HOLD>>"}
    }))
    config = load_config(flags={}, env={}, config_path=config_file)
    assert config.parser.tag_map == {"ruby": BlockKind.CODE, "zsh": BlockKind.SHELL}
    assert config.parser.pause_marker == "<<HOLD>>"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"parser": {"tags": {"x": "mystery"}}}))
    with pytest.raises(ConfigError):
        load_config(flags={}, env={}, config_path=bad)


def test_replay_diverges_after_tag_map_mutation(tmp_path, capsys):
    script = write_script(tmp_path, COMPLETE, DONE)
    session = tmp_path / "orig"
    assert main(["run", "greet", "--script", str(script), "--session-dir", str(session)]) == 0
    # identical parser: replay matches
    assert main(["replay", str(session / "transcript.jsonl")]) == 0
    # a mutated tag map stops classifying sh blocks; behavior (and hash) diverge
    mutated = tmp_path / "mutated.json"
    mutated.write_text(json.dumps({"parser": {"tags": {"python": "code"}}}))
    code = main(["--config", str(mutated), "replay", str(session / "transcript.jsonl")])
    assert code == 1
    assert "diverge" in capsys.readouterr().err


def test_serve_refuses_non_loopback_without_token(capsys):
    assert main(["serve", "--bind", "0.0.0.0", "--script", "x.script"]) == 2
    assert "auth-token" in capsys.readouterr().err
