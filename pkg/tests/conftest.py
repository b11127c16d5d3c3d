from __future__ import annotations

from pathlib import Path

import pytest

from forgeloop.execution import Policy
from forgeloop.gateway import MatchKind, ScriptEntry, ScriptedModel
from forgeloop.loop import LoopConfig, SessionLoop
from forgeloop.session import SessionState
from forgeloop.transcript import TRANSCRIPT_FILENAME, TranscriptWriter


def scripted(*responses: str) -> ScriptedModel:
    return ScriptedModel([ScriptEntry(MatchKind.ANY, None, r) for r in responses])


def build_loop(
    session_dir: Path,
    backend,
    max_steps: int = 30,
    policy: Policy | None = None,
    session_id: str = "test-session",
    **config_kwargs,
) -> SessionLoop:
    session_dir.mkdir(parents=True, exist_ok=True)
    state = SessionState(session_id=session_id, session_dir=session_dir, max_steps=max_steps)
    writer = TranscriptWriter(session_dir / TRANSCRIPT_FILENAME)
    config = LoopConfig(**config_kwargs)
    if policy is not None:
        config.policy = policy
    return SessionLoop(state=state, backend=backend, writer=writer, config=config)


@pytest.fixture
def loop_factory(tmp_path):
    counter = {"n": 0}

    def factory(backend, **kwargs) -> SessionLoop:
        counter["n"] += 1
        return build_loop(tmp_path / f"session{counter['n']}", backend, **kwargs)

    return factory
