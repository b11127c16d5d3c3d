"""Staging of generated code into the session workspace.

Every code block lands in two places before any command from the same
response runs: a predictable ``snippets/latest.<ext>`` the agent is told
about, and an immutable per-step archive copy. Writes go through a
temp-file rename so concurrent readers never observe a half-written file.
"""
from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .parsing import BlockClass, BlockKind, FencedBlock

SNIPPET_DIR = "snippets"
ARCHIVE_DIR = "archive"

#: language tag -> file extension; unknown tags use the tag itself.
EXTENSIONS = {"python": "py"}


class StorageFailure(Exception):
    def __init__(self, path: Path, cause: BaseException | str):
        super().__init__(f"storage failure at {path}: {cause}")
        self.path = path
        self.cause = cause


@dataclass(frozen=True)
class StagedSnippet:
    source_step: int
    source_ordinal: int
    language_tag: str
    latest_path: Path
    archive_path: Path
    content_hash: str


def extension_for(language_tag: str) -> str:
    return EXTENSIONS.get(language_tag, language_tag or "txt")


def latest_path_for(language_tag: str, session_dir: Path) -> Path:
    return Path(session_dir) / SNIPPET_DIR / f"latest.{extension_for(language_tag)}"


def _normalize(body: str) -> str:
    # interpreters commonly require a final newline
    return body if body.endswith("\n") else body + "\n"


def _atomic_write(path: Path, content: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".stage-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(content)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise StorageFailure(path, exc) from exc


def stage(
    blocks: list[tuple[FencedBlock, BlockClass]],
    session_dir: Path,
    step: int,
) -> list[StagedSnippet]:
    """Write each code block to latest.<ext> and an archive copy, in order.

    ``latest`` is overwritten per language (last block wins); archive files
    are created once and never rewritten. All writes are durable before the
    call returns, so commands from the same response can rely on them.
    """
    session_dir = Path(session_dir)
    staged: list[StagedSnippet] = []
    for block, cls in blocks:
        if cls.kind is not BlockKind.CODE:
            raise ValueError(f"refusing to stage non-code block (tag {cls.tag!r})")
        content = _normalize(block.body)
        ext = extension_for(cls.tag)
        latest = session_dir / SNIPPET_DIR / f"latest.{ext}"
        archive = (
            session_dir / SNIPPET_DIR / ARCHIVE_DIR
            / f"step{step}_block{block.ordinal}.{ext}"
        )
        if archive.exists():
            raise StorageFailure(archive, "archive entry already exists")
        _atomic_write(latest, content)
        _atomic_write(archive, content)
        staged.append(
            StagedSnippet(
                source_step=step,
                source_ordinal=block.ordinal,
                language_tag=cls.tag,
                latest_path=latest,
                archive_path=archive,
                content_hash=hashlib.sha256(content.encode("utf-8")).hexdigest(),
            )
        )
    return staged


def read_latest(language_tag: str, session_dir: Path) -> str | None:
    """Current latest.<ext> content, or None if nothing was ever staged."""
    path = latest_path_for(language_tag, Path(session_dir))
    if not path.exists():
        return None
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageFailure(path, exc) from exc
