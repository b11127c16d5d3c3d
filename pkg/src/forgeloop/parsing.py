"""Fenced-block extraction and classification of model output.

The agent speaks in plain text with triple-backquote fenced blocks. A block
tagged with a programming language is code to stage; a block tagged with a
shell name holds terminal commands to run; everything else is prose. A pause
marker line outside any fence asks the operator for input.

All functions here are pure and total: any string parses without raising.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

FENCE = "```"
DEFAULT_PAUSE_MARKER = "[AWAIT_HUMAN]"


class BlockKind(Enum):
    CODE = "code"
    SHELL = "shell"
    UNCLASSIFIED = "unclassified"


#: info_tag -> kind. Broader than strictly needed; override via ParserConfig.
DEFAULT_TAG_MAP: dict[str, BlockKind] = {
    "python": BlockKind.CODE,
    "cmd": BlockKind.SHELL,
    "bash": BlockKind.SHELL,
    "powershell": BlockKind.SHELL,
    "sh": BlockKind.SHELL,
    "shell": BlockKind.SHELL,
}


@dataclass(frozen=True)
class FencedBlock:
    """One delimiter-fenced region: tag, inner body, and source span.

    ``span`` is the half-open [start, end) interval in the original text
    covering the whole region including both delimiter lines; ``body``
    excludes them. Spans of distinct blocks never overlap.
    """

    info_tag: str
    body: str
    span: tuple[int, int]
    ordinal: int


@dataclass(frozen=True)
class BlockClass:
    kind: BlockKind
    tag: str


@dataclass(frozen=True)
class ParserConfig:
    tag_map: dict[str, BlockKind] = field(default_factory=lambda: dict(DEFAULT_TAG_MAP))
    pause_marker: str = DEFAULT_PAUSE_MARKER


@dataclass(frozen=True)
class ParsedResponse:
    """Classified blocks plus the two loop-control signals.

    ``terminal`` is true exactly when no block is code or shell: a response
    that proposes no action ends the stepping loop. ``human_input_requested``
    is true exactly when the pause marker appears on a line outside every
    fenced block.
    """

    blocks: tuple[tuple[FencedBlock, BlockClass], ...]
    human_input_requested: bool
    terminal: bool


def _line_spans(text: str) -> list[tuple[int, int]]:
    """Half-open [start, end) spans of each line, end including the newline."""
    spans = []
    start = 0
    while start < len(text):
        nl = text.find("\n", start)
        end = len(text) if nl < 0 else nl + 1
        spans.append((start, end))
        start = end
    return spans


def _line_content(text: str, span: tuple[int, int]) -> str:
    raw = text[span[0]:span[1]]
    return raw[:-1] if raw.endswith("\n") else raw


def extract_blocks(text: str) -> list[FencedBlock]:
    """Return every well-formed fenced region of ``text`` in document order.

    An opening fence is a line starting with three backquotes, optionally
    followed by a tag; any later line starting with three backquotes closes
    the block (text after the closing backquotes is discarded with the
    delimiter line). An opening fence with no matching close before
    end-of-input yields no block (a truncated block must never be acted on).
    """
    blocks: list[FencedBlock] = []
    spans = _line_spans(text)
    open_idx: int | None = None
    open_tag = ""
    for i, span in enumerate(spans):
        content = _line_content(text, span)
        if open_idx is None:
            if content.startswith(FENCE):
                open_idx = i
                rest = content[len(FENCE):].strip()
                open_tag = rest.split()[0].lower() if rest else ""
        elif content.startswith(FENCE):
            body_start = spans[open_idx][1]
            body_end = spans[i][0]
            blocks.append(
                FencedBlock(
                    info_tag=open_tag,
                    body=text[body_start:body_end],
                    span=(spans[open_idx][0], span[1]),
                    ordinal=len(blocks),
                )
            )
            open_idx = None
            open_tag = ""
    return blocks


def classify(block: FencedBlock, tag_map: dict[str, BlockKind] | None = None) -> BlockClass:
    """Map a block's info tag to its class; body content is never inspected."""
    mapping = DEFAULT_TAG_MAP if tag_map is None else tag_map
    kind = mapping.get(block.info_tag)
    if kind is None:
        return BlockClass(BlockKind.UNCLASSIFIED, block.info_tag)
    return BlockClass(kind, block.info_tag)


_CMD_COMMENT = re.compile(r"(?i)^(?:rem(?:\s|$)|::)")


def split_commands(block: FencedBlock, shell_tag: str | None = None) -> list[str]:
    """Split a shell block body into one command per non-empty line.

    Blank lines and whole-line comments are dropped: ``REM``/``::`` for cmd,
    ``#`` for every other shell. Order is preserved.
    """
    shell = (shell_tag if shell_tag is not None else block.info_tag).lower()
    commands = []
    for raw in block.body.splitlines():
        line = raw.strip()
        if not line:
            continue
        if shell == "cmd":
            if _CMD_COMMENT.match(line):
                continue
        elif line.startswith("#"):
            continue
        commands.append(line)
    return commands


def _gap_text(text: str, blocks: list[FencedBlock]) -> str:
    pieces = []
    pos = 0
    for block in blocks:
        pieces.append(text[pos:block.span[0]])
        pos = block.span[1]
    pieces.append(text[pos:])
    return "".join(pieces)


def parse_response(text: str, config: ParserConfig | None = None) -> ParsedResponse:
    """Extract and classify all blocks and detect the pause marker.

    The marker only counts on a line outside every fenced block; a marker
    quoted inside a block is data, not a request.
    """
    cfg = config or ParserConfig()
    blocks = extract_blocks(text)
    classified = tuple((b, classify(b, cfg.tag_map)) for b in blocks)
    marker = cfg.pause_marker
    requested = any(
        line.strip() == marker for line in _gap_text(text, blocks).splitlines()
    )
    terminal = not any(
        c.kind in (BlockKind.CODE, BlockKind.SHELL) for _, c in classified
    )
    return ParsedResponse(
        blocks=classified,
        human_input_requested=requested,
        terminal=terminal,
    )
