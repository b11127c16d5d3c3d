"""Prompt rendering: initial instructions, per-step results, resume input.

Templates are plain text files with ``{{variable}}`` slots. Rendering is
pure and idempotent. Captured command output is squeezed into a character
budget by cutting the middle of each stream: the head shows what the command
echoed, the tail shows how it ended, and an explicit elision marker records
how much was dropped.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .execution import ExecutionRecord

TEMPLATE_DIR = Path(__file__).parent / "templates"
DEFAULT_TRUNCATION_BUDGET = 16_000

_SLOT = re.compile(r"\{\{(\w+)\}\}")


class MissingTemplateVariable(Exception):
    def __init__(self, name: str):
        super().__init__(f"template variable {name!r} not provided")
        self.name = name


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str

    def to_wire(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class PromptTemplateSet:
    system_instructions: str
    output_template: str
    empty_template: str
    truncation_budget: int = DEFAULT_TRUNCATION_BUDGET

    @classmethod
    def load(cls, templates_dir: Path | None = None, truncation_budget: int = DEFAULT_TRUNCATION_BUDGET):
        """Read the three template files, falling back to the packaged defaults."""
        base = Path(templates_dir) if templates_dir else TEMPLATE_DIR

        def read(name: str) -> str:
            path = base / name
            if not path.exists():
                path = TEMPLATE_DIR / name
            return path.read_text(encoding="utf-8")

        return cls(
            system_instructions=read("system_instructions.txt"),
            output_template=read("step_output.txt"),
            empty_template=read("empty.txt"),
            truncation_budget=truncation_budget,
        )


def substitute(template: str, variables: dict[str, str]) -> str:
    def repl(match: re.Match) -> str:
        name = match.group(1)
        if name not in variables:
            raise MissingTemplateVariable(name)
        return str(variables[name])

    return _SLOT.sub(repl, template)


def elide_middle(text: str, budget: int) -> str:
    """Fit ``text`` into ``budget`` chars, keeping head and tail halves.

    The dropped middle is replaced by an ``…[truncated N bytes]…`` marker;
    each preserved side is at least a quarter of the budget.
    """
    if len(text) <= budget:
        return text
    if budget < 80:
        return text[:budget]
    reserve = 40  # marker allowance; verified below
    keep = budget - reserve
    head = keep // 2
    tail = keep - head
    dropped = len(text) - head - tail
    marker = f"…[truncated {dropped} bytes]…"
    assert len(marker) <= reserve + head  # marker never overruns the budget
    return text[:head] + marker + text[-tail:]


def render_initial(task: str, templates: PromptTemplateSet, env_facts: dict[str, str]) -> list[Message]:
    """System message with the environment contract, plus the task message."""
    if not task.strip():
        raise ValueError("task must be non-empty")
    system = substitute(templates.system_instructions, env_facts)
    return [Message("system", system), Message("user", task)]


def _record_lines(record: ExecutionRecord, stream_budget: int) -> str:
    lines = [f"$ {record.request.command}"]
    if record.exit_status is not None:
        lines.append(f"[exit {record.exit_status}] ({record.verdict.value})")
    else:
        detail = record.rule_id or record.spawn_error
        lines.append(f"[{record.verdict.value}" + (f": {detail}]" if detail else "]"))
    for label, text, flagged in (
        ("stdout", record.stdout, record.stdout_truncated),
        ("stderr", record.stderr, record.stderr_truncated),
    ):
        if not text and not flagged:
            continue
        suffix = " (capped at capture)" if flagged else ""
        lines.append(f"{label}{suffix}:")
        lines.append(elide_middle(text, stream_budget))
    return "\n".join(lines) + "\n"


def render_step(records: list[ExecutionRecord], templates: PromptTemplateSet) -> Message:
    """One user message carrying every record, in execution order."""
    if not records:
        raise ValueError("render_step requires at least one execution record")
    stream_budget = max(80, templates.truncation_budget // (2 * len(records)))
    results = "".join(_record_lines(r, stream_budget) for r in records)
    return Message("user", substitute(templates.output_template, {"results": results}))


def render_empty(templates: PromptTemplateSet) -> Message:
    return Message("user", templates.empty_template)


def render_resume(human_input: str, templates: PromptTemplateSet) -> Message:
    """The operator's words, verbatim, as the next user message."""
    if not human_input.strip():
        raise ValueError("human input must be non-blank")
    return Message("user", human_input)
