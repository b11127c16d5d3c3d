// Event-sourced view state: everything on screen is a fold over transcript
// events plus local selections. Replaying the same events from seq 0 must
// rebuild byte-identical state, which is what makes refresh and reconnect
// safe.

import type { BlockInfo, TranscriptEvent } from "./types.js";

export interface SnippetView {
  step: number;
  ordinal: number;
  languageTag: string;
  latestPath: string;
  archivePath: string;
  contentHash: string;
}

export interface CommandView {
  step: number;
  ordinal: number;
  execId: string;
  command: string;
  shellTag: string;
  finished: boolean;
  verdict: string | null;
  exitStatus: number | null;
  stdout: string;
  stderr: string;
  ruleId: string | null;
}

export interface ApprovalView {
  execId: string;
  step: number;
  ordinal: number;
  command: string;
  resolved: boolean;
  decision: string | null;
}

export interface StepGroup {
  step: number;
  responseText: string | null;
  blocks: BlockInfo[];
  outcome: string | null;
  snippets: SnippetView[];
  commands: CommandView[];
}

export interface OperatorEntry {
  kind: "task" | "resume";
  text: string;
}

export interface SessionView {
  status: string;
  pauseReason: string | null;
  failureCause: string | null;
  task: string | null;
  lastSeq: number;
  steps: StepGroup[];
  approvals: ApprovalView[];
  operatorEntries: OperatorEntry[];
}

export function initialSessionView(): SessionView {
  return {
    status: "awaiting_task",
    pauseReason: null,
    failureCause: null,
    task: null,
    lastSeq: -1,
    steps: [],
    approvals: [],
    operatorEntries: [],
  };
}

function stepGroup(view: SessionView, step: number): StepGroup {
  let group = view.steps.find((g) => g.step === step);
  if (!group) {
    group = {
      step,
      responseText: null,
      blocks: [],
      outcome: null,
      snippets: [],
      commands: [],
    };
    view.steps.push(group);
    view.steps.sort((a, b) => a.step - b.step);
  }
  return group;
}

/** Pure fold step; returns a new view and never mutates the input. */
export function applyEvent(previous: SessionView, event: TranscriptEvent): SessionView {
  const view: SessionView = structuredClone(previous);
  if (event.seq <= view.lastSeq) return view; // duplicates are no-ops
  view.lastSeq = event.seq;
  const p = event.payload;
  switch (event.kind) {
    case "task_submitted":
      view.task = p.task;
      view.status = "stepping";
      view.pauseReason = null;
      view.failureCause = null;
      view.operatorEntries.push({ kind: "task", text: p.task });
      break;
    case "resumed":
      view.status = "stepping";
      view.pauseReason = null;
      view.failureCause = null;
      view.operatorEntries.push({ kind: "resume", text: p.text });
      break;
    case "model_queried":
      stepGroup(view, p.step);
      break;
    case "model_responded":
      stepGroup(view, p.step).responseText = p.text;
      break;
    case "blocks_parsed": {
      const group = stepGroup(view, p.step);
      group.blocks = p.blocks;
      group.outcome = p.outcome;
      break;
    }
    case "snippet_staged":
      stepGroup(view, p.step).snippets.push({
        step: p.step,
        ordinal: p.ordinal,
        languageTag: p.language_tag,
        latestPath: p.latest_path,
        archivePath: p.archive_path,
        contentHash: p.content_hash,
      });
      break;
    case "command_started":
      stepGroup(view, p.step).commands.push({
        step: p.step,
        ordinal: p.ordinal,
        execId: p.exec_id,
        command: p.command,
        shellTag: p.shell_tag,
        finished: false,
        verdict: null,
        exitStatus: null,
        stdout: "",
        stderr: "",
        ruleId: null,
      });
      break;
    case "command_finished": {
      const group = stepGroup(view, p.step);
      const command = group.commands.find((c) => c.execId === p.exec_id);
      if (command) {
        command.finished = true;
        command.verdict = p.verdict;
        command.exitStatus = p.exit_status;
        command.stdout = p.stdout;
        command.stderr = p.stderr;
        command.ruleId = p.rule_id;
      }
      break;
    }
    case "approval_requested":
      view.approvals.push({
        execId: p.exec_id,
        step: p.step,
        ordinal: p.ordinal,
        command: p.command,
        resolved: false,
        decision: null,
      });
      break;
    case "approval_resolved": {
      const approval = view.approvals.find((a) => a.execId === p.exec_id);
      if (approval) {
        approval.resolved = true;
        approval.decision = p.decision;
      }
      break;
    }
    case "paused":
      view.status = "awaiting_human";
      view.pauseReason = p.reason;
      break;
    case "session_failed":
      view.status = "failed";
      view.failureCause = p.cause ?? null;
      break;
    case "session_closed":
      view.status = "closed";
      break;
    default:
      break; // unknown kinds are forward-compatible no-ops
  }
  return view;
}

export function applyAll(view: SessionView, events: TranscriptEvent[]): SessionView {
  return events.reduce(applyEvent, view);
}

// -- selectors ---------------------------------------------------------------

export function pendingApproval(view: SessionView): ApprovalView | null {
  return view.approvals.find((a) => !a.resolved) ?? null;
}

/** The input box is live exactly when the session is waiting on the operator. */
export function inputEnabled(view: SessionView): boolean {
  return (
    pendingApproval(view) === null &&
    (view.status === "awaiting_task" ||
      view.status === "awaiting_human" ||
      view.status === "failed")
  );
}

export function statusBadge(view: SessionView): string {
  if (pendingApproval(view)) return "approval pending";
  if (view.status === "awaiting_human" && view.pauseReason) {
    return `awaiting human (${view.pauseReason.replace(/_/g, " ")})`;
  }
  return view.status.replace(/_/g, " ");
}
