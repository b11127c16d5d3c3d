// Straight DOM rendering from SessionView. This module issues no requests:
// every user action goes through the handler callbacks wired in main.ts,
// so mutations can only originate from the three input surfaces.

import { segmentResponse } from "./fences.js";
import {
  ApprovalView,
  SessionView,
  StepGroup,
  inputEnabled,
  pendingApproval,
  statusBadge,
} from "./state.js";
import type { SessionSummary } from "./types.js";

export interface ViewHandlers {
  onSelectSession(sessionId: string): void;
  onCreateSession(): void;
  onSubmitInput(text: string): void;
  onApproval(execId: string, decision: "approve" | "deny"): void;
  onSelectSnippet(path: string): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderSessionList(
  container: HTMLElement,
  sessions: SessionSummary[],
  activeId: string | null,
  handlers: ViewHandlers,
): void {
  container.replaceChildren();
  const createButton = el("button", "create-session", "new session");
  createButton.addEventListener("click", () => handlers.onCreateSession());
  container.appendChild(createButton);
  for (const session of sessions) {
    const item = el("div", "session-item" + (session.session_id === activeId ? " active" : ""));
    item.appendChild(el("span", "session-id", session.session_id));
    item.appendChild(el("span", `badge status-${session.status}`, session.status.replace(/_/g, " ")));
    if (session.task) item.appendChild(el("span", "session-task", session.task));
    item.addEventListener("click", () => handlers.onSelectSession(session.session_id));
    container.appendChild(item);
  }
}

function renderCommands(group: StepGroup): HTMLElement {
  const wrap = el("div", "commands");
  for (const command of group.commands) {
    const details = el("details", "command");
    const summaryBits = [
      `$ ${command.command}`,
      command.finished
        ? command.verdict === "ran"
          ? `exit ${command.exitStatus}`
          : `${command.verdict}${command.ruleId ? `: ${command.ruleId}` : ""}`
        : "running…",
    ];
    const summary = el("summary", `command-line verdict-${command.verdict ?? "pending"}`);
    summary.textContent = summaryBits.join("  ");
    details.appendChild(summary);
    if (command.stdout) {
      details.appendChild(el("pre", "stream stdout", command.stdout));
    }
    if (command.stderr) {
      details.appendChild(el("pre", "stream stderr", command.stderr));
    }
    wrap.appendChild(details);
  }
  return wrap;
}

function renderStep(group: StepGroup, handlers: ViewHandlers): HTMLElement {
  const section = el("section", "step");
  section.appendChild(el("h3", "step-title", `step ${group.step}`));
  if (group.responseText !== null) {
    const response = el("div", "response");
    for (const segment of segmentResponse(group.responseText, group.blocks)) {
      const cls = segment.kind === "prose" ? "prose" : `block block-${segment.kind}`;
      const node = el(segment.kind === "prose" ? "p" : "pre", cls, segment.text);
      if (segment.tag) node.dataset.tag = segment.tag;
      response.appendChild(node);
    }
    section.appendChild(response);
  }
  if (group.snippets.length) {
    const list = el("div", "snippets");
    for (const snippet of group.snippets) {
      const link = el("a", "snippet-link", snippet.archivePath);
      link.href = "#";
      link.addEventListener("click", (ev) => {
        ev.preventDefault();
        handlers.onSelectSnippet(snippet.archivePath);
      });
      list.appendChild(link);
    }
    section.appendChild(list);
  }
  if (group.commands.length) section.appendChild(renderCommands(group));
  if (group.outcome && group.outcome !== "continue") {
    section.appendChild(el("div", "outcome", group.outcome.replace(/_/g, " ")));
  }
  return section;
}

function renderApprovalBanner(approval: ApprovalView, handlers: ViewHandlers): HTMLElement {
  const banner = el("div", "approval-banner");
  banner.appendChild(el("strong", undefined, "approval required"));
  banner.appendChild(el("code", "approval-command", approval.command));
  const approve = el("button", "approve", "approve");
  approve.addEventListener("click", () => handlers.onApproval(approval.execId, "approve"));
  const deny = el("button", "deny", "deny");
  deny.addEventListener("click", () => handlers.onApproval(approval.execId, "deny"));
  banner.append(approve, deny);
  return banner;
}

export function renderSession(
  container: HTMLElement,
  view: SessionView,
  connection: string,
  handlers: ViewHandlers,
): void {
  container.replaceChildren();

  const header = el("div", "session-header");
  header.appendChild(el("span", "badge", statusBadge(view)));
  if (connection !== "open") {
    header.appendChild(el("span", "badge connection", `connection: ${connection}`));
  }
  if (view.task) header.appendChild(el("span", "task", view.task));
  if (view.failureCause) header.appendChild(el("span", "failure", view.failureCause));
  container.appendChild(header);

  const approval = pendingApproval(view);
  if (approval) container.appendChild(renderApprovalBanner(approval, handlers));

  const log = el("div", "event-log");
  if (!view.steps.length && !view.operatorEntries.length) {
    log.appendChild(el("p", "placeholder", "no activity yet; submit a task below"));
  }
  for (const group of view.steps) log.appendChild(renderStep(group, handlers));
  container.appendChild(log);

  const form = el("form", "input-form");
  const box = el("textarea", "input-box") as HTMLTextAreaElement;
  box.placeholder = view.status === "awaiting_task" ? "describe a task…" : "reply to the agent…";
  box.disabled = !inputEnabled(view);
  const send = el("button", "send", "send");
  send.disabled = box.disabled;
  form.append(box, send);
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const text = box.value.trim();
    if (!text) return; // client-side guard: blank input never leaves the page
    handlers.onSubmitInput(text);
    box.value = "";
  });
  container.appendChild(form);
}

export function renderSnippet(container: HTMLElement, path: string | null, content: string | null): void {
  container.replaceChildren();
  if (!path) return;
  container.appendChild(el("h4", "snippet-title", path));
  container.appendChild(el("pre", "snippet-body", content ?? "(unavailable)"));
}
