// Wiring: one ConsoleApi, one SessionStream for the viewed session, and a
// re-render on every state change. All mutations flow through the three
// handler callbacks; view code never talks to the network.

import { ConsoleApi, ApiError } from "./api.js";
import { SessionView, applyEvent, initialSessionView } from "./state.js";
import { SessionStream, StreamStatus } from "./stream.js";
import type { SessionSummary } from "./types.js";
import { renderSession, renderSessionList, renderSnippet, ViewHandlers } from "./view.js";

const api = new ConsoleApi("");
const wsBase = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}`;

let sessions: SessionSummary[] = [];
let activeId: string | null = null;
let view: SessionView = initialSessionView();
let stream: SessionStream | null = null;
let connection: StreamStatus = "closed";
let snippetPath: string | null = null;

const listNode = document.getElementById("session-list")!;
const sessionNode = document.getElementById("session")!;
const snippetNode = document.getElementById("snippet")!;
const toastNode = document.getElementById("toast")!;

function toast(message: string): void {
  toastNode.textContent = message;
  toastNode.classList.add("visible");
  setTimeout(() => toastNode.classList.remove("visible"), 4000);
}

function redraw(): void {
  renderSessionList(listNode, sessions, activeId, handlers);
  renderSession(sessionNode, view, connection, handlers);
  renderSnippet(snippetNode, snippetPath, null);
}

async function refreshSessions(): Promise<void> {
  try {
    sessions = await api.listSessions();
  } catch {
    /* transient; the poller will retry */
  }
  redraw();
}

function watch(sessionId: string): void {
  stream?.close();
  activeId = sessionId;
  view = initialSessionView();
  snippetPath = null;
  stream = new SessionStream(wsBase, sessionId, {
    onEvent(event) {
      view = applyEvent(view, event);
      redraw();
    },
    onStatus(status) {
      connection = status;
      redraw();
    },
  });
  stream.start(0); // full rebuild: state is a pure fold, refresh is lossless
  redraw();
}

const handlers: ViewHandlers = {
  onSelectSession: watch,
  onCreateSession() {
    api
      .createSession()
      .then((summary) => {
        watch(summary.session_id);
        return refreshSessions();
      })
      .catch((error) => toast(String(error)));
  },
  onSubmitInput(text) {
    if (!activeId) return;
    api.submitInput(activeId, text).catch((error) => {
      if (error instanceof ApiError && error.status === 409) {
        toast("session is busy; wait for the next pause");
      } else {
        toast(String(error));
      }
    });
  },
  onApproval(execId, decision) {
    if (!activeId) return;
    api.resolveApproval(activeId, execId, decision).catch((error) => {
      if (!(error instanceof ApiError && error.status === 409)) {
        toast(String(error)); // a raced resolution closes silently via the stream
      }
    });
  },
  onSelectSnippet(path) {
    snippetPath = snippetPath === path ? null : path;
    redraw();
  },
};

refreshSessions();
setInterval(refreshSessions, 3000);
