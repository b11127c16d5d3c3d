// Thin client over the console REST surface. Exactly three methods mutate
// anything: submitInput, resolveApproval, closeSession (plus createSession
// for new sessions); everything else is GET.

import type { SessionSummary } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ConsoleApi {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<any> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (response.status === 204) return null;
    const parsed = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiError(response.status, parsed.error ?? response.statusText);
    }
    return parsed;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  listSessions(): Promise<SessionSummary[]> {
    return this.request("GET", "/sessions");
  }

  getSession(sessionId: string): Promise<SessionSummary> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  createSession(overrides: Record<string, unknown> = {}): Promise<SessionSummary> {
    return this.request("POST", "/sessions", overrides);
  }

  submitInput(sessionId: string, text: string): Promise<void> {
    return this.request("POST", `/sessions/${sessionId}/input`, { text });
  }

  resolveApproval(sessionId: string, execId: string, decision: "approve" | "deny"): Promise<void> {
    return this.request("POST", `/sessions/${sessionId}/approvals/${execId}`, { decision });
  }

  closeSession(sessionId: string): Promise<void> {
    return this.request("POST", `/sessions/${sessionId}/close`);
  }
}
