// One WebSocket per viewed session, resuming from the last seen sequence
// number with exponential backoff. Because the server replays from any seq
// and the reducer ignores duplicates, a reconnect can never lose or repeat
// an event on screen.

import type { TranscriptEvent } from "./types.js";

export const BASE_DELAY_MS = 1000;
export const MAX_DELAY_MS = 30000;

export type StreamStatus = "connecting" | "open" | "reconnecting" | "closed";

export interface WebSocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  close(): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

export interface StreamHandlers {
  onEvent(event: TranscriptEvent): void;
  onStatus?(status: StreamStatus): void;
}

export class SessionStream {
  private ws: WebSocketLike | null = null;
  private attempt = 0;
  private stopped = false;
  private nextSeq = 0;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private wsBase: string,
    private sessionId: string,
    private handlers: StreamHandlers,
    private factory: WebSocketFactory = (url) => new WebSocket(url) as unknown as WebSocketLike,
  ) {}

  get lastSeq(): number {
    return this.nextSeq - 1;
  }

  start(fromSeq = 0): void {
    this.nextSeq = fromSeq;
    this.stopped = false;
    this.connect();
  }

  private url(): string {
    return `${this.wsBase}/sessions/${this.sessionId}/events?from=${this.nextSeq}`;
  }

  private connect(): void {
    this.handlers.onStatus?.(this.attempt === 0 ? "connecting" : "reconnecting");
    const ws = this.factory(this.url());
    this.ws = ws;
    ws.onopen = () => {
      this.attempt = 0;
      this.handlers.onStatus?.("open");
    };
    ws.onmessage = (message) => {
      const event = JSON.parse(message.data) as TranscriptEvent;
      if (typeof event.seq !== "number" || event.seq < this.nextSeq) return;
      this.nextSeq = event.seq + 1;
      this.handlers.onEvent(event);
    };
    ws.onerror = () => {
      /* onclose follows and owns reconnection */
    };
    ws.onclose = () => {
      if (this.stopped) return;
      this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    const delay = Math.min(BASE_DELAY_MS * 2 ** this.attempt, MAX_DELAY_MS);
    this.attempt += 1;
    this.handlers.onStatus?.("reconnecting");
    this.timer = setTimeout(() => {
      this.timer = null;
      if (!this.stopped) this.connect();
    }, delay);
  }

  close(): void {
    this.stopped = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.ws?.close();
    this.ws = null;
    this.handlers.onStatus?.("closed");
  }
}
