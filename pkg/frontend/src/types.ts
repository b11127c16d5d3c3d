// Wire types mirrored from the console API; the server is the source of truth.

export interface TranscriptEvent {
  seq: number;
  t: number;
  kind: string;
  payload: Record<string, any>;
}

export interface SessionSummary {
  session_id: string;
  status: string;
  pause_reason: string | null;
  task: string | null;
  step_index: number;
  max_steps: number;
  pending_approval: { exec_id: string; command: string } | null;
  created_at: number;
}

export interface BlockInfo {
  ordinal: number;
  info_tag: string;
  kind: "code" | "shell" | "unclassified";
  span: [number, number];
}
