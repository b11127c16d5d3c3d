// Splits a model response into display segments using the spans the runtime
// already parsed. The client never re-classifies blocks: the spans and kinds
// in blocks_parsed are authoritative, so the UI and the loop always agree.

import type { BlockInfo } from "./types.js";

export interface Segment {
  kind: "prose" | "code" | "shell" | "unclassified";
  tag: string;
  text: string;
}

export function segmentResponse(text: string, blocks: BlockInfo[]): Segment[] {
  const segments: Segment[] = [];
  let cursor = 0;
  const ordered = [...blocks].sort((a, b) => a.span[0] - b.span[0]);
  for (const block of ordered) {
    const [start, end] = block.span;
    if (start > cursor) {
      segments.push({ kind: "prose", tag: "", text: text.slice(cursor, start) });
    }
    segments.push({ kind: block.kind, tag: block.info_tag, text: text.slice(start, end) });
    cursor = end;
  }
  if (cursor < text.length) {
    segments.push({ kind: "prose", tag: "", text: text.slice(cursor) });
  }
  return segments.filter((s) => s.text.length > 0);
}
