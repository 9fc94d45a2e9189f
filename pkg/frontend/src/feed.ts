// Live event stream client. Plain fetch streaming instead of
// EventSource so a manual reconnect can pass ?last_event_id= (the
// native API cannot set it on a fresh connection), and so the same
// code runs in the browser and under vitest/node.

import type { ConsoleEvent } from "./types.js";
import type { FeedStatus } from "./state.js";

/** Split accumulated SSE text into complete `data:` payloads plus the
 * unfinished tail. Comment/keepalive lines and `id:` lines are
 * dropped; the seq inside the JSON is authoritative. */
export function parseSseBuffer(buffer: string): { events: string[]; rest: string } {
  const blocks = buffer.split("\n\n");
  const rest = blocks.pop() ?? "";
  const events: string[] = [];
  for (const block of blocks) {
    for (const line of block.split("\n")) {
      if (line.startsWith("data: ")) events.push(line.slice(6));
      else if (line.startsWith("data:")) events.push(line.slice(5));
    }
  }
  return { events, rest };
}

export interface FeedCallbacks {
  onEvent(ev: ConsoleEvent): void;
  onStatus(status: FeedStatus): void;
  /** seq to resume from; the server replays everything after it */
  resumeSeq(): number;
}

const INITIAL_BACKOFF_MS = 300;
const MAX_BACKOFF_MS = 5000;

export class EventFeed {
  private controller: AbortController | null = null;
  private stopped = false;
  private everConnected = false;
  private backoff = INITIAL_BACKOFF_MS;

  constructor(private base: string, private cb: FeedCallbacks) {}

  start(): void {
    this.stopped = false;
    void this.loop();
  }

  /** Drop the connection; the loop resumes from resumeSeq(). */
  forceReconnect(): void {
    this.controller?.abort();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
    this.cb.onStatus("offline");
  }

  private async loop(): Promise<void> {
    while (!this.stopped) {
      this.cb.onStatus(this.everConnected ? "reconnecting" : "connecting");
      try {
        this.controller = new AbortController();
        const url = `${this.base}/api/events?last_event_id=${this.cb.resumeSeq()}`;
        const res = await fetch(url, { signal: this.controller.signal });
        if (!res.ok || res.body === null) {
          throw new Error(`event stream: HTTP ${res.status}`);
        }
        this.cb.onStatus("live");
        this.everConnected = true;
        this.backoff = INITIAL_BACKOFF_MS;
        const reader = res.body.getReader();
        const decoder = new TextDecoder();
        let buffer = "";
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          buffer += decoder.decode(value, { stream: true });
          const { events, rest } = parseSseBuffer(buffer);
          buffer = rest;
          for (const data of events) {
            this.cb.onEvent(JSON.parse(data) as ConsoleEvent);
          }
        }
      } catch {
        // aborted or dropped; fall through to the retry delay
      }
      if (this.stopped) return;
      this.cb.onStatus("reconnecting");
      await new Promise((r) => setTimeout(r, this.backoff));
      this.backoff = Math.min(this.backoff * 2, MAX_BACKOFF_MS);
    }
  }
}
