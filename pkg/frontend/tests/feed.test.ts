import { createServer, type Server, type ServerResponse } from "node:http";
import { afterEach, describe, expect, it } from "vitest";

import { EventFeed, parseSseBuffer } from "../src/feed.js";
import type { ConsoleEvent } from "../src/types.js";
import type { FeedStatus } from "../src/state.js";

describe("parseSseBuffer", () => {
  it("extracts complete data payloads and keeps the tail", () => {
    const { events, rest } = parseSseBuffer(
      'id: 1\ndata: {"seq":1}\n\nid: 2\ndata: {"seq":2}\n\nid: 3\ndata: {"se',
    );
    expect(events).toEqual(['{"seq":1}', '{"seq":2}']);
    expect(rest).toBe('id: 3\ndata: {"se');
  });

  it("ignores keepalive comments", () => {
    const { events, rest } = parseSseBuffer(": keepalive\n\n: keepalive\n\n");
    expect(events).toEqual([]);
    expect(rest).toBe("");
  });

  it("handles chunk boundaries mid-line", () => {
    let buffer = "";
    const collected: string[] = [];
    for (const chunk of ['data: {"s', 'eq":9}', "\n", "\n"]) {
      buffer += chunk;
      const { events, rest } = parseSseBuffer(buffer);
      collected.push(...events);
      buffer = rest;
    }
    expect(collected).toEqual(['{"seq":9}']);
  });
});

/** Minimal SSE endpoint whose connections the test can sever. */
class FakeStream {
  server: Server;
  port = 0;
  private clients: ServerResponse[] = [];
  requests: string[] = []; // last_event_id values seen
  private events: ConsoleEvent[] = [];

  constructor() {
    this.server = createServer((req, res) => {
      const url = new URL(req.url ?? "/", "http://x");
      const last = Number(url.searchParams.get("last_event_id") ?? "0");
      this.requests.push(url.searchParams.get("last_event_id") ?? "");
      res.writeHead(200, { "Content-Type": "text/event-stream" });
      res.write(": hello\n\n"); // flush headers so fetch() resolves promptly
      for (const ev of this.events.filter((e) => e.seq > last)) {
        res.write(`id: ${ev.seq}\ndata: ${JSON.stringify(ev)}\n\n`);
      }
      this.clients.push(res);
    });
  }

  listen(): Promise<void> {
    return new Promise((resolve) => {
      this.server.listen(0, "127.0.0.1", () => {
        this.port = (this.server.address() as { port: number }).port;
        resolve();
      });
    });
  }

  push(ev: ConsoleEvent): void {
    this.events.push(ev);
    for (const res of this.clients) {
      res.write(`id: ${ev.seq}\ndata: ${JSON.stringify(ev)}\n\n`);
    }
  }

  severAll(): void {
    for (const res of this.clients) res.destroy();
    this.clients = [];
  }

  close(): void {
    this.severAll();
    this.server.close();
  }
}

function waitFor(check: () => boolean, ms = 5000): Promise<void> {
  return new Promise((resolve, reject) => {
    const t0 = Date.now();
    const timer = setInterval(() => {
      if (check()) {
        clearInterval(timer);
        resolve();
      } else if (Date.now() - t0 > ms) {
        clearInterval(timer);
        reject(new Error("waitFor timed out"));
      }
    }, 10);
  });
}

describe("EventFeed", () => {
  let stream: FakeStream;
  let feed: EventFeed;

  afterEach(() => {
    feed?.stop();
    stream?.close();
  });

  async function startFeed() {
    stream = new FakeStream();
    await stream.listen();
    const got: ConsoleEvent[] = [];
    const statuses: FeedStatus[] = [];
    let lastSeq = 0;
    feed = new EventFeed(`http://127.0.0.1:${stream.port}`, {
      onEvent: (ev) => {
        got.push(ev);
        lastSeq = ev.seq;
      },
      onStatus: (s) => statuses.push(s),
      resumeSeq: () => lastSeq,
    });
    feed.start();
    await waitFor(() => statuses.includes("live"));
    return { got, statuses };
  }

  it("delivers live events in order", async () => {
    const { got } = await startFeed();
    stream.push({ seq: 1, type: "reading" });
    stream.push({ seq: 2, type: "reading" });
    await waitFor(() => got.length === 2);
    expect(got.map((e) => e.seq)).toEqual([1, 2]);
  });

  it("reconnects after a dropped connection and resumes from lastSeq", async () => {
    const { got, statuses } = await startFeed();
    stream.push({ seq: 1, type: "reading" });
    stream.push({ seq: 2, type: "reading" });
    await waitFor(() => got.length === 2);

    stream.severAll(); // the wire goes away
    stream.push({ seq: 3, type: "reading" }); // happens while disconnected
    await waitFor(() => got.length === 3); // replayed on reconnect
    expect(statuses).toContain("reconnecting"); // visible reconnect state
    expect(got.map((e) => e.seq)).toEqual([1, 2, 3]);
    expect(stream.requests.at(-1)).toBe("2"); // resumed from the last seen seq
  });

  it("forceReconnect resumes without duplicates", async () => {
    const { got } = await startFeed();
    stream.push({ seq: 1, type: "reading" });
    await waitFor(() => got.length === 1);
    feed.forceReconnect();
    stream.push({ seq: 2, type: "reading" });
    stream.push({ seq: 3, type: "reading" });
    await waitFor(() => got.length === 3);
    expect(got.map((e) => e.seq)).toEqual([1, 2, 3]);
  });

  it("stop() reports offline and stays down", async () => {
    const { statuses } = await startFeed();
    feed.stop();
    expect(statuses.at(-1)).toBe("offline");
  });
});
