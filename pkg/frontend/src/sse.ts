import type { Envelope } from "./types.js";

/**
 * Incremental server-sent-event parser.  Feed it raw text chunks in any
 * split; it returns completed envelopes and keeps the unterminated tail.
 */
export function parseSse(buffer: string): { events: Envelope[]; rest: string } {
  const events: Envelope[] = [];
  let start = 0;
  for (;;) {
    const end = buffer.indexOf("\n\n", start);
    if (end < 0) {
      break;
    }
    const block = buffer.slice(start, end);
    start = end + 2;
    let seq = -1;
    let type = "message";
    const dataLines: string[] = [];
    for (const line of block.split("\n")) {
      if (line.startsWith("id: ")) {
        seq = Number(line.slice(4));
      } else if (line.startsWith("event: ")) {
        type = line.slice(7);
      } else if (line.startsWith("data: ")) {
        dataLines.push(line.slice(6));
      }
    }
    if (dataLines.length > 0) {
      events.push({
        seq,
        type,
        payload: JSON.parse(dataLines.join("\n")) as Record<string, unknown>,
      });
    }
  }
  return { events, rest: buffer.slice(start) };
}

export interface StreamOptions {
  /** First sequence number to request. */
  from?: number;
  /** Delay before reconnecting after a dropped connection, ms. */
  retryDelayMs?: number;
  /** Stop reconnecting after this many consecutive failures. */
  maxRetries?: number;
}

/**
 * Resumable event stream.  Tracks the next expected sequence number and
 * reconnects with `?from=<next>` after any interruption, so no event is
 * ever lost or duplicated.  The stream finishes when a `done` event arrives.
 */
export class EventStream {
  nextSeq: number;
  private closed = false;
  private controller: AbortController | null = null;

  constructor(
    private readonly url: (from: number) => string,
    private readonly onEvent: (event: Envelope) => void,
    private readonly options: StreamOptions = {},
  ) {
    this.nextSeq = options.from ?? 0;
  }

  /** Resolves once a `done` event is seen or the stream is stopped. */
  async run(): Promise<void> {
    const retryDelay = this.options.retryDelayMs ?? 250;
    const maxRetries = this.options.maxRetries ?? 20;
    let failures = 0;
    while (!this.closed) {
      try {
        const finished = await this.consumeOnce();
        if (finished) {
          return;
        }
        failures = 0;
      } catch (error) {
        if (this.closed) {
          return;
        }
        failures += 1;
        if (failures > maxRetries) {
          throw error;
        }
      }
      await new Promise((resolve) => setTimeout(resolve, retryDelay));
    }
  }

  stop(): void {
    this.closed = true;
    this.controller?.abort();
  }

  private async consumeOnce(): Promise<boolean> {
    this.controller = new AbortController();
    const response = await fetch(this.url(this.nextSeq), {
      signal: this.controller.signal,
    });
    if (!response.ok || response.body === null) {
      throw new Error(`event stream failed with status ${response.status}`);
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    let sawDone = false;
    for (;;) {
      const { done, value } = await reader.read();
      if (done) {
        break;
      }
      buffer += decoder.decode(value, { stream: true });
      const { events, rest } = parseSse(buffer);
      buffer = rest;
      for (const event of events) {
        if (this.closed) {
          // stop() was called from a handler; drop the rest of the buffer.
          return true;
        }
        if (event.seq < this.nextSeq) {
          continue; // replayed duplicate after a reconnect race
        }
        this.nextSeq = event.seq + 1;
        this.onEvent(event);
        if (event.type === "done") {
          sawDone = true;
        }
      }
    }
    return sawDone;
  }
}
