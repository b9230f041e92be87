import { describe, expect, it } from "vitest";

import { parseSse } from "./sse.js";

function frame(seq: number, type: string, payload: unknown): string {
  return `id: ${seq}\nevent: ${type}\ndata: ${JSON.stringify(payload)}\n\n`;
}

describe("parseSse", () => {
  it("parses a single complete event", () => {
    const { events, rest } = parseSse(frame(0, "plan", { skills: ["a"] }));
    expect(rest).toBe("");
    expect(events).toEqual([{ seq: 0, type: "plan", payload: { skills: ["a"] } }]);
  });

  it("parses several events in one chunk", () => {
    const text = frame(0, "plan", {}) + frame(1, "step", { index: 0 });
    const { events } = parseSse(text);
    expect(events.map((e) => e.seq)).toEqual([0, 1]);
  });

  it("keeps an unterminated tail for the next chunk", () => {
    const full = frame(3, "state", { state: "executing" });
    const cut = full.length - 5;
    const first = parseSse(full.slice(0, cut));
    expect(first.events).toEqual([]);
    const second = parseSse(first.rest + full.slice(cut));
    expect(second.events).toHaveLength(1);
    expect(second.events[0].seq).toBe(3);
    expect(second.rest).toBe("");
  });

  it("survives arbitrary chunking of a long stream", () => {
    const full = Array.from({ length: 10 }, (_, i) =>
      frame(i, "step", { index: i }),
    ).join("");
    for (const size of [1, 3, 7, 16]) {
      const collected: number[] = [];
      let buffer = "";
      for (let at = 0; at < full.length; at += size) {
        buffer += full.slice(at, at + size);
        const { events, rest } = parseSse(buffer);
        buffer = rest;
        collected.push(...events.map((e) => e.seq));
      }
      expect(collected).toEqual([0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
    }
  });

  it("ignores blocks without data", () => {
    const { events } = parseSse(": keepalive\n\n" + frame(0, "done", {}));
    expect(events).toHaveLength(1);
    expect(events[0].type).toBe("done");
  });
});
