// End-to-end walkthrough against a real server: the put-scissors task driven
// entirely through the console's client modules, plus an event-stream
// reconnect in the middle of the transcript.
import { spawn, type ChildProcess } from "node:child_process";
import { fileURLToPath } from "node:url";
import path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "./api.js";
import { EventStream } from "./sse.js";
import { reduceAll } from "./state.js";
import type { Envelope, Snapshot } from "./types.js";

const PORT = 8471;
const BASE = `http://127.0.0.1:${PORT}`;
const REPO_ROOT = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..", "..");

let server: ChildProcess;
const api = new ApiClient(BASE);

async function waitForServer(): Promise<void> {
  for (let attempt = 0; attempt < 100; attempt += 1) {
    try {
      const response = await fetch(`${BASE}/scenarios`);
      if (response.ok) {
        return;
      }
    } catch {
      /* not listening yet */
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  server = spawn(
    "python3",
    ["-m", "skillloop.cli", "serve", "--scenario", "scenarios", "--port", String(PORT)],
    { cwd: REPO_ROOT, stdio: "ignore" },
  );
  await waitForServer();
}, 30_000);

afterAll(() => {
  server.kill();
});

async function collectAll(sessionId: string, from = 0): Promise<Envelope[]> {
  const events: Envelope[] = [];
  const stream = new EventStream((f) => api.eventsUrl(sessionId, f), (e) => events.push(e), {
    from,
  });
  await stream.run();
  return events;
}

describe("walkthrough", () => {
  let sessionId: string;
  let transcript: Envelope[];

  it(
    "completes the drawer task through the client",
    async () => {
      const created = await api.createSession("put_scissors");
      sessionId = created.session_id;

      let snap: Snapshot = await api.instruction(
        sessionId,
        "Put the scissors into the top drawer",
      );
      expect(snap.plan?.[0]).toBe("Pick up the scissors");

      // The plan ignores the closed drawer: interrupt and fix the ordering.
      await api.interrupt(sessionId);
      snap = await api.correction(sessionId, "You should open the drawer first");
      expect(snap.plan?.[0]).toBe("Open the top drawer");

      // Nudge the grasp toward the off-center handle when execution stalls.
      const grasps = ["move right a little bit", "a bit more"];
      for (let guard = 0; guard < 200 && snap.state !== "done"; guard += 1) {
        if (snap.state === "executing") {
          snap = await api.step(sessionId);
        } else if (snap.last_error !== null) {
          const text = grasps.shift();
          expect(text, "ran out of scripted corrections").toBeDefined();
          snap = await api.correction(sessionId, text as string);
        } else {
          snap = await api.approve(sessionId);
        }
      }
      expect(snap.state).toBe("done");
      expect(snap.corrections).toBe(3);
      expect(grasps).toHaveLength(0);
    },
    30_000,
  );

  it("streams a transcript the reducer can replay", async () => {
    transcript = await collectAll(sessionId);
    expect(transcript.map((e) => e.seq)).toEqual(transcript.map((_, i) => i));
    const view = reduceAll(transcript);
    expect(view.done).toBe(true);
    expect(view.plan[0]).toBe("Open the top drawer");
    expect(view.corrections.map((c) => c.text)).toEqual([
      "You should open the drawer first",
      "move right a little bit",
      "a bit more",
    ]);
  });

  it("loses no events across a mid-stream reconnect", async () => {
    const received: Envelope[] = [];
    const first = new EventStream(
      (f) => api.eventsUrl(sessionId, f),
      (event) => {
        received.push(event);
        if (received.length === 5) {
          first.stop(); // simulate a dropped connection
        }
      },
    );
    await first.run();
    expect(received).toHaveLength(5);

    const rest = await collectAll(sessionId, first.nextSeq);
    expect([...received, ...rest]).toEqual(transcript);
  });

  it("makes the distilled knowledge visible in the KB panel data", async () => {
    const entries = await api.kbList();
    const keys = entries.map((entry) => `${entry.kind}:${entry.key}`);
    expect(keys).toContain("skill:Open the top drawer");
    expect(keys).toContain("plan:Put the scissors into the top drawer");
  });
});
