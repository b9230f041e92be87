import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "./api.js";

interface Recorded {
  url: string;
  method: string;
  body?: string;
}

function install(status: number, body: unknown): Recorded[] {
  const recorded: Recorded[] = [];
  vi.stubGlobal("fetch", async (url: string, init?: RequestInit) => {
    recorded.push({
      url: String(url),
      method: init?.method ?? "GET",
      body: init?.body as string | undefined,
    });
    return new Response(JSON.stringify(body), { status });
  });
  return recorded;
}

afterEach(() => vi.unstubAllGlobals());

describe("ApiClient", () => {
  it("creates sessions with defaults filled in", async () => {
    const recorded = install(200, { session_id: "s0", state: {} });
    const api = new ApiClient("http://h");
    const created = await api.createSession("put_scissors");
    expect(created.session_id).toBe("s0");
    expect(recorded[0].url).toBe("http://h/sessions");
    expect(JSON.parse(recorded[0].body ?? "")).toEqual({
      scenario_id: "put_scissors",
      ablation: "full",
      user_mode: "human",
      task_index: 0,
      iteration: 1,
    });
  });

  it("hits the per-session routes with the right verbs", async () => {
    const recorded = install(200, {});
    const api = new ApiClient("");
    await api.instruction("s1", "Open the top drawer");
    await api.step("s1");
    await api.interrupt("s1");
    await api.correction("s1", "a bit more");
    await api.approve("s1");
    await api.state("s1");
    expect(recorded.map((r) => [r.method, r.url])).toEqual([
      ["POST", "/sessions/s1/instruction"],
      ["POST", "/sessions/s1/step"],
      ["POST", "/sessions/s1/interrupt"],
      ["POST", "/sessions/s1/correction"],
      ["POST", "/sessions/s1/approve"],
      ["GET", "/sessions/s1/state"],
    ]);
    expect(JSON.parse(recorded[3].body ?? "")).toEqual({ text: "a bit more" });
  });

  it("encodes composite KB keys", async () => {
    const recorded = install(200, {});
    await new ApiClient("").kbGet("skill:Open the top drawer");
    expect(recorded[0].url).toBe("/kb/skill%3AOpen%20the%20top%20drawer");
  });

  it("surfaces the server's error detail with the status code", async () => {
    install(409, { detail: "requires state 'idle'" });
    const api = new ApiClient("");
    const error = await api.step("s1").catch((e: unknown) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(409);
    expect((error as ApiError).message).toBe("requires state 'idle'");
  });

  it("builds resumable event-stream urls", () => {
    const api = new ApiClient("http://h");
    expect(api.eventsUrl("s2", 7)).toBe("http://h/sessions/s2/events?from=7");
  });
});
