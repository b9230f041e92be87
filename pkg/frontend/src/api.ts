import type { KbEntry, ScenarioInfo, Snapshot } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

interface CreateOptions {
  ablation?: string;
  userMode?: string;
  taskIndex?: number;
  iteration?: number;
}

/** Thin typed client over the session/KB routes. */
export class ApiClient {
  constructor(readonly base: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await fetch(this.base + path, init);
    const text = await response.text();
    if (!response.ok) {
      let detail = text;
      try {
        detail = (JSON.parse(text) as { detail?: string }).detail ?? text;
      } catch {
        /* plain-text error body */
      }
      throw new ApiError(response.status, detail);
    }
    return JSON.parse(text) as T;
  }

  scenarios(): Promise<ScenarioInfo[]> {
    return this.request("GET", "/scenarios");
  }

  async createSession(
    scenarioId: string,
    options: CreateOptions = {},
  ): Promise<{ session_id: string; state: Snapshot }> {
    return this.request("POST", "/sessions", {
      scenario_id: scenarioId,
      ablation: options.ablation ?? "full",
      user_mode: options.userMode ?? "human",
      task_index: options.taskIndex ?? 0,
      iteration: options.iteration ?? 1,
    });
  }

  instruction(sessionId: string, text: string): Promise<Snapshot> {
    return this.request("POST", `/sessions/${sessionId}/instruction`, { text });
  }

  step(sessionId: string): Promise<Snapshot> {
    return this.request("POST", `/sessions/${sessionId}/step`);
  }

  interrupt(sessionId: string): Promise<Snapshot> {
    return this.request("POST", `/sessions/${sessionId}/interrupt`);
  }

  correction(sessionId: string, text: string): Promise<Snapshot> {
    return this.request("POST", `/sessions/${sessionId}/correction`, { text });
  }

  approve(sessionId: string): Promise<Snapshot> {
    return this.request("POST", `/sessions/${sessionId}/approve`);
  }

  state(sessionId: string): Promise<Snapshot> {
    return this.request("GET", `/sessions/${sessionId}/state`);
  }

  kbList(): Promise<KbEntry[]> {
    return this.request("GET", "/kb");
  }

  kbGet(compositeKey: string): Promise<KbEntry> {
    return this.request("GET", `/kb/${encodeURIComponent(compositeKey)}`);
  }

  kbDelete(compositeKey: string): Promise<{ deleted: string }> {
    return this.request("DELETE", `/kb/${encodeURIComponent(compositeKey)}`);
  }

  eventsUrl(sessionId: string, from: number): string {
    return `${this.base}/sessions/${sessionId}/events?from=${from}`;
  }
}
