import { ApiClient } from "./api.js";
import { drawWorld } from "./render.js";
import { initialView, reduce, type ViewModel } from "./state.js";
import { EventStream } from "./sse.js";
import type { Snapshot } from "./types.js";

const api = new ApiClient("");

function byId<T extends HTMLElement>(id: string): T {
  const element = document.getElementById(id);
  if (element === null) {
    throw new Error(`missing element #${id}`);
  }
  return element as T;
}

let sessionId: string | null = null;
let stream: EventStream | null = null;
let view: ViewModel = initialView();

function renderView(): void {
  byId<HTMLElement>("session-state").textContent = view.sessionState;
  byId<HTMLOListElement>("plan").innerHTML = view.plan
    .map((skill, i) => `<li class="${i < (view.skill ? view.plan.indexOf(view.skill) : 0) ? "completed" : ""}">${skill}</li>`)
    .join("");
  byId<HTMLElement>("skill").textContent = view.skill ?? "—";
  byId<HTMLPreElement>("program").innerHTML = view.program
    .map((line, i) => (i === view.stepIndex ? `<mark>${line}</mark>` : line))
    .join("\n");
  byId<HTMLUListElement>("corrections").innerHTML = view.corrections
    .map((c) => `<li><b>${c.skill}</b>: ${c.text}</li>`)
    .join("");
  byId<HTMLUListElement>("errors").innerHTML = view.errors
    .map((message) => `<li>${message}</li>`)
    .join("");
  byId<HTMLUListElement>("distilled").innerHTML = view.distilled
    .map((key) => `<li>${key}</li>`)
    .join("");
}

function renderWorld(snapshot: Snapshot): void {
  const canvas = byId<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d");
  if (ctx !== null) {
    drawWorld(ctx, snapshot.world, canvas.width, canvas.height);
  }
}

async function refreshWorld(): Promise<void> {
  if (sessionId !== null) {
    renderWorld(await api.state(sessionId));
  }
}

async function refreshKb(): Promise<void> {
  const entries = await api.kbList();
  byId<HTMLUListElement>("kb").innerHTML = entries
    .map((entry) => `<li>${entry.kind}:${entry.key}</li>`)
    .join("");
}

async function loadScenarios(): Promise<void> {
  const select = byId<HTMLSelectElement>("scenario");
  const scenarios = await api.scenarios();
  select.innerHTML = scenarios
    .map((s) => `<option value="${s.id}">${s.id} — ${s.title}</option>`)
    .join("");
}

async function startSession(): Promise<void> {
  stream?.stop();
  view = initialView();
  const scenarioId = byId<HTMLSelectElement>("scenario").value;
  const created = await api.createSession(scenarioId);
  sessionId = created.session_id;
  renderWorld(created.state);
  renderView();
  stream = new EventStream(
    (from) => api.eventsUrl(created.session_id, from),
    (event) => {
      view = reduce(view, event);
      renderView();
      if (event.type === "step" || event.type === "done") {
        void refreshWorld();
      }
      if (event.type === "distilled" || event.type === "done") {
        void refreshKb();
      }
    },
  );
  void stream.run();
}

function guarded(action: (id: string) => Promise<Snapshot>): () => void {
  return () => {
    if (sessionId === null) {
      return;
    }
    action(sessionId).catch((error: Error) => {
      byId<HTMLElement>("notice").textContent = error.message;
      setTimeout(() => (byId<HTMLElement>("notice").textContent = ""), 3000);
    });
  };
}

export function wireUp(): void {
  byId<HTMLButtonElement>("start").onclick = () => void startSession();
  byId<HTMLButtonElement>("send-instruction").onclick = guarded((id) =>
    api.instruction(id, byId<HTMLInputElement>("instruction").value),
  );
  byId<HTMLButtonElement>("step").onclick = guarded((id) => api.step(id));
  byId<HTMLButtonElement>("interrupt").onclick = guarded((id) => api.interrupt(id));
  byId<HTMLButtonElement>("send-correction").onclick = guarded((id) =>
    api.correction(id, byId<HTMLInputElement>("correction").value),
  );
  byId<HTMLButtonElement>("approve").onclick = guarded((id) => api.approve(id));
  void loadScenarios();
  void refreshKb();
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", wireUp);
}
