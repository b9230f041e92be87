import type { Envelope } from "./types.js";

export interface CorrectionItem {
  skill: string;
  text: string;
}

/** Everything the console renders, derived purely from the event log. */
export interface ViewModel {
  sessionState: string;
  plan: string[];
  planVersion: number;
  skill: string | null;
  program: string[];
  stepIndex: number | null;
  corrections: CorrectionItem[];
  distilled: string[];
  errors: string[];
  done: boolean;
  lastSeq: number;
}

export function initialView(): ViewModel {
  return {
    sessionState: "idle",
    plan: [],
    planVersion: 0,
    skill: null,
    program: [],
    stepIndex: null,
    corrections: [],
    distilled: [],
    errors: [],
    done: false,
    lastSeq: -1,
  };
}

function asString(value: unknown, fallback = ""): string {
  return typeof value === "string" ? value : fallback;
}

function asStringArray(value: unknown): string[] {
  return Array.isArray(value) ? value.map((v) => String(v)) : [];
}

/** Pure reducer: the same event log always yields the same view. */
export function reduce(view: ViewModel, event: Envelope): ViewModel {
  const next: ViewModel = {
    ...view,
    plan: [...view.plan],
    program: [...view.program],
    corrections: [...view.corrections],
    distilled: [...view.distilled],
    errors: [...view.errors],
    lastSeq: event.seq,
  };
  const p = event.payload;
  switch (event.type) {
    case "plan":
      next.plan = asStringArray(p.skills);
      next.planVersion = Number(p.version ?? next.planVersion + 1);
      break;
    case "state": {
      next.sessionState = asString(p.state, next.sessionState);
      if (typeof p.skill === "string") {
        next.skill = p.skill;
        next.program = asString(p.program).split("\n").filter(Boolean);
        next.stepIndex = null;
      }
      break;
    }
    case "step":
      next.sessionState = "executing";
      next.stepIndex = Number(p.index ?? 0);
      break;
    case "correction":
      next.corrections.push({
        skill: asString(p.skill),
        text: asString(p.text),
      });
      break;
    case "solution":
      if (typeof p.program === "string") {
        next.program = p.program.split("\n").filter(Boolean);
        next.stepIndex = null;
      }
      break;
    case "distilled":
      next.distilled.push(asString(p.key));
      break;
    case "error":
      next.errors.push(asString(p.message));
      next.sessionState = "awaiting_correction";
      break;
    case "done":
      next.done = true;
      next.sessionState = "done";
      break;
    default:
      break;
  }
  return next;
}

export function reduceAll(events: Envelope[], from = initialView()): ViewModel {
  return events.reduce(reduce, from);
}
