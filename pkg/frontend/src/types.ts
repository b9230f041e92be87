export interface Envelope {
  seq: number;
  type: string;
  payload: Record<string, unknown>;
}

export interface Articulation {
  axis: number[];
  travel_max: number;
  open_fraction: number;
}

export interface WorldObject {
  label: string;
  category: string;
  position: number[];
  extents: number[];
  normal: number[];
  articulation: Articulation | null;
  contains: string[];
  inside_of: string | null;
}

export interface WorldDict {
  objects: Record<string, WorldObject>;
  gripper: {
    position: number[];
    aperture: string;
    holding: string | null;
  };
  workspace: number[][];
  tick: number;
}

export interface Snapshot {
  session_id: string;
  state: string;
  instruction: string | null;
  plan: string[] | null;
  skill_index: number;
  world: WorldDict;
  history: string[];
  corrections: number;
  last_error: string | null;
  ablation: string;
}

export interface ScenarioInfo {
  id: string;
  title: string;
  tasks: string[];
}

export interface KbEntry {
  key: string;
  kind: string;
  constraints: string[];
  preferences: string[];
  robot_constraints: string[];
  task_params: Record<string, unknown>;
}
