import type { WorldDict, WorldObject } from "./types.js";

export interface Transform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

const MARGIN = 20;

/**
 * Fit the workspace's x/y extent into a canvas of the given size, preserving
 * aspect ratio.  World y points away from the viewer, so it maps to a
 * *decreasing* canvas y (top-down view with the robot at the bottom edge).
 */
export function worldTransform(
  min: number[],
  max: number[],
  width: number,
  height: number,
): Transform {
  const spanX = max[0] - min[0];
  const spanY = max[1] - min[1];
  const scale = Math.min((width - 2 * MARGIN) / spanX, (height - 2 * MARGIN) / spanY);
  return {
    scale,
    offsetX: MARGIN - min[0] * scale,
    offsetY: height - MARGIN + min[1] * scale,
  };
}

export function toCanvas(t: Transform, x: number, y: number): [number, number] {
  return [t.offsetX + x * t.scale, t.offsetY - y * t.scale];
}

/** Minimal subset of CanvasRenderingContext2D the renderer needs. */
export interface Context2d {
  clearRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  font: string;
}

function objectColor(object: WorldObject): string {
  if (object.articulation !== null) {
    return object.articulation.open_fraction >= 0.6 ? "#7cb66b" : "#b66b6b";
  }
  return "#6b8db6";
}

export function drawWorld(
  ctx: Context2d,
  world: WorldDict,
  width: number,
  height: number,
): void {
  const [min, max] = world.workspace;
  const t = worldTransform(min, max, width, height);
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#999";
  const [wx0, wy0] = toCanvas(t, min[0], max[1]);
  ctx.strokeRect(wx0, wy0, (max[0] - min[0]) * t.scale, (max[1] - min[1]) * t.scale);
  ctx.font = "11px sans-serif";
  for (const id of Object.keys(world.objects).sort()) {
    const object = world.objects[id];
    if (object.inside_of !== null) {
      continue; // rendered as part of its container's label
    }
    const [ex, ey] = [object.extents[0], object.extents[1]];
    const [cx, cy] = toCanvas(t, object.position[0] - ex / 2, object.position[1] + ey / 2);
    ctx.fillStyle = objectColor(object);
    ctx.fillRect(cx, cy, ex * t.scale, ey * t.scale);
    ctx.fillStyle = "#222";
    const suffix = object.contains.length > 0 ? ` [${object.contains.join(", ")}]` : "";
    ctx.fillText(object.label + suffix, cx, cy - 3);
  }
  const [gx, gy] = toCanvas(t, world.gripper.position[0], world.gripper.position[1]);
  ctx.beginPath();
  ctx.arc(gx, gy, world.gripper.aperture === "open" ? 7 : 4, 0, Math.PI * 2);
  ctx.strokeStyle = "#222";
  ctx.stroke();
  if (world.gripper.holding !== null) {
    ctx.fillStyle = "#222";
    ctx.fillText(`holding ${world.gripper.holding}`, gx + 10, gy);
  }
}
