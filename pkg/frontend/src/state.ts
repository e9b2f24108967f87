/** Client-side view state and version bookkeeping.
 *
 * Invariants: selections reference only ids received from GET /points;
 * transform scale is positive; a displayed render always matches the
 * session version it was requested at (stale responses are dropped).
 */

import type { CameraDict, Selection, Transform } from "./api.js";
import { projectPoint, type Vec3 } from "./camera.js";

export interface CloudSnapshot {
  version: number;
  ids: number[];
  positions: Vec3[];
}

export interface Rect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

/** Ids of points whose screen projection falls inside the drag rectangle. */
export function boxSelect(cloud: CloudSnapshot, cam: CameraDict, rect: Rect): number[] {
  const xlo = Math.min(rect.x0, rect.x1);
  const xhi = Math.max(rect.x0, rect.x1);
  const ylo = Math.min(rect.y0, rect.y1);
  const yhi = Math.max(rect.y0, rect.y1);
  const out: number[] = [];
  for (let i = 0; i < cloud.ids.length; i++) {
    const p = projectPoint(cam, cloud.positions[i]);
    if (p.depth > 0 && p.x >= xlo && p.x <= xhi && p.y >= ylo && p.y <= yhi) {
      out.push(cloud.ids[i]);
    }
  }
  return out;
}

/** World-space AABB of the selected (decimated) points, slightly padded so
 * the server-side box selection catches the full-resolution neighbors of the
 * decimated ones. */
export function selectionBox(
  cloud: CloudSnapshot,
  selected: number[],
  pad = 0.02,
): Selection | null {
  const chosen = new Set(selected);
  const lo: Vec3 = [Infinity, Infinity, Infinity];
  const hi: Vec3 = [-Infinity, -Infinity, -Infinity];
  let count = 0;
  for (let i = 0; i < cloud.ids.length; i++) {
    if (!chosen.has(cloud.ids[i])) continue;
    count++;
    for (let c = 0; c < 3; c++) {
      lo[c] = Math.min(lo[c], cloud.positions[i][c]);
      hi[c] = Math.max(hi[c], cloud.positions[i][c]);
    }
  }
  if (count === 0) return null;
  return {
    box: [
      [lo[0] - pad, lo[1] - pad, lo[2] - pad],
      [hi[0] + pad, hi[1] + pad, hi[2] + pad],
    ],
  };
}

export function validateTransform(t: Transform): string | null {
  if (t.scale !== undefined && !(t.scale > 0)) return "scale must be positive";
  if (t.quaternion !== undefined) {
    const n = Math.hypot(...t.quaternion);
    if (!(n > 1e-8)) return "quaternion must be nonzero";
  }
  if (t.translation !== undefined && t.translation.some((v) => !Number.isFinite(v))) {
    return "translation must be finite";
  }
  return null;
}

/** Axis-angle helper for the rotation inputs; returns a w-first unit
 * quaternion. */
export function axisAngleQuaternion(
  axis: Vec3,
  degrees: number,
): [number, number, number, number] {
  const n = Math.hypot(...axis);
  if (n < 1e-8) return [1, 0, 0, 0];
  const half = (degrees * Math.PI) / 360;
  const s = Math.sin(half) / n;
  return [Math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s];
}

/** Keeps only the newest requested render: stale responses (by request
 * order) and responses for superseded versions are dropped. */
export class RenderGate {
  private latestRequest = 0;
  private displayedVersion = -1;

  begin(): number {
    return ++this.latestRequest;
  }

  /** True iff this response should be displayed. */
  accept(requestId: number, version: number): boolean {
    if (requestId !== this.latestRequest) return false;
    this.displayedVersion = version;
    return true;
  }

  get version(): number {
    return this.displayedVersion;
  }
}
