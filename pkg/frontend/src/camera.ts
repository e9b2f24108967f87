/** Orbit camera producing camera-to-world matrices in the service's
 * convention: +z forward, +x right, +y down (image coordinates), world up
 * is +z. Matches the server-side look_at so UI renders and dataset views
 * agree.
 */

import type { CameraDict } from "./api.js";

export type Vec3 = [number, number, number];

export interface OrbitState {
  azimuth: number; // radians around world +z
  elevation: number; // radians above the horizontal plane
  distance: number;
  target: Vec3;
}

const EPS = 1e-8;

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

function normalize(a: Vec3): Vec3 {
  const n = norm(a);
  if (n < EPS) throw new Error("zero-length vector");
  return [a[0] / n, a[1] / n, a[2] / n];
}

export function orbitEye(s: OrbitState): Vec3 {
  const ce = Math.cos(s.elevation);
  return [
    s.target[0] + s.distance * ce * Math.cos(s.azimuth),
    s.target[1] + s.distance * ce * Math.sin(s.azimuth),
    s.target[2] + s.distance * Math.sin(s.elevation),
  ];
}

export function lookAt(eye: Vec3, target: Vec3, up: Vec3 = [0, 0, 1]): number[][] {
  const fwd = normalize(sub(target, eye));
  let right = cross(fwd, up);
  if (norm(right) < EPS) right = cross(fwd, [0, 1, 0]);
  right = normalize(right);
  const down = cross(fwd, right);
  return [
    [right[0], down[0], fwd[0], eye[0]],
    [right[1], down[1], fwd[1], eye[1]],
    [right[2], down[2], fwd[2], eye[2]],
    [0, 0, 0, 1],
  ];
}

export function orbitCamera(
  s: OrbitState,
  focal: number,
  width: number,
  height: number,
): CameraDict {
  return { focal, width, height, c2w: lookAt(orbitEye(s), s.target) };
}

export interface Projected {
  x: number;
  y: number;
  depth: number; // camera-frame z; points behind the eye have depth <= 0
}

/** World point -> pixel coords + depth under the pinhole model above. */
export function projectPoint(cam: CameraDict, p: Vec3): Projected {
  const m = cam.c2w;
  const d: Vec3 = [p[0] - m[0][3], p[1] - m[1][3], p[2] - m[2][3]];
  // camera frame = R^T * (p - eye); columns of R are right/down/forward
  const cx = m[0][0] * d[0] + m[1][0] * d[1] + m[2][0] * d[2];
  const cy = m[0][1] * d[0] + m[1][1] * d[1] + m[2][1] * d[2];
  const cz = m[0][2] * d[0] + m[1][2] * d[1] + m[2][2] * d[2];
  return {
    x: cam.width / 2 + (cam.focal * cx) / cz,
    y: cam.height / 2 + (cam.focal * cy) / cz,
    depth: cz,
  };
}

export function clampElevation(e: number): number {
  const lim = Math.PI / 2 - 1e-3;
  return Math.min(lim, Math.max(-lim, e));
}
