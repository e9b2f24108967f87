import { describe, expect, it } from "vitest";

import {
  clampElevation,
  lookAt,
  orbitCamera,
  orbitEye,
  projectPoint,
  type OrbitState,
} from "../src/camera.js";

const state: OrbitState = { azimuth: 0, elevation: 0, distance: 2, target: [0, 0, 0] };

describe("orbit camera", () => {
  it("places the eye on the orbit sphere", () => {
    const eye = orbitEye(state);
    expect(eye[0]).toBeCloseTo(2);
    expect(eye[1]).toBeCloseTo(0);
    expect(eye[2]).toBeCloseTo(0);
    const up = orbitEye({ ...state, elevation: Math.PI / 2 - 1e-3 });
    expect(up[2]).toBeCloseTo(2, 2);
  });

  it("builds an orthonormal c2w looking at the target", () => {
    const m = lookAt([2, 0, 0], [0, 0, 0]);
    // forward column points from eye to target
    expect(m[0][2]).toBeCloseTo(-1);
    expect(m[1][2]).toBeCloseTo(0);
    expect(m[2][2]).toBeCloseTo(0);
    // columns are orthonormal
    for (let a = 0; a < 3; a++) {
      for (let b = 0; b < 3; b++) {
        const dot = m[0][a] * m[0][b] + m[1][a] * m[1][b] + m[2][a] * m[2][b];
        expect(dot).toBeCloseTo(a === b ? 1 : 0, 6);
      }
    }
    // translation column is the eye
    expect(m[0][3]).toBeCloseTo(2);
  });

  it("handles looking straight down the up axis", () => {
    const m = lookAt([0, 0, 3], [0, 0, 0]);
    expect(m[2][2]).toBeCloseTo(-1); // forward is -z
    const r2 = m[0][0] ** 2 + m[1][0] ** 2 + m[2][0] ** 2;
    expect(r2).toBeCloseTo(1);
  });

  it("projects the target to the image center", () => {
    const cam = orbitCamera(state, 300, 640, 480);
    const p = projectPoint(cam, [0, 0, 0]);
    expect(p.x).toBeCloseTo(320);
    expect(p.y).toBeCloseTo(240);
    expect(p.depth).toBeCloseTo(2);
  });

  it("projects offsets with the pinhole model", () => {
    const cam = orbitCamera(state, 300, 640, 480);
    // world +z is screen-up (negative y) for a camera on the +x axis
    const p = projectPoint(cam, [0, 0, 0.5]);
    expect(p.y).toBeLessThan(240);
    expect(Math.abs(p.y - (240 - (300 * 0.5) / 2))).toBeLessThan(1e-6);
  });

  it("flags points behind the camera via depth", () => {
    const cam = orbitCamera(state, 300, 640, 480);
    expect(projectPoint(cam, [3, 0, 0]).depth).toBeLessThan(0);
  });

  it("clamps elevation short of the poles", () => {
    expect(clampElevation(2)).toBeLessThan(Math.PI / 2);
    expect(clampElevation(-2)).toBeGreaterThan(-Math.PI / 2);
    expect(clampElevation(0.3)).toBe(0.3);
  });
});
