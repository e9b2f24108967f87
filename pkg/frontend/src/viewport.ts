/** Canvas point-cloud viewport: orbit/zoom with the mouse, box select with
 * shift-drag. Pure 2D canvas splatting; the neural render lives in the
 * server image panel next to it.
 */

import type { CameraDict } from "./api.js";
import {
  clampElevation,
  orbitCamera,
  projectPoint,
  type OrbitState,
  type Vec3,
} from "./camera.js";
import { boxSelect, type CloudSnapshot, type Rect } from "./state.js";

export class Viewport {
  orbit: OrbitState = { azimuth: -2.2, elevation: 0.5, distance: 4, target: [0, 0, 0.3] };
  focal = 400;
  cloud: CloudSnapshot = { version: -1, ids: [], positions: [] };
  selected = new Set<number>();
  onSelection: (ids: number[]) => void = () => {};
  onCameraChange: () => void = () => {};

  private drag: { mode: "orbit" | "box"; x: number; y: number } | null = null;
  private rect: Rect | null = null;
  private ctx: CanvasRenderingContext2D;

  constructor(private canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas unavailable");
    this.ctx = ctx;
    canvas.addEventListener("mousedown", (e) => this.down(e));
    canvas.addEventListener("mousemove", (e) => this.move(e));
    window.addEventListener("mouseup", (e) => this.up(e));
    canvas.addEventListener("wheel", (e) => this.wheel(e), { passive: false });
  }

  camera(): CameraDict {
    return orbitCamera(this.orbit, this.focal, this.canvas.width, this.canvas.height);
  }

  setCloud(cloud: CloudSnapshot): void {
    this.cloud = cloud;
    this.selected.clear();
    this.draw();
  }

  fitToCloud(): void {
    if (!this.cloud.positions.length) return;
    const c: Vec3 = [0, 0, 0];
    for (const p of this.cloud.positions) for (let i = 0; i < 3; i++) c[i] += p[i];
    for (let i = 0; i < 3; i++) c[i] /= this.cloud.positions.length;
    let r = 0;
    for (const p of this.cloud.positions) {
      r = Math.max(r, Math.hypot(p[0] - c[0], p[1] - c[1], p[2] - c[2]));
    }
    this.orbit.target = c;
    this.orbit.distance = Math.max(1e-3, 3 * r);
    this.draw();
  }

  draw(): void {
    const { ctx, canvas } = this;
    ctx.fillStyle = "#10151c";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    const cam = this.camera();
    for (let i = 0; i < this.cloud.ids.length; i++) {
      const p = projectPoint(cam, this.cloud.positions[i]);
      if (p.depth <= 0) continue;
      ctx.fillStyle = this.selected.has(this.cloud.ids[i]) ? "#ffb347" : "#7fb4d8";
      ctx.fillRect(p.x - 1, p.y - 1, 2, 2);
    }
    if (this.rect) {
      ctx.strokeStyle = "#ffb347";
      ctx.setLineDash([4, 3]);
      ctx.strokeRect(
        Math.min(this.rect.x0, this.rect.x1),
        Math.min(this.rect.y0, this.rect.y1),
        Math.abs(this.rect.x1 - this.rect.x0),
        Math.abs(this.rect.y1 - this.rect.y0),
      );
      ctx.setLineDash([]);
    }
  }

  private pos(e: MouseEvent): [number, number] {
    const r = this.canvas.getBoundingClientRect();
    return [
      ((e.clientX - r.left) * this.canvas.width) / r.width,
      ((e.clientY - r.top) * this.canvas.height) / r.height,
    ];
  }

  private down(e: MouseEvent): void {
    const [x, y] = this.pos(e);
    this.drag = { mode: e.shiftKey ? "box" : "orbit", x, y };
    if (this.drag.mode === "box") this.rect = { x0: x, y0: y, x1: x, y1: y };
    e.preventDefault();
  }

  private move(e: MouseEvent): void {
    if (!this.drag) return;
    const [x, y] = this.pos(e);
    if (this.drag.mode === "orbit") {
      this.orbit.azimuth -= (x - this.drag.x) * 0.008;
      this.orbit.elevation = clampElevation(this.orbit.elevation + (y - this.drag.y) * 0.008);
      this.drag.x = x;
      this.drag.y = y;
      this.onCameraChange();
    } else if (this.rect) {
      this.rect.x1 = x;
      this.rect.y1 = y;
    }
    this.draw();
  }

  private up(_e: MouseEvent): void {
    if (this.drag?.mode === "box" && this.rect) {
      const ids = boxSelect(this.cloud, this.camera(), this.rect);
      this.selected = new Set(ids);
      this.onSelection(ids);
    }
    this.drag = null;
    this.rect = null;
    this.draw();
  }

  private wheel(e: WheelEvent): void {
    this.orbit.distance = Math.max(0.05, this.orbit.distance * Math.exp(e.deltaY * 1e-3));
    this.onCameraChange();
    this.draw();
    e.preventDefault();
  }
}
