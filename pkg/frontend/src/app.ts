/** Editor entry point: wires the viewport, edit panel, probe panel, and the
 * server render preview together. All geometry changes round-trip through
 * the HTTP service.
 */

import { ApiClient, ApiError, type RenderMode, type Transform } from "./api.js";
import { decodePfm, encodePfm, scalePfm, tonemapToRgba, type PfmImage } from "./pfm.js";
import {
  axisAngleQuaternion,
  RenderGate,
  selectionBox,
  validateTransform,
  type CloudSnapshot,
} from "./state.js";
import { Viewport } from "./viewport.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function num(id: string, fallback = 0): number {
  const v = Number(el<HTMLInputElement>(id).value);
  return Number.isFinite(v) ? v : fallback;
}

const api = new ApiClient(".."); // bundle is served at /ui; API at the root
const viewport = new Viewport(el<HTMLCanvasElement>("viewport"));
const gate = new RenderGate();
let selectedIds: number[] = [];
let currentProbe: PfmImage | null = null;

function setStatus(text: string, isError = false): void {
  const node = el<HTMLElement>("status-line");
  node.textContent = text;
  node.classList.toggle("error", isError);
}

function setBusy(busy: boolean): void {
  for (const id of ["apply-edit", "undo", "render-now", "probe-upload-btn",
                    "probe-scale-btn", "probe-reset"]) {
    el<HTMLButtonElement>(id).disabled = busy;
  }
}

async function refreshStatus(): Promise<void> {
  const s = await api.status();
  el<HTMLElement>("session-info").textContent =
    `version ${s.version} · ${s.points} points · undo depth ${s.undo_depth}`;
}

async function refreshPoints(fit = false): Promise<void> {
  const p = await api.points(8000);
  const cloud: CloudSnapshot = {
    version: p.version,
    ids: p.ids,
    positions: p.positions as CloudSnapshot["positions"],
  };
  viewport.setCloud(cloud);
  if (fit) viewport.fitToCloud();
  selectedIds = [];
  el<HTMLElement>("selection-info").textContent = "no selection";
}

async function refreshRender(): Promise<void> {
  const mode = el<HTMLSelectElement>("render-mode").value as RenderMode;
  const requestId = gate.begin();
  setStatus(`rendering (${mode})...`);
  try {
    const out = await api.render(mode, viewport.camera());
    if (!gate.accept(requestId, out.version)) return; // superseded request
    const img = el<HTMLImageElement>("render-img");
    const url = URL.createObjectURL(out.blob);
    img.onload = () => URL.revokeObjectURL(url);
    img.src = url;
    el<HTMLElement>("render-version").textContent = `render @ version ${out.version}`;
    setStatus("ready");
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      setStatus("render in flight; try again shortly", true);
    } else {
      setStatus(String(err), true);
    }
  }
}

async function refreshProbe(): Promise<void> {
  const { bytes } = await api.probe();
  currentProbe = decodePfm(bytes);
  const canvas = el<HTMLCanvasElement>("probe-canvas");
  canvas.width = currentProbe.width;
  canvas.height = currentProbe.height;
  const ctx = canvas.getContext("2d");
  if (ctx) {
    ctx.putImageData(
      new ImageData(tonemapToRgba(currentProbe), currentProbe.width, currentProbe.height),
      0, 0,
    );
  }
}

function readTransform(): Transform {
  const t: Transform = {
    translation: [num("tx"), num("ty"), num("tz")],
    scale: num("scale", 1),
  };
  const deg = num("rot-deg");
  if (deg !== 0) {
    t.quaternion = axisAngleQuaternion([num("ax"), num("ay"), num("az", 1)], deg);
  }
  return t;
}

async function applyEdit(): Promise<void> {
  const sel = selectionBox(viewport.cloud, selectedIds);
  if (!sel) {
    setStatus("select points first (shift-drag in the viewport)", true);
    return;
  }
  const transform = readTransform();
  const problem = validateTransform(transform);
  if (problem) {
    setStatus(problem, true);
    return;
  }
  setBusy(true);
  try {
    const out = await api.edit(sel, transform);
    setStatus(`edit applied: ${out.moved} points moved, version ${out.version}`);
    await refreshPoints();
    await refreshStatus();
    await refreshRender();
  } catch (err) {
    setStatus(String(err), true);
  } finally {
    setBusy(false);
  }
}

async function undoEdit(): Promise<void> {
  setBusy(true);
  try {
    const out = await api.undo();
    setStatus(out.restored ? `undone, version ${out.version}` : "nothing to undo");
    await refreshPoints();
    await refreshStatus();
    if (out.restored) await refreshRender();
  } catch (err) {
    setStatus(String(err), true);
  } finally {
    setBusy(false);
  }
}

async function uploadProbe(file: File): Promise<void> {
  setBusy(true);
  try {
    const out = await api.relight(await file.arrayBuffer());
    setStatus(`probe ${out.probe}, version ${out.version}`);
    await refreshProbe();
    await refreshStatus();
  } catch (err) {
    if (err instanceof ApiError) setStatus(`probe rejected: ${err.detail}`, true);
    else setStatus(String(err), true);
  } finally {
    setBusy(false);
  }
}

async function scaleProbe(): Promise<void> {
  if (!currentProbe) return;
  setBusy(true);
  try {
    const out = await api.relight(encodePfm(scalePfm(currentProbe, num("probe-scale", 1))));
    setStatus(`probe ${out.probe}, version ${out.version}`);
    await refreshProbe();
    await refreshStatus();
  } catch (err) {
    setStatus(String(err), true);
  } finally {
    setBusy(false);
  }
}

async function resetProbe(): Promise<void> {
  setBusy(true);
  try {
    const out = await api.relightReset();
    setStatus(`probe ${out.probe}, version ${out.version}`);
    await refreshProbe();
    await refreshStatus();
  } catch (err) {
    setStatus(String(err), true);
  } finally {
    setBusy(false);
  }
}

viewport.onSelection = (ids) => {
  selectedIds = ids;
  el<HTMLElement>("selection-info").textContent =
    ids.length ? `${ids.length} points selected` : "empty selection";
};

el<HTMLButtonElement>("apply-edit").addEventListener("click", () => void applyEdit());
el<HTMLButtonElement>("undo").addEventListener("click", () => void undoEdit());
el<HTMLButtonElement>("render-now").addEventListener("click", () => void refreshRender());
el<HTMLButtonElement>("probe-reset").addEventListener("click", () => void resetProbe());
el<HTMLButtonElement>("probe-scale-btn").addEventListener("click", () => void scaleProbe());
el<HTMLButtonElement>("probe-upload-btn").addEventListener("click", () => {
  const input = el<HTMLInputElement>("probe-file");
  const file = input.files?.[0];
  if (file) void uploadProbe(file);
  else setStatus("choose a .pfm file first", true);
});
el<HTMLSelectElement>("render-mode").addEventListener("change", () => void refreshRender());

async function init(): Promise<void> {
  setStatus("loading session...");
  try {
    await refreshStatus();
    await refreshPoints(true);
    await refreshProbe();
    await refreshRender();
  } catch (err) {
    setStatus(`failed to load session: ${err}`, true);
  }
}

void init();
