/** Typed client for the pointfield editing service.
 *
 * The UI never mutates geometry client-side: every edit round-trips through
 * these endpoints and the service's version id is the single source of truth.
 */

export interface Status {
  version: number;
  points: number;
  light_depth_renders: number;
  undo_depth: number;
}

export interface PointsPayload {
  version: number;
  ids: number[];
  positions: number[][];
  normals: number[][];
}

export interface CameraDict {
  focal: number;
  width: number;
  height: number;
  c2w: number[][];
}

export interface Transform {
  quaternion?: [number, number, number, number]; // w, x, y, z
  translation?: [number, number, number];
  scale?: number;
  pivot?: [number, number, number];
}

export type Selection =
  | { indices: number[] }
  | { box: [[number, number, number], [number, number, number]] };

export type RenderMode = "radiance" | "diffuse" | "pbr" | "relit";

export interface RenderResult {
  version: number;
  blob: Blob;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchFn = typeof fetch;

async function raise(res: Response): Promise<never> {
  let detail = res.statusText;
  try {
    const body = await res.json();
    if (typeof body.detail === "string") detail = body.detail;
    else if (body.detail !== undefined) detail = JSON.stringify(body.detail);
  } catch {
    /* non-JSON error body: keep the status text */
  }
  throw new ApiError(res.status, detail);
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchFn = fetch.bind(globalThis),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.base + path);
    if (!res.ok) await raise(res);
    return res.json() as Promise<T>;
  }

  private async postJson<T>(path: string, payload: unknown): Promise<T> {
    const res = await this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!res.ok) await raise(res);
    return res.json() as Promise<T>;
  }

  status(): Promise<Status> {
    return this.getJson("/status");
  }

  points(maxPoints = 20000): Promise<PointsPayload> {
    return this.getJson(`/points?max_points=${maxPoints}`);
  }

  edit(
    selection: Selection,
    transform: Transform,
  ): Promise<{ version: number; moved: number }> {
    return this.postJson("/edit", { selection, transform });
  }

  undo(): Promise<{ version: number; restored: boolean }> {
    return this.postJson("/undo", {});
  }

  async render(mode: RenderMode, camera: CameraDict): Promise<RenderResult> {
    const res = await this.fetchFn(this.base + "/render", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ mode, camera }),
    });
    if (!res.ok) await raise(res);
    const version = Number(res.headers.get("X-Version") ?? -1);
    return { version, blob: await res.blob() };
  }

  async probe(): Promise<{ version: number; bytes: ArrayBuffer }> {
    const res = await this.fetchFn(this.base + "/probe");
    if (!res.ok) await raise(res);
    const version = Number(res.headers.get("X-Version") ?? -1);
    return { version, bytes: await res.arrayBuffer() };
  }

  async relight(pfmBytes: ArrayBuffer): Promise<{ version: number; probe: string }> {
    const res = await this.fetchFn(this.base + "/relight", {
      method: "POST",
      headers: { "content-type": "application/octet-stream" },
      body: pfmBytes,
    });
    if (!res.ok) await raise(res);
    return res.json();
  }

  relightReset(): Promise<{ version: number; probe: string }> {
    return this.postJson("/relight", { reset: true });
  }
}
