"""HTTP editing service: the browser UI drives point selection, rigid edits,
undo, rendering, and probe swaps through this JSON API."""

from __future__ import annotations

import io
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image

from . import illumination as il
from . import meshedit as me
from . import renderer as rd
from .config import PipelineConfig
from .imaging import Camera


class SessionState:
    """One loaded checkpoint plus edit history and render caches.

    Mutations are serialized by a mutex; an edit arriving while a render is
    in flight is rejected with 409 so every served image matches a single
    version id.
    """

    def __init__(self, cfg: PipelineConfig, checkpoint_path):
        self.cfg = cfg
        self.model, self.cloud, _ = rd.load_session(checkpoint_path)
        self.version = 0
        self.undo_stack: list[tuple] = []  # (indices, positions, normals, version)
        self.probe_override: np.ndarray | None = None
        self.light_depths: il.LightDepthSet | None = None
        self.light_depth_version = -1
        self.light_depth_renders = 0
        self.mutex = threading.Lock()
        self.render_in_flight = False

    def depth_set(self) -> il.LightDepthSet:
        """Light depth maps for the current geometry, regenerated at most
        once per version."""
        if self.light_depth_version != self.version or self.light_depths is None:
            self.light_depths = il.render_light_depths(
                self.model, self.cloud, self.cfg.stage2.light_map_res,
                samples=self.cfg.stage2.light_map_samples,
                bias_scale=self.cfg.stage2.shadow_bias_scale)
            self.light_depth_version = self.version
            self.light_depth_renders += 1
        return self.light_depths


def _parse_selection_transform(state: SessionState, payload: dict) -> me.EditSelection:
    if not isinstance(payload, dict):
        raise HTTPException(422, "body must be a JSON object")
    selection = payload.get("selection")
    transform = payload.get("transform")
    if not isinstance(selection, dict) or not isinstance(transform, dict):
        raise HTTPException(422, "payload needs 'selection' and 'transform' objects")
    spec = dict(selection)
    for key in ("quaternion", "translation", "scale", "pivot"):
        if key in transform:
            spec[key] = transform[key]
    try:
        return me.selection_from_spec(state.cloud, spec)
    except (ValueError, TypeError, KeyError) as exc:
        raise HTTPException(422, f"malformed selection/transform: {exc}") from exc


def create_app(cfg: PipelineConfig, checkpoint_path) -> FastAPI:
    state = SessionState(cfg, checkpoint_path)
    app = FastAPI(title="pointfield editor service")
    app.state.session = state

    @app.get("/status")
    def status():
        return {"version": state.version, "points": len(state.cloud),
                "light_depth_renders": state.light_depth_renders,
                "undo_depth": len(state.undo_stack)}

    @app.get("/points")
    def points(max_points: int = 20000):
        stride = max(1, int(np.ceil(len(state.cloud) / max(max_points, 1))))
        ids = np.arange(0, len(state.cloud), stride)
        return {"version": state.version,
                "ids": ids.tolist(),
                "positions": state.cloud.positions[ids].tolist(),
                "normals": state.cloud.normals.data[ids].tolist()}

    @app.post("/edit")
    def edit(payload: dict):
        sel = _parse_selection_transform(state, payload)
        with state.mutex:
            if state.render_in_flight:
                raise HTTPException(409, "render in flight; retry shortly")
            idx = sel.indices
            state.undo_stack.append((idx.copy(),
                                     state.cloud.positions[idx].copy(),
                                     state.cloud.normals.data[idx].copy(),
                                     state.version))
            me.apply_rigid_edit(state.cloud, sel)
            state.version += 1
        return {"version": state.version, "moved": int(idx.size)}

    @app.post("/undo")
    def undo():
        with state.mutex:
            if state.render_in_flight:
                raise HTTPException(409, "render in flight; retry shortly")
            if not state.undo_stack:
                return {"version": state.version, "restored": False}
            idx, pos, nrm, _ = state.undo_stack.pop()
            positions = state.cloud.positions.copy()
            positions[idx] = pos
            normals = state.cloud.normals.data.copy()
            normals[idx] = nrm
            state.cloud.set_points(positions, normals)
            state.version += 1
        return {"version": state.version, "restored": True}

    @app.post("/render")
    def render(payload: dict):
        mode = payload.get("mode", "radiance")
        if mode not in ("radiance", "diffuse", "pbr", "relit"):
            raise HTTPException(422, f"unknown render mode {mode!r}")
        try:
            cam = Camera.from_dict(payload["camera"])
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(422, f"malformed camera: {exc}") from exc
        with state.mutex:
            if state.render_in_flight:
                raise HTTPException(409, "render in flight; retry shortly")
            state.render_in_flight = True
            version = state.version
        try:
            if mode in ("pbr", "relit"):
                depth_set = state.depth_set()
                probe_values = state.probe_override if mode == "relit" else None
                res = il.render_pbr_image(state.model, state.cloud, cam,
                                          cfg.render, depth_set, probe_values)
            else:
                res = rd.render_image(state.model, state.cloud, cam,
                                      cfg.render, mode=mode)
        finally:
            with state.mutex:
                state.render_in_flight = False
        img = (np.clip(res["rgb"], 0, 1) * 255 + 0.5).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(img).save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png",
                        headers={"X-Version": str(version)})

    @app.get("/probe")
    def probe():
        values = (state.probe_override if state.probe_override is not None
                  else il.rasterize_probe(state.model).values.reshape(-1, 3))
        img = np.asarray(values, np.float32).reshape(il.PROBE_ROWS, il.PROBE_COLS, 3)
        payload = (b"PF\n" + f"{il.PROBE_COLS} {il.PROBE_ROWS}\n".encode()
                   + b"-1.0\n" + np.flipud(img).astype("<f4").tobytes())
        return Response(payload, media_type="application/octet-stream",
                        headers={"X-Version": str(state.version)})

    @app.post("/relight")
    async def relight(request: Request):
        body = await request.body()
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("application/json"):
            import json as _json
            try:
                payload = _json.loads(body)
            except ValueError as exc:
                raise HTTPException(422, f"malformed JSON: {exc}") from exc
            if payload.get("reset"):
                with state.mutex:
                    state.probe_override = None
                    state.version += 1
                return {"version": state.version, "probe": "estimated"}
            raise HTTPException(422, "JSON body must be {\"reset\": true}; "
                                     "send PFM bytes to set a probe")
        try:
            values = _parse_pfm_bytes(body)
        except Exception as exc:  # noqa: BLE001 - any parse failure is a 422
            raise HTTPException(422, f"malformed probe file: {exc}") from exc
        if values.ndim != 3 or values.shape[2] != 3:
            raise HTTPException(422, "probe must be a color PFM")
        if values.shape[:2] != (il.PROBE_ROWS, il.PROBE_COLS):
            values = il._resample_probe(values, il.PROBE_ROWS, il.PROBE_COLS)
        with state.mutex:
            state.probe_override = values.reshape(-1, 3).astype(np.float32)
            state.version += 1
        return {"version": state.version, "probe": "override"}

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def _parse_pfm_bytes(data: bytes) -> np.ndarray:
    fh = io.BytesIO(data)
    kind = fh.readline().strip()
    if kind not in (b"PF", b"Pf"):
        raise ValueError("not a PFM header")
    w, h = map(int, fh.readline().split())
    scale = float(fh.readline())
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * (3 if kind == b"PF" else 1)
    arr = np.frombuffer(fh.read(4 * count), dtype=dtype)
    if arr.size != count:
        raise ValueError("truncated PFM payload")
    shape = (h, w, 3) if kind == b"PF" else (h, w)
    return np.flipud(arr.reshape(shape)).astype(np.float32).copy()
