"""HTTP editing service: status, points, edits, undo, render, probe, relight."""

import io
import json
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

import pointfield.illumination as il
import pointfield.renderer as rd
from pointfield.config import PipelineConfig
from pointfield.service import create_app


@pytest.fixture(scope="module")
def service(tmp_path_factory, request):
    micro_dataset = request.getfixturevalue("micro_dataset")
    micro_model = request.getfixturevalue("micro_model")
    model, cloud = micro_model
    root = tmp_path_factory.mktemp("svc")
    ckpt = root / "s.ckpt"
    rd.save_session(ckpt, model, cloud)
    cfg = PipelineConfig.from_dict({
        "render": {"samples_per_ray": 8, "chunk": 2048},
        "stage2": {"light_map_res": 8},
    })
    app = create_app(cfg, ckpt)
    client = TestClient(app)
    cam = micro_dataset.cameras[-1]
    return {"client": client, "state": app.state.session, "camera": cam.to_dict()}


def edit_payload(translation=(0.05, 0.0, 0.0)):
    return {"selection": {"box": [[-5, -5, -5], [5, 5, 5]]},
            "transform": {"translation": list(translation)}}


def test_status(service):
    r = service["client"].get("/status")
    assert r.status_code == 200
    body = r.json()
    assert body["points"] == len(service["state"].cloud)
    assert body["version"] == service["state"].version


def test_points_endpoint(service):
    r = service["client"].get("/points", params={"max_points": 100})
    assert r.status_code == 200
    body = r.json()
    assert len(body["ids"]) <= 101
    assert len(body["positions"]) == len(body["ids"])
    assert len(body["normals"][0]) == 3


def test_edit_undo_bit_exact(service):
    client, state = service["client"], service["state"]
    before = state.cloud.positions.copy()
    before_n = state.cloud.normals.data.copy()
    v0 = state.version
    r = client.post("/edit", json=edit_payload())
    assert r.status_code == 200
    assert r.json()["version"] == v0 + 1
    assert r.json()["moved"] == len(before)
    assert not np.array_equal(state.cloud.positions, before)
    r = client.post("/undo")
    assert r.status_code == 200
    assert r.json() == {"version": v0 + 2, "restored": True}
    assert np.array_equal(state.cloud.positions, before)
    assert np.array_equal(state.cloud.normals.data, before_n)


def test_undo_empty_stack(service):
    client, state = service["client"], service["state"]
    state.undo_stack.clear()
    v = state.version
    r = client.post("/undo")
    assert r.json() == {"version": v, "restored": False}


def test_malformed_edit_422(service):
    client = service["client"]
    assert client.post("/edit", json={"selection": {}}).status_code == 422
    assert client.post("/edit", json={"nope": 1}).status_code == 422
    bad = {"selection": {"box": [[-1, -1, -1], [1, 1, 1]]},
           "transform": {"scale": -2.0}}
    assert client.post("/edit", json=bad).status_code == 422


def test_render_radiance_png(service):
    r = service["client"].post("/render", json={"mode": "radiance",
                                                "camera": service["camera"]})
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    assert r.headers["X-Version"] == str(service["state"].version)
    img = Image.open(io.BytesIO(r.content))
    assert img.size == (service["camera"]["width"], service["camera"]["height"])


def test_render_bad_mode_and_camera(service):
    client = service["client"]
    assert client.post("/render", json={"mode": "xray",
                                        "camera": service["camera"]}).status_code == 422
    assert client.post("/render", json={"mode": "radiance",
                                        "camera": {"width": 2}}).status_code == 422


def test_render_in_flight_conflict(service):
    client, state = service["client"], service["state"]
    state.render_in_flight = True
    try:
        assert client.post("/edit", json=edit_payload()).status_code == 409
        assert client.post("/undo").status_code == 409
        assert client.post("/render", json={"mode": "radiance",
                                            "camera": service["camera"]}).status_code == 409
    finally:
        state.render_in_flight = False


def test_probe_endpoint_pfm(service):
    r = service["client"].get("/probe")
    assert r.status_code == 200
    from pointfield.service import _parse_pfm_bytes
    values = _parse_pfm_bytes(r.content)
    assert values.shape == (il.PROBE_ROWS, il.PROBE_COLS, 3)
    assert np.isfinite(values).all()


def test_relight_override_and_reset(service, tmp_path):
    client, state = service["client"], service["state"]
    vals = np.full((il.PROBE_ROWS, il.PROBE_COLS, 3), 0.25, np.float32)
    probe = il.LightProbe(vals)
    probe.save(tmp_path / "p.pfm")
    v0 = state.version
    r = client.post("/relight", content=(tmp_path / "p.pfm").read_bytes(),
                    headers={"content-type": "application/octet-stream"})
    assert r.status_code == 200
    assert r.json() == {"version": v0 + 1, "probe": "override"}
    # /probe now serves the override
    got = service["client"].get("/probe")
    from pointfield.service import _parse_pfm_bytes
    assert np.allclose(_parse_pfm_bytes(got.content), 0.25)
    r = client.post("/relight", json={"reset": True})
    assert r.json()["probe"] == "estimated"
    assert state.probe_override is None


def test_relight_malformed_422(service):
    client = service["client"]
    r = client.post("/relight", content=b"not a pfm",
                    headers={"content-type": "application/octet-stream"})
    assert r.status_code == 422
    r = client.post("/relight", json={"bogus": 1})
    assert r.status_code == 422


def test_pbr_render_caches_light_depths(service):
    client, state = service["client"], service["state"]
    n0 = state.light_depth_renders
    r = client.post("/render", json={"mode": "pbr", "camera": service["camera"]})
    assert r.status_code == 200
    assert state.light_depth_renders == n0 + 1
    r = client.post("/render", json={"mode": "pbr", "camera": service["camera"]})
    assert r.status_code == 200
    assert state.light_depth_renders == n0 + 1  # same version: cached
    client.post("/edit", json=edit_payload((0.01, 0, 0)))
    r = client.post("/render", json={"mode": "relit", "camera": service["camera"]})
    assert r.status_code == 200
    assert state.light_depth_renders == n0 + 2  # geometry changed: regenerated


def test_ui_bundle_served_when_built(service):
    client = service["client"]
    r = client.get("/ui/")
    if not (Path(__file__).resolve().parents[1] / "frontend" / "dist").is_dir():
        pytest.skip("frontend bundle not built")
    assert r.status_code == 200
    assert "pointfield editor" in r.text
    assert client.get("/ui/app.js").status_code == 200
