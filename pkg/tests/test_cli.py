"""CLI smoke: full micro pipeline through the click entry points."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from pointfield import scenes as sc
from pointfield.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, request):
    """Saved micro dataset + config + a trained stage-1/2 checkpoint pair."""
    micro_dataset = request.getfixturevalue("micro_dataset")
    root = tmp_path_factory.mktemp("cli")
    ds_dir = root / "dataset"
    sc.save_dataset(micro_dataset, ds_dir)
    out = root / "out"
    cfg = {
        "scene": str(ds_dir),
        "output_dir": str(out),
        "stage1": {"iterations": 12, "rays_per_iter": 32, "samples_per_ray": 8,
                   "warmup_iters": 4, "normal_switch_iters": 4, "log_every": 4,
                   "fd_pairs": 16, "anchor_points": 16},
        "stage2": {"iterations": 8, "rays_per_iter": 48, "light_map_res": 10,
                   "log_every": 4},
        "render": {"samples_per_ray": 8, "chunk": 2048},
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    runner = CliRunner()
    r1 = runner.invoke(main, ["train1", "--config", str(cfg_path)])
    assert r1.exit_code == 0, r1.output
    r2 = runner.invoke(main, ["train2", "--config", str(cfg_path)])
    assert r2.exit_code == 0, r2.output
    return {"root": root, "cfg": str(cfg_path), "out": out, "runner": runner}


def test_train_outputs(workspace):
    out = workspace["out"]
    assert (out / "stage1.ckpt").exists()
    assert (out / "stage2.ckpt").exists()
    # delimited metrics plus rendered figures next to them
    assert (out / "stage1_metrics.csv").exists()
    assert (out / "stage1_losses.png").exists()
    assert (out / "stage2_metrics.csv").exists()
    assert (out / "stage2_losses.png").exists()
    assert (out / "probe.png").exists()


def test_render_radiance(workspace):
    out_png = workspace["root"] / "view.png"
    r = workspace["runner"].invoke(main, [
        "render", "--config", workspace["cfg"], "--mode", "radiance",
        "--checkpoint", str(workspace["out"] / "stage1.ckpt"),
        "--out", str(out_png)])
    assert r.exit_code == 0, r.output
    assert out_png.exists()
    assert (workspace["root"] / "view_depth.pfm").exists()
    assert (workspace["root"] / "view_normal.pfm").exists()


def test_render_pbr(workspace):
    out_png = workspace["root"] / "pbr.png"
    r = workspace["runner"].invoke(main, [
        "render", "--config", workspace["cfg"], "--mode", "pbr",
        "--out", str(out_png)])
    assert r.exit_code == 0, r.output
    assert out_png.exists()


def test_probe_command(workspace):
    out_pfm = workspace["root"] / "probe.pfm"
    r = workspace["runner"].invoke(main, [
        "probe", "--config", workspace["cfg"], "--out", str(out_pfm)])
    assert r.exit_code == 0, r.output
    assert out_pfm.exists()
    assert (workspace["root"] / "probe.png").exists()


def test_eval_command(workspace):
    r = workspace["runner"].invoke(main, ["eval", "--config", workspace["cfg"]])
    assert r.exit_code == 0, r.output
    assert "mean held-out PSNR" in r.output
    assert (workspace["out"] / "eval_metrics.csv").exists()
    assert (workspace["out"] / "eval_view_00.png").exists()


def test_edit_command(workspace):
    job = workspace["root"] / "job.json"
    job.write_text(json.dumps({"edits": [{
        "box": [[-5, -5, -5], [5, 5, 5]], "translation": [0.1, 0.0, 0.0]}]}))
    out_ckpt = workspace["root"] / "edited.ckpt"
    r = workspace["runner"].invoke(main, [
        "edit", "--config", workspace["cfg"], "--job", str(job),
        "--out", str(out_ckpt)])
    assert r.exit_code == 0, r.output
    assert json.loads(r.output.splitlines()[-1])["moved"] > 0
    assert out_ckpt.exists()


def test_prune_grow_command(workspace):
    out_ckpt = workspace["root"] / "maintained.ckpt"
    r = workspace["runner"].invoke(main, [
        "prune-grow", "--config", workspace["cfg"], "--out", str(out_ckpt)])
    assert r.exit_code == 0, r.output
    stats = json.loads(r.output.splitlines()[-1])
    assert {"pruned", "prune_aborted", "grown"} <= set(stats)
    assert out_ckpt.exists()
    assert (workspace["out"] / "prune_report.json").exists()
    assert (workspace["out"] / "grow_report.json").exists()


def test_deform_command(workspace, tmp_path):
    import pointfield.meshedit as me
    model_ckpt = workspace["out"] / "stage1.ckpt"
    import pointfield.renderer as rd
    _, cloud, _ = rd.load_session(model_ckpt)
    mesh = me.extract_mesh(*rd.load_session(model_ckpt)[:2], resolution=24)
    mesh_path, moved_path = tmp_path / "m.obj", tmp_path / "d.obj"
    me.save_mesh(mesh_path, mesh)
    shifted = me.TriangleMesh(mesh.vertices + [0.05, 0, 0], mesh.faces.copy())
    me.save_mesh(moved_path, shifted)
    out_ckpt = tmp_path / "deformed.ckpt"
    r = workspace["runner"].invoke(main, [
        "deform", "--config", workspace["cfg"], "--mesh", str(mesh_path),
        "--deformed", str(moved_path), "--out", str(out_ckpt)])
    assert r.exit_code == 0, r.output
    assert out_ckpt.exists()


def test_cli_error_is_machine_readable(workspace, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scene": "no_such_scene",
                               "output_dir": str(tmp_path)}))
    r = workspace["runner"].invoke(main, [
        "render", "--config", str(bad), "--out", str(tmp_path / "x.png")])
    assert r.exit_code == 1
    err = json.loads(r.output.strip().splitlines()[-1])
    assert "error" in err and "message" in err
