"""Command-line pipeline: training stages, rendering, probes, editing,
relighting, maintenance, evaluation, and the HTTP service."""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import illumination as il
from . import maintenance
from . import meshedit as me
from . import renderer as rd
from . import report
from . import scenes as sc
from .cloud import Model
from .config import PipelineConfig
from .imaging import Camera, normal_mae, psnr, write_pfm, write_png


def _guard(fn):
    """Uniform failure mode: machine-readable error JSON on stderr, exit 1."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                  file=sys.stderr)
            sys.exit(1)
    return wrapper


def _load_dataset(cfg: PipelineConfig) -> sc.Dataset:
    """cfg.scene is either a stock scene name or a dataset directory; stock
    datasets are generated once under the output directory and reused."""
    scene = cfg.scene
    if scene in sc.STOCK_SCENES:
        ds_dir = Path(cfg.output_dir) / f"dataset_{scene}"
        if (ds_dir / "scene.json").exists():
            return sc.load_dataset(ds_dir)
        click.echo(f"generating dataset for stock scene {scene!r} ...")
        return sc.make_dataset(sc.STOCK_SCENES[scene](), seed=cfg.seed, out_dir=ds_dir)
    if Path(scene).is_dir():
        return sc.load_dataset(scene)
    raise click.ClickException(
        f"scene {scene!r} is neither a stock scene {sorted(sc.STOCK_SCENES)} "
        "nor a dataset directory")


def _ckpt_path(cfg: PipelineConfig, stage: int) -> Path:
    return Path(cfg.output_dir) / f"stage{stage}.ckpt"


def _load_session(path):
    model, cloud, _ = rd.load_session(path)
    return model, cloud


def _camera_from_args(cfg, dataset, view, camera_file) -> Camera:
    if camera_file:
        return Camera.from_dict(json.loads(Path(camera_file).read_text()))
    if dataset is None:
        raise click.ClickException("--camera is required without a dataset")
    cams = [c for c, _ in dataset.test_views()] or [c for c, _ in dataset.train_views()]
    return cams[view % len(cams)]


@click.group()
def main():
    """SDF point field pipeline."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@_guard
def train1(config_path):
    """Stage 1: joint geometry + radiance training."""
    cfg = PipelineConfig.load(config_path)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(cfg)
    rng = np.random.default_rng(cfg.seed)
    model = Model.create(cfg.model, rng)
    cloud = dataset.make_cloud(cfg.model.feature_dim, seed=cfg.seed,
                               k=cfg.model.k_neighbors,
                               radius_scale=cfg.model.radius_scale)
    rd.train_stage1(model, cloud, dataset, cfg.stage1, out_dir=out,
                    prune_cfg=cfg.prune, grow_cfg=cfg.grow, log=click.echo)
    report.loss_curve_figure(out / "stage1_metrics.csv", out / "stage1_losses.png")
    cfg.save(out / "config.json")
    click.echo(f"stage 1 checkpoint: {_ckpt_path(cfg, 1)}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@_guard
def train2(config_path):
    """Stage 2: BRDF + environment decomposition on frozen geometry."""
    cfg = PipelineConfig.load(config_path)
    out = Path(cfg.output_dir)
    dataset = _load_dataset(cfg)
    model, cloud = _load_session(_ckpt_path(cfg, 1))
    il.train_stage2(model, cloud, dataset, cfg.stage2, out_dir=out,
                    rcfg=cfg.render, log=click.echo)
    report.loss_curve_figure(out / "stage2_metrics.csv", out / "stage2_losses.png")
    report.probe_figure(il.rasterize_probe(model).values, out / "probe.png")
    click.echo(f"stage 2 checkpoint: {_ckpt_path(cfg, 2)}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--view", default=0, show_default=True)
@click.option("--camera", "camera_file", type=click.Path(exists=True), default=None)
@click.option("--mode", type=click.Choice(["radiance", "diffuse", "pbr"]),
              default="radiance", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guard
def render(config_path, checkpoint, view, camera_file, mode, out_path):
    """Render one view from a checkpoint (PNG, plus depth/normal PFMs)."""
    cfg = PipelineConfig.load(config_path)
    ckpt = checkpoint or (str(_ckpt_path(cfg, 2)) if _ckpt_path(cfg, 2).exists()
                          else str(_ckpt_path(cfg, 1)))
    model, cloud = _load_session(ckpt)
    dataset = _load_dataset(cfg) if cfg.scene else None
    cam = _camera_from_args(cfg, dataset, view, camera_file)
    if mode == "pbr":
        depth_set = il.render_light_depths(model, cloud, cfg.stage2.light_map_res,
                                           bias_scale=cfg.stage2.shadow_bias_scale,
                                           log=click.echo)
        res = il.render_pbr_image(model, cloud, cam, cfg.render, depth_set)
        write_png(out_path, res["rgb"])
    else:
        res = rd.render_image(model, cloud, cam, cfg.render, mode=mode)
        write_png(out_path, res["rgb"])
        stem = Path(out_path).with_suffix("")
        write_pfm(f"{stem}_depth.pfm", np.where(np.isfinite(res["depth"]), res["depth"], 0.0))
        write_pfm(f"{stem}_normal.pfm", res["normal"])
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guard
def probe(config_path, checkpoint, out_path):
    """Rasterize the estimated environment probe to PFM (+ PNG preview)."""
    cfg = PipelineConfig.load(config_path)
    model, _ = _load_session(checkpoint or _ckpt_path(cfg, 2))
    p = il.rasterize_probe(model)
    p.save(out_path)
    report.probe_figure(p.values, str(Path(out_path).with_suffix(".png")))
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--mesh", "mesh_path", required=True, type=click.Path(exists=True))
@click.option("--deformed", "deformed_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_guard
def deform(config_path, checkpoint, mesh_path, deformed_path, out_path):
    """Transfer a mesh deformation onto the point cloud; writes a checkpoint."""
    cfg = PipelineConfig.load(config_path)
    model, cloud = _load_session(checkpoint or _default_ckpt(cfg))
    mesh = me.load_mesh(mesh_path)
    deformed_mesh = me.load_mesh(deformed_path)
    reg = me.register_points(cloud, mesh)
    stats = me.transfer_deformation(reg, mesh, deformed_mesh, cloud)
    rd.save_session(out_path, model, cloud)
    click.echo(json.dumps(stats))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--job", "job_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_guard
def edit(config_path, checkpoint, job_path, out_path):
    """Apply a rigid-edit job file to the point cloud; writes a checkpoint."""
    cfg = PipelineConfig.load(config_path)
    model, cloud = _load_session(checkpoint or _default_ckpt(cfg))
    job = me.load_edit_job(job_path)
    if job["kind"] == "deform":
        mesh = me.load_mesh(job["mesh"])
        deformed_mesh = me.load_mesh(job["deformed"])
        reg = me.register_points(cloud, mesh)
        stats = me.transfer_deformation(reg, mesh, deformed_mesh, cloud)
    else:
        stats = {"moved": 0}
        for spec in job["edits"]:
            sel = me.selection_from_spec(cloud, spec)
            stats["moved"] += me.apply_rigid_edit(cloud, sel)["moved"]
    rd.save_session(out_path, model, cloud)
    click.echo(json.dumps(stats))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--probe", "probe_path", required=True, type=click.Path(exists=True))
@click.option("--view", default=0, show_default=True)
@click.option("--camera", "camera_file", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guard
def relight(config_path, checkpoint, probe_path, view, camera_file, out_path):
    """PBR render under a replacement environment probe (lat-long PFM)."""
    cfg = PipelineConfig.load(config_path)
    model, cloud = _load_session(checkpoint or _ckpt_path(cfg, 2))
    dataset = _load_dataset(cfg) if cfg.scene else None
    cam = _camera_from_args(cfg, dataset, view, camera_file)
    new_probe = il.LightProbe.load(probe_path)
    depth_set = il.render_light_depths(model, cloud, cfg.stage2.light_map_res,
                                       bias_scale=cfg.stage2.shadow_bias_scale,
                                       log=click.echo)
    res = il.relight(model, cloud, cam, new_probe, cfg.render, depth_set)
    write_png(out_path, res["rgb"])
    click.echo(f"wrote {out_path}")


@main.command(name="prune-grow")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guard
def prune_grow(config_path, checkpoint, out_path):
    """One maintenance pass: prune then grow; writes checkpoint + reports."""
    cfg = PipelineConfig.load(config_path)
    model, cloud = _load_session(checkpoint or _default_ckpt(cfg))
    out = Path(cfg.output_dir)
    prune_report = maintenance.prune(cloud, model, cfg.prune,
                                     report_path=out / "prune_report.json")
    grow_report = maintenance.grow(cloud, model, cfg.grow,
                                   report_path=out / "grow_report.json")
    rd.save_session(out_path, model, cloud)
    click.echo(json.dumps({"pruned": prune_report["removed"],
                           "prune_aborted": prune_report["aborted"],
                           "grown": grow_report["added"]}))


@main.command(name="eval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@_guard
def eval_cmd(config_path, checkpoint):
    """Held-out PSNR / normal MAE + report figures into the output directory."""
    cfg = PipelineConfig.load(config_path)
    model, cloud = _load_session(checkpoint or _default_ckpt(cfg))
    dataset = _load_dataset(cfg)
    rows, renders = [], []
    test = dataset.test_views()
    test_normals = dataset.normals[dataset.n_train:]
    test_depths = dataset.depths[dataset.n_train:]
    for i, (cam, gt) in enumerate(test):
        res = rd.render_image(model, cloud, cam, cfg.render)
        mask = np.isfinite(test_depths[i]) & (test_depths[i] > 0)
        x_hit = None
        mae = float("nan")
        if mask.any():
            origins, dirs = cam.rays()
            pix = np.flatnonzero(mask.reshape(-1))
            x_hit = (origins[pix] + dirs[pix] * test_depths[i].reshape(-1)[pix, None])
            pred_n, _ = rd.gradient_normal(model, cloud, x_hit)
            mae = normal_mae(pred_n, test_normals[i].reshape(-1, 3)[pix])
        rows.append({"view": i, "psnr": psnr(res["rgb"], gt), "normal_mae_deg": mae})
        renders.append((gt, res["rgb"]))
        click.echo(f"view {i}: psnr {rows[-1]['psnr']:.2f} dB, "
                   f"normal MAE {mae:.2f} deg")
    report.write_eval_report(cfg.output_dir, rows, renders)
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    click.echo(f"mean held-out PSNR {mean_psnr:.2f} dB")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--port", default=None, type=int,
              help="overrides the POINTFIELD_PORT env var (default 8000)")
@click.option("--host", default="127.0.0.1", show_default=True)
@_guard
def serve(config_path, checkpoint, port, host):
    """Run the editing HTTP service."""
    import uvicorn

    from .service import create_app
    cfg = PipelineConfig.load(config_path)
    app = create_app(cfg, checkpoint or _default_ckpt(cfg))
    port = port or int(os.environ.get("POINTFIELD_PORT", "8000"))
    uvicorn.run(app, host=host, port=port, log_level="warning")


def _default_ckpt(cfg: PipelineConfig) -> Path:
    for stage in (2, 1):
        path = _ckpt_path(cfg, stage)
        if path.exists():
            return path
    raise click.ClickException(f"no checkpoint found under {cfg.output_dir}")


if __name__ == "__main__":
    main()
