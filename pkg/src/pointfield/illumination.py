"""Lighting decomposition: lat-long environment probe, shadow-mapped
visibility, Cook-Torrance microfacet BRDF, stage-2 training, and relighting."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import cloud as pc
from . import nn
from . import renderer as rd
from .autodiff import Tape, Tensor
from .config import RenderConfig, Stage2Config
from .imaging import linear_to_srgb, read_pfm, write_pfm

PROBE_ROWS = 16
PROBE_COLS = 32


# ---------------------------------------------------------------------------
# lat-long probe grid
# ---------------------------------------------------------------------------

def probe_directions(rows: int = PROBE_ROWS, cols: int = PROBE_COLS) -> np.ndarray:
    """Texel-center unit directions, (rows*cols, 3), z-up world frame."""
    theta = (np.arange(rows) + 0.5) * np.pi / rows
    phi = (np.arange(cols) + 0.5) * 2.0 * np.pi / cols
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    d = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)
    return d.reshape(-1, 3).astype(np.float32)


def probe_solid_angles(rows: int = PROBE_ROWS, cols: int = PROBE_COLS) -> np.ndarray:
    """Per-texel solid angle, (rows*cols,); sums to 4*pi exactly."""
    edges = np.arange(rows + 1) * np.pi / rows
    band = np.cos(edges[:-1]) - np.cos(edges[1:])
    w = np.repeat(band * (2.0 * np.pi / cols), cols)
    return w.astype(np.float64).astype(np.float32)


def direction_to_texel(dirs: np.ndarray, rows: int = PROBE_ROWS,
                       cols: int = PROBE_COLS) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions -> (row, col) texel indices of the lat-long grid."""
    d = np.asarray(dirs, np.float64).reshape(-1, 3)
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.arctan2(d[:, 1], d[:, 0]) % (2.0 * np.pi)
    r = np.clip((theta / np.pi * rows).astype(int), 0, rows - 1)
    c = np.clip((phi / (2.0 * np.pi) * cols).astype(int), 0, cols - 1)
    return r, c


@dataclass
class LightProbe:
    values: np.ndarray  # (rows, cols, 3) linear radiance

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def directions(self) -> np.ndarray:
        return probe_directions(self.rows, self.cols)

    def solid_angles(self) -> np.ndarray:
        return probe_solid_angles(self.rows, self.cols)

    def save(self, path) -> None:
        path = Path(path)
        write_pfm(path, self.values)
        path.with_suffix(".json").write_text(json.dumps(
            {"rows": self.rows, "cols": self.cols, "layout": "lat-long",
             "order": "theta-major, texel centers, z-up"}))

    @classmethod
    def load(cls, path) -> "LightProbe":
        return cls(read_pfm(path))


def env_eval(model: pc.Model, dirs: np.ndarray) -> Tensor:
    """Environment radiance E(omega) = exp(MLP(PE(omega))), strictly positive."""
    enc = nn.positional_encode(np.asarray(dirs, np.float32), model.cfg.pe_light)
    return model.forward("env", enc)


def rasterize_probe(model: pc.Model, rows: int = PROBE_ROWS,
                    cols: int = PROBE_COLS) -> LightProbe:
    values = env_eval(model, probe_directions(rows, cols)).data
    return LightProbe(values.reshape(rows, cols, 3).copy())


# ---------------------------------------------------------------------------
# shadow maps: one orthographic depth map per probe direction
# ---------------------------------------------------------------------------

def _ortho_basis(omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([0.0, 0.0, 1.0]) if abs(omega[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(omega, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(omega, e1)
    return e1.astype(np.float32), e2.astype(np.float32)


@dataclass
class LightDepthSet:
    """Orthographic depth maps rendered from every probe direction.

    depths[l, v, u] is the distance from the light plane (at `dist` along
    omega_l from `center`) to the first surface, along -omega_l. A texel
    that sees no surface holds +inf.
    """
    depths: np.ndarray   # (L, res, res)
    omegas: np.ndarray   # (L, 3)
    center: np.ndarray   # (3,)
    dist: float
    footprint: float
    bias: float

    def light_coords(self, x: np.ndarray, l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points -> (u, v) texel coords and depth along the light axis."""
        res = self.depths.shape[1]
        omega = self.omegas[l]
        e1, e2 = _ortho_basis(omega)
        rel = np.asarray(x, np.float64) - self.center
        u = (rel @ e1 / self.footprint + 0.5) * res - 0.5
        v = (rel @ e2 / self.footprint + 0.5) * res - 0.5
        z = self.dist - rel @ omega
        return u, v, z


def _bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape
    u0 = np.clip(np.floor(u).astype(int), 0, w - 1)
    v0 = np.clip(np.floor(v).astype(int), 0, h - 1)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = np.clip(u - u0, 0.0, 1.0)
    fv = np.clip(v - v0, 0.0, 1.0)
    return (img[v0, u0] * (1 - fu) * (1 - fv) + img[v0, u1] * fu * (1 - fv)
            + img[v1, u0] * (1 - fu) * fv + img[v1, u1] * fu * fv)


def render_depth_rays(model: pc.Model, cloud: pc.NeuralPointCloud,
                      origins: np.ndarray, dirs: np.ndarray,
                      samples: int) -> np.ndarray:
    """Expected-termination depth only (no radiance); empty rays give +inf."""
    r = len(origins)
    batch = rd.sample_along_rays(cloud, origins, dirs, samples)
    depth = np.full(r, np.inf, np.float32)
    flat_occ = np.flatnonzero(batch.occupied.reshape(-1))
    if flat_occ.size == 0:
        return depth
    x = batch.positions.reshape(-1, 3)[flat_occ]
    q = pc.knn_query(cloud, x)
    keep = q.any_valid
    if not keep.any():
        return depth
    flat_idx = flat_occ[keep]
    q = pc.QueryResult(q.indices[keep], q.valid[keep], q.rel[keep],
                       q.weights[keep], q.norm_weights[keep], q.any_valid[keep])
    f_ix, _, _, rel = pc.aggregate_features(cloud, model, q)
    d = pc.predict_sdf(model, q, f_ix, plane=pc.plane_offsets(cloud, q, rel))
    sigma = rd.sdf_to_density(d, model.beta())
    s = batch.t.shape[1]
    sig_grid = ad.reshape(ad.scatter_rows(r * s, flat_idx,
                                          ad.reshape(sigma, (-1, 1))), (r, s))
    w = rd.compositing_weights(sig_grid, batch.delta).data
    acc = w.sum(axis=1)
    covered = acc > 0.5
    exp_t = (w * batch.t).sum(axis=1) / np.maximum(acc, 1e-8)
    depth[covered] = exp_t[covered]
    return depth


def render_light_depths(model: pc.Model, cloud: pc.NeuralPointCloud,
                        res: int, samples: int = 32,
                        bias_scale: float = 1.5, log=None) -> LightDepthSet:
    """One orthographic depth map per probe direction (the shadow atlas)."""
    omegas = probe_directions()
    lo, hi = cloud.bounds(pad=2.0 * cloud.radius)
    center = (lo + hi) / 2.0
    footprint = float(np.linalg.norm(hi - lo))
    dist = footprint
    n_l = len(omegas)
    depths = np.empty((n_l, res, res), np.float32)
    grid = (np.arange(res, dtype=np.float32) + 0.5) / res - 0.5
    uu, vv = np.meshgrid(grid, grid)  # uu varies along axis 1 (u), vv along axis 0 (v)
    bias = bias_scale * footprint / max(samples, 1)
    t0 = time.time()
    for l, omega in enumerate(omegas):
        e1, e2 = _ortho_basis(omega)
        origins = (center + dist * omega
                   + footprint * (uu.reshape(-1, 1) * e1 + vv.reshape(-1, 1) * e2))
        origins = origins.astype(np.float32)
        dirs = np.broadcast_to(-omega, origins.shape).astype(np.float32)
        parts = [render_depth_rays(model, cloud, origins[s0:s0 + 4096],
                                   dirs[s0:s0 + 4096], samples)
                 for s0 in range(0, len(origins), 4096)]
        depths[l] = np.concatenate(parts).reshape(res, res)
        if log is not None and (l + 1) % 64 == 0:
            log(f"light depth maps {l + 1}/{n_l} ({time.time() - t0:.1f}s)")
    return LightDepthSet(depths, omegas, center.astype(np.float64), dist, footprint, bias)


def shadow_test(depth_set: LightDepthSet, x: np.ndarray,
                light_indices: np.ndarray | None = None) -> np.ndarray:
    """Visibility of each point toward each probe direction.

    Lit iff interpolated light-map depth minus the point's light-frame depth
    plus the bias is >= 0. Points projecting outside the footprint are lit.
    Returns bool (N, L).
    """
    x = np.asarray(x, np.float64).reshape(-1, 3)
    n_l = len(depth_set.omegas)
    lights = np.arange(n_l) if light_indices is None else np.asarray(light_indices)
    res = depth_set.depths.shape[1]
    lit = np.ones((len(x), len(lights)), bool)
    for j, l in enumerate(lights):
        u, v, z = depth_set.light_coords(x, int(l))
        inside = (u >= 0) & (u <= res - 1) & (v >= 0) & (v <= res - 1)
        if not inside.any():
            continue
        dmap = _bilinear(depth_set.depths[int(l)], u[inside], v[inside])
        ok = np.isfinite(dmap)
        vis = np.ones(inside.sum(), bool)
        vis[ok] = dmap[ok] - z[inside][ok] + depth_set.bias >= 0
        lit[inside, j] = vis
    return lit


# ---------------------------------------------------------------------------
# Cook-Torrance GGX BRDF (numpy and differentiable variants)
# ---------------------------------------------------------------------------

def brdf_eval_np(albedo, specular, roughness, n, v, l,
                 roughness_floor: float = 0.01) -> np.ndarray:
    """Lambertian + GGX specular reflectance for one (n, v, l) set, (N,...,3).

    albedo/specular: (...,3), roughness: (...,1) or (...,), n/v/l unit (...,3).
    Uses height-correlated Smith visibility and Schlick Fresnel.
    """
    alpha = np.maximum(np.asarray(roughness, np.float64), roughness_floor)
    if alpha.ndim == np.asarray(albedo).ndim - 1:
        alpha = alpha[..., None]
    nv = np.maximum(np.sum(n * v, axis=-1, keepdims=True), 1e-6)
    nl = np.maximum(np.sum(n * l, axis=-1, keepdims=True), 1e-6)
    h = v + l
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-9)
    nh = np.clip(np.sum(n * h, axis=-1, keepdims=True), 0.0, 1.0)
    vh = np.clip(np.sum(v * h, axis=-1, keepdims=True), 0.0, 1.0)
    a2 = alpha * alpha
    denom = nh * nh * (a2 - 1.0) + 1.0
    d_term = a2 / (np.pi * denom * denom)
    vis = 0.5 / (nl * np.sqrt(a2 + (1.0 - a2) * nv * nv)
                 + nv * np.sqrt(a2 + (1.0 - a2) * nl * nl))
    fres = specular + (1.0 - specular) * (1.0 - vh) ** 5
    return (albedo / np.pi + d_term * vis * fres).astype(np.float32)


def shade_np(x, n, v, probe_values, vis, albedo, specular, roughness,
             rows: int = PROBE_ROWS, cols: int = PROBE_COLS,
             roughness_floor: float = 0.01,
             split: bool = False):
    """Discretized rendering equation over the probe grid (numpy).

    L_o = sum_l E_l * V_l * (a/pi + f_r) * max(n.omega_l, 0) * dOmega_l.
    probe_values: (rows*cols, 3); vis: (N, L) bool or float.
    """
    omegas = probe_directions(rows, cols)          # (L,3)
    dw = probe_solid_angles(rows, cols)            # (L,)
    n_pts = len(n)
    n_e = n[:, None, :]
    v_e = np.broadcast_to(v[:, None, :], (n_pts, len(omegas), 3))
    l_e = np.broadcast_to(omegas[None, :, :], v_e.shape)
    cos = np.maximum(np.sum(n_e * l_e, axis=-1, keepdims=True), 0.0)
    fr = brdf_eval_np(np.zeros(3), specular[:, None, :],
                      np.asarray(roughness).reshape(n_pts, 1, 1),
                      n_e, v_e, l_e, roughness_floor)
    weight = probe_values[None, :, :] * np.asarray(vis, np.float64)[..., None] * cos * dw[None, :, None]
    diffuse = (albedo[:, None, :] / np.pi * weight).sum(axis=1)
    specular_out = (fr * weight).sum(axis=1)
    if split:
        return diffuse.astype(np.float32), specular_out.astype(np.float32)
    return (diffuse + specular_out).astype(np.float32)


def brdf_fr_t(specular: Tensor, roughness: Tensor, n: np.ndarray, v: np.ndarray,
              l: np.ndarray, roughness_floor: float = 0.01) -> Tensor:
    """Differentiable GGX specular term; geometry (n, v, l) held constant.

    specular: (N,3), roughness: (N,1); n/v: (N,3); l: (L,3). Returns (N,L,3).
    """
    n_pts, n_l = len(n), len(l)
    nv = np.maximum(np.sum(n * v, axis=-1), 1e-6)[:, None, None]          # (N,1,1)
    nl = np.maximum(n @ l.T, 1e-6)[..., None]                              # (N,L,1)
    h = v[:, None, :] + l[None, :, :]
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-9)
    nh = np.clip(np.sum(n[:, None, :] * h, axis=-1), 0.0, 1.0)[..., None]  # (N,L,1)
    vh = np.clip(np.sum(v[:, None, :] * h, axis=-1), 0.0, 1.0)[..., None]
    alpha = ad.reshape(ad.maximum(roughness, roughness_floor), (n_pts, 1, 1))
    a2 = ad.mul(alpha, alpha)
    denom = ad.add(ad.mul(Tensor(nh.astype(np.float32) ** 2), ad.sub(a2, 1.0)), 1.0)
    d_term = ad.div(a2, ad.mul(ad.mul(denom, denom), float(np.pi)))
    one_m_a2 = ad.sub(1.0, a2)
    t1 = ad.mul(Tensor(nl.astype(np.float32)),
                ad.sqrt(ad.add(a2, ad.mul(one_m_a2, Tensor((nv * nv).astype(np.float32))))))
    t2 = ad.mul(Tensor(nv.astype(np.float32)),
                ad.sqrt(ad.add(a2, ad.mul(one_m_a2, Tensor((nl * nl).astype(np.float32))))))
    vis = ad.div(0.5, ad.maximum(ad.add(t1, t2), 1e-9))
    f0 = ad.reshape(specular, (n_pts, 1, 3))
    schlick = Tensor(((1.0 - vh) ** 5).astype(np.float32))
    fres = ad.add(f0, ad.mul(ad.sub(1.0, f0), schlick))
    return ad.mul(ad.mul(d_term, vis), fres)


def shade_t(n: np.ndarray, v: np.ndarray, omegas: np.ndarray, dw: np.ndarray,
            env: Tensor, vis: np.ndarray, albedo: Tensor, specular: Tensor,
            roughness: Tensor, roughness_floor: float = 0.01) -> tuple[Tensor, Tensor]:
    """Differentiable shading; returns (diffuse rgb, specular rgb), each (N,3).

    env: (L,3) Tensor; vis: (N,L) float/bool; albedo/specular: (N,3) Tensors;
    roughness: (N,1) Tensor. Linear in env by construction.
    """
    n_pts = len(n)
    cos = np.maximum(n @ omegas.T, 0.0)                                   # (N,L)
    w = (np.asarray(vis, np.float32) * cos * dw[None, :])[..., None]      # (N,L,1)
    weight = ad.mul(ad.reshape(env, (1, -1, 3)), Tensor(w.astype(np.float32)))
    diffuse = ad.tsum(ad.mul(ad.reshape(albedo, (n_pts, 1, 3)),
                             ad.mul(weight, float(1.0 / np.pi))), axis=1)
    fr = brdf_fr_t(specular, roughness, n, v, omegas, roughness_floor)
    spec = ad.tsum(ad.mul(fr, weight), axis=1)
    return diffuse, spec


# ---------------------------------------------------------------------------
# stage-2 training: freeze geometry/radiance, fit BRDF heads + environment
# ---------------------------------------------------------------------------

def _surface_batch(model, cloud, origins, dirs, rcfg) -> dict | None:
    """Frozen stage-1 forward for a ray batch: surface point, normal, blended
    feature, and the stage-1 diffuse/specular color decomposition."""
    out = rd.render_rays(model, cloud, origins, dirs, rcfg, want_features=True)
    out_d = rd.render_rays(model, cloud, origins, dirs, rcfg, mode="diffuse")
    covered = out["acc"] > 0.5
    if not covered.any():
        return None
    idx = np.flatnonzero(covered)
    x_surf = origins[idx] + dirs[idx] * out["depth"][idx, None]
    f_x = out["features"][idx] / np.maximum(out["weight_sum"][idx, None], 1e-8)
    return {
        "idx": idx, "x": x_surf.astype(np.float32),
        "n": out["normal"][idx], "v": -dirs[idx],
        "f_x": f_x.astype(np.float32),
        "c_full": out["rgb_linear"][idx],
        "c_diffuse": out_d["rgb_linear"][idx],
        "acc": out["acc"][idx],
    }


def predict_brdf(model: pc.Model, f_x: np.ndarray | Tensor) -> tuple[Tensor, Tensor, Tensor]:
    f_t = ad.ensure_tensor(np.asarray(f_x, np.float32) if isinstance(f_x, np.ndarray) else f_x)
    return (model.forward("brdf_a", f_t), model.forward("brdf_s", f_t),
            model.forward("brdf_r", f_t))


def train_stage2(model: pc.Model, cloud: pc.NeuralPointCloud, dataset,
                 cfg: Stage2Config, out_dir=None, rcfg: RenderConfig | None = None,
                 depth_set: LightDepthSet | None = None, log=print) -> list[dict]:
    """Fit albedo/specular/roughness heads and the environment MLP against
    observed colors, with the stage-1 specular image guiding the split.
    Stage-1 parameters are frozen (excluded from the optimizer)."""
    rng = np.random.default_rng(cfg.seed)
    rcfg = rcfg or RenderConfig()
    model.init_brdf_albedo_from_diffuse()
    if depth_set is None:
        log("rendering light depth maps ...")
        depth_set = render_light_depths(model, cloud, cfg.light_map_res,
                                        samples=cfg.light_map_samples,
                                        bias_scale=cfg.shadow_bias_scale, log=log)
    omegas = probe_directions()
    dw = probe_solid_angles()
    opt = nn.AdamState(lr=cfg.lr_brdf)
    trainable = model.stage_params(2)
    lr_over = {"env.": cfg.lr_env}
    views = dataset.train_views()
    history: list[dict] = []
    t_start = time.time()
    for it in range(cfg.iterations):
        view_idx = int(rng.integers(len(views)))
        camera, image = views[view_idx]
        pix = rng.integers(0, camera.height * camera.width, size=cfg.rays_per_iter)
        origins, dirs = camera.rays(
            np.stack([pix % camera.width, pix // camera.width], axis=-1))
        gt = image.reshape(-1, 3)[pix].astype(np.float32)
        surf = _surface_batch(model, cloud, origins, dirs, rcfg)
        if surf is None:
            continue
        vis = shadow_test(depth_set, surf["x"])
        gt_c = gt[surf["idx"]]
        c_spec_guide = np.maximum(surf["c_full"] - surf["c_diffuse"], 0.0)
        with Tape() as tape:
            albedo, specular, roughness = predict_brdf(model, surf["f_x"])
            env = env_eval(model, omegas)
            c_d, c_s = shade_t(surf["n"], surf["v"], omegas, dw, env, vis,
                               albedo, specular, roughness,
                               model.cfg.roughness_floor)
            c_pred = ad.add(c_d, c_s)
            l_c = ad.tsum(ad.absolute(ad.sub(rd.tonemap(c_pred), Tensor(
                linear_to_srgb(gt_c).astype(np.float32)))))
            l_g = ad.tsum(ad.absolute(ad.sub(c_s, Tensor(c_spec_guide))))
            total = ad.add(ad.mul(l_c, cfg.lambda_c), ad.mul(l_g, cfg.lambda_g))
            if cfg.lambda_l > 0:
                l_l = ad.tsum(ad.absolute(ad.sub(c_d, Tensor(surf["c_diffuse"]))))
                total = ad.add(total, ad.mul(l_l, cfg.lambda_l))
            if cfg.lambda_e > 0:
                # energy sparsity: radiance is nonnegative, so this is an L1
                # prior pulling texels the data never constrains toward zero
                l_e = ad.tsum(ad.mul(env, Tensor(dw[:, None].astype(np.float32))))
                total = ad.add(total, ad.mul(l_e, cfg.lambda_e))
            if not np.isfinite(total.item()):
                raise nn.DivergedTrainingError(
                    f"NaN stage-2 loss at iteration {it} (seed {cfg.seed})")
            nn.zero_grads(trainable)
            tape.backward(total, release=True)
        nn.adam_step(opt, trainable, lr_over)
        nn.zero_grads(trainable)
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            row = {"iteration": it, "loss": total.item(), "l_color": l_c.item(),
                   "l_guide": l_g.item(), "elapsed": time.time() - t_start}
            history.append(row)
            log(f"stage2 iter {it:6d} loss {row['loss']:.4f} "
                f"color {row['l_color']:.4f} guide {row['l_guide']:.4f}")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_stage2_csv(out_dir / "stage2_metrics.csv", history)
        rd.save_session(out_dir / "stage2.ckpt", model, cloud, opt)
        rasterize_probe(model).save(out_dir / "probe.pfm")
    return history


def _write_stage2_csv(path, history):
    import csv
    if not history:
        return
    keys = ["iteration", "loss", "l_color", "l_guide", "elapsed"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# physically based rendering / relighting
# ---------------------------------------------------------------------------

def render_pbr_rays(model: pc.Model, cloud: pc.NeuralPointCloud,
                    origins, dirs, rcfg: RenderConfig,
                    depth_set: LightDepthSet,
                    probe_values: np.ndarray | None = None) -> np.ndarray:
    """Shade a ray batch with the decomposed BRDF and (optionally swapped)
    environment; returns linear rgb (R,3). probe_values: (L,3) override."""
    r = len(origins)
    rgb = np.tile(np.asarray(rcfg.background, np.float32), (r, 1))
    surf = _surface_batch(model, cloud, origins, dirs, rcfg)
    if surf is None:
        return rgb
    if probe_values is None:
        probe_values = env_eval(model, probe_directions()).data
    probe_values = np.asarray(probe_values, np.float32).reshape(-1, 3)
    vis = shadow_test(depth_set, surf["x"])
    albedo, specular, roughness = predict_brdf(model, surf["f_x"])
    shaded = shade_np(surf["x"], surf["n"], surf["v"], probe_values, vis,
                      albedo.data, specular.data, roughness.data,
                      roughness_floor=model.cfg.roughness_floor)
    acc = surf["acc"][:, None]
    rgb[surf["idx"]] = shaded * acc + rgb[surf["idx"]] * (1.0 - acc)
    return rgb


def render_pbr_image(model, cloud, camera, rcfg: RenderConfig,
                     depth_set: LightDepthSet,
                     probe_values: np.ndarray | None = None) -> dict:
    origins, dirs = camera.rays()
    parts = []
    for s in range(0, len(dirs), rcfg.chunk):
        parts.append(render_pbr_rays(model, cloud, origins[s:s + rcfg.chunk],
                                     dirs[s:s + rcfg.chunk], rcfg, depth_set,
                                     probe_values))
    lin = np.concatenate(parts, axis=0).reshape(camera.height, camera.width, 3)
    return {"rgb_linear": lin, "rgb": linear_to_srgb(lin).astype(np.float32)}


def relight(model, cloud, camera, probe: LightProbe, rcfg: RenderConfig,
            depth_set: LightDepthSet) -> dict:
    """Render under a replacement environment probe (resampled to the grid)."""
    values = probe.values
    if values.shape[:2] != (PROBE_ROWS, PROBE_COLS):
        values = _resample_probe(values, PROBE_ROWS, PROBE_COLS)
    return render_pbr_image(model, cloud, camera, rcfg, depth_set,
                            values.reshape(-1, 3))


def _resample_probe(values: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Nearest-texel resampling of a lat-long map to the probe resolution."""
    src_r, src_c = values.shape[:2]
    dirs = probe_directions(rows, cols)
    r, c = direction_to_texel(dirs, src_r, src_c)
    return values[r, c].reshape(rows, cols, 3).astype(np.float32)
