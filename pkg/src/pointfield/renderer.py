"""Volume rendering of the SDF point field: ray sampling restricted to
occupied voxels, Laplace-CDF density, compositing, losses, and stage-1 training."""

from __future__ import annotations

import csv
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import cloud as pc
from . import nn
from .autodiff import Tape, Tensor
from .config import RenderConfig, Stage1Config
from .imaging import Camera, linear_to_srgb, psnr


class DegenerateNormalError(Exception):
    pass


# ---------------------------------------------------------------------------
# density and compositing
# ---------------------------------------------------------------------------

def laplace_psi_np(s: np.ndarray, beta: float) -> np.ndarray:
    """CDF of the Laplace distribution with scale beta."""
    s = np.asarray(s, np.float64)
    return np.where(s <= 0, 0.5 * np.exp(np.minimum(s / beta, 0.0)),
                    1.0 - 0.5 * np.exp(np.minimum(-s / beta, 0.0)))


def sdf_to_density(d: Tensor | np.ndarray, beta: Tensor | float) -> Tensor:
    """sigma = (1/beta) * Psi_beta(-d); strictly decreasing in d, in (0, 1/beta)."""
    d = ad.ensure_tensor(d)
    beta = ad.ensure_tensor(beta)
    t = ad.div(d, beta)
    inside = d.data < 0  # -d > 0 branch of the CDF
    pos = ad.mul(ad.exp(ad.clip(ad.mul(t, -1.0), -60.0, 0.0)), 0.5)
    neg = ad.sub(1.0, ad.mul(ad.exp(ad.clip(t, -60.0, 0.0)), 0.5))
    return ad.div(ad.where(inside, neg, pos), beta)


def compositing_weights(sigma: Tensor, delta: np.ndarray) -> Tensor:
    """w_t = exp(-sum_{j<t} sigma_j delta_j) * (1 - exp(-sigma_t delta_t))."""
    sd = ad.mul(sigma, Tensor(delta))
    cum = ad.cumsum(sd, axis=-1)
    excl = ad.sub(cum, sd)  # exclusive prefix sum
    trans = ad.exp(ad.mul(excl, -1.0))
    alpha = ad.sub(1.0, ad.exp(ad.mul(sd, -1.0)))
    return ad.mul(trans, alpha)


def composite(weights: Tensor, radiance: Tensor, t: np.ndarray,
              background: np.ndarray) -> tuple[Tensor, np.ndarray, Tensor]:
    """Returns (rgb (R,3), expected termination depth (R,), coverage (R,))."""
    r, s = weights.shape
    w3 = ad.reshape(weights, (r, s, 1))
    rgb = ad.tsum(ad.mul(w3, radiance), axis=1)
    acc = ad.tsum(weights, axis=1)
    rgb = ad.add(rgb, ad.mul(ad.reshape(ad.sub(1.0, acc), (r, 1)), Tensor(background)))
    w = weights.data
    acc_np = w.sum(axis=1)
    depth = (w * t).sum(axis=1) / np.maximum(acc_np, 1e-8)
    return rgb, depth.astype(np.float32), acc


def tonemap(rgb: Tensor) -> Tensor:
    """Differentiable linear -> sRGB transfer, clipped to [0,1]."""
    x = ad.clip(rgb, 0.0, 1.0)
    low = ad.mul(x, 12.92)
    high = ad.sub(ad.mul(ad.power(ad.maximum(x, 0.0031308), 1.0 / 2.4), 1.055), 0.055)
    return ad.where(x.data <= 0.0031308, low, high)


# ---------------------------------------------------------------------------
# ray sampling
# ---------------------------------------------------------------------------

@dataclass
class RaySampleBatch:
    origins: np.ndarray   # (R,3)
    dirs: np.ndarray      # (R,3) unit
    t: np.ndarray         # (R,S) sample distances
    delta: np.ndarray     # (R,S) spacings (> 0)
    positions: np.ndarray  # (R,S,3)
    occupied: np.ndarray  # (R,S) bool: sample inside an occupied voxel
    far: np.ndarray       # (R,) fallback depth for empty rays


def _ray_aabb(origins, dirs, lo, hi):
    inv = 1.0 / np.where(np.abs(dirs) < 1e-9, 1e-9, dirs)
    t1 = (lo - origins) * inv
    t2 = (hi - origins) * inv
    tmin = np.minimum(t1, t2).max(axis=-1)
    tmax = np.maximum(t1, t2).min(axis=-1)
    return np.maximum(tmin, 1e-3), tmax


def sample_along_rays(cloud: pc.NeuralPointCloud, origins: np.ndarray, dirs: np.ndarray,
                      n_samples: int, rng: np.random.Generator | None = None,
                      probe: int = 96) -> RaySampleBatch:
    """Stratified samples concentrated on the occupied-voxel span of each ray."""
    r = len(origins)
    lo, hi = cloud.bounds(pad=2.0 * cloud.radius)
    t0, t1 = _ray_aabb(origins, dirs, lo, hi)
    hit = t1 > t0
    t1 = np.maximum(t1, t0 + 1e-3)
    # coarse probe to find the occupied span
    u = (np.arange(probe, dtype=np.float32) + 0.5) / probe
    tp = t0[:, None] + (t1 - t0)[:, None] * u[None, :]
    occ_probe = cloud.occupied_at(
        origins[:, None, :] + dirs[:, None, :] * tp[..., None]).reshape(r, probe)
    occ_probe &= hit[:, None]
    any_occ = occ_probe.any(axis=1)
    step = (t1 - t0) / probe
    first = np.argmax(occ_probe, axis=1)
    last = probe - 1 - np.argmax(occ_probe[:, ::-1], axis=1)
    t_lo = np.where(any_occ, tp[np.arange(r), first] - step, t0)
    t_hi = np.where(any_occ, tp[np.arange(r), last] + step, t0 + 1e-3)
    t_lo = np.maximum(t_lo, t0)
    span = np.maximum(t_hi - t_lo, 1e-4)
    us = (np.arange(n_samples, dtype=np.float32) + 0.5) / n_samples
    if rng is not None:
        us = (np.arange(n_samples) + rng.random((r, n_samples))) / n_samples
    t = (t_lo[:, None] + span[:, None] * us).astype(np.float32)
    delta = np.broadcast_to((span / n_samples)[:, None], t.shape).astype(np.float32).copy()
    positions = (origins[:, None, :] + dirs[:, None, :] * t[..., None]).astype(np.float32)
    occupied = cloud.occupied_at(positions.reshape(-1, 3)).reshape(r, n_samples)
    occupied &= any_occ[:, None]
    return RaySampleBatch(origins, dirs, t, delta, positions, occupied, t1.astype(np.float32))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def loss_sparsity(sigma: Tensor, beta: Tensor, c: float,
                  interior: np.ndarray | None = None) -> Tensor:
    """Cauchy-style penalty pushing sampled points toward solid interior density.

    `interior` masks the sum to samples behind the surface; without it the
    penalty also drags near-surface exterior samples negative.
    """
    bs = ad.mul(sigma, beta)
    sq = ad.power(ad.sub(1.0, bs), 2.0)
    term = ad.log1p(ad.mul(sq, 1.0 / (c * c)))
    if interior is not None:
        term = ad.where(interior, term, ad.ensure_tensor(np.zeros(1, np.float32)))
    return ad.tsum(term)


def loss_sdf_continuity(delta_d: Tensor, projected: np.ndarray) -> Tensor:
    """|| (v.n) delta - (d_{t+1} - d_t) ||^2 summed over consecutive sample pairs."""
    diff = ad.sub(Tensor(projected), delta_d)
    return ad.tsum(ad.mul(diff, diff))


def loss_normal(n_grad: np.ndarray, n_point: Tensor, w: np.ndarray) -> Tensor:
    """Compositing-weighted L2 between gradient normals and point normals."""
    diff = ad.sub(n_point, Tensor(n_grad))
    per = ad.tsum(ad.mul(diff, diff), axis=-1)
    return ad.tsum(ad.mul(per, Tensor(w)))


# ---------------------------------------------------------------------------
# field evaluation helpers
# ---------------------------------------------------------------------------

@contextmanager
def grads_disabled(tensors):
    """Temporarily drop requires_grad so a backward pass skips these leaves."""
    flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, f in zip(tensors, flags):
            t.requires_grad = f


def _all_params(model: pc.Model, cloud: pc.NeuralPointCloud) -> dict[str, Tensor]:
    params = dict(model.params)
    params.update(cloud.param_dict())
    return params


def gradient_normal(model: pc.Model, cloud: pc.NeuralPointCloud, x: np.ndarray,
                    strict: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Unit SDF gradient at x via the tape; returns (normals, degenerate mask)."""
    x = np.asarray(x, np.float32).reshape(-1, 3)
    params = list(_all_params(model, cloud).values())
    q = pc.knn_query(cloud, x)
    with grads_disabled(params):
        with Tape() as tape:
            xt = Tensor(x, requires_grad=True)
            f_ix, _, nw, rel = pc.aggregate_features(cloud, model, q, x=xt)
            d = pc.predict_sdf(model, q, f_ix, nw, pc.plane_offsets(cloud, q, rel))
            tape.backward(ad.tsum(d))
    g = xt.grad if xt.grad is not None else np.zeros_like(x)
    norm = np.linalg.norm(g, axis=-1)
    degenerate = norm < 1e-8
    if strict and degenerate.any():
        raise DegenerateNormalError(f"{int(degenerate.sum())} degenerate SDF gradients")
    n = g / np.maximum(norm[:, None], 1e-8)
    return n.astype(np.float32), degenerate


def predict_sdf_at(model: pc.Model, cloud: pc.NeuralPointCloud,
                   x: np.ndarray, chunk: int = 65536) -> np.ndarray:
    """Plain (no-tape) SDF evaluation; free space gets the +large sentinel."""
    x = np.asarray(x, np.float32).reshape(-1, 3)
    out = np.full(len(x), pc.FREE_SPACE_SDF, np.float32)
    for s in range(0, len(x), chunk):
        xs = x[s:s + chunk]
        q = pc.knn_query(cloud, xs)
        if not q.any_valid.any():
            continue
        f_ix, _, _, rel = pc.aggregate_features(cloud, model, q)
        out[s:s + chunk] = pc.predict_sdf(
            model, q, f_ix, plane=pc.plane_offsets(cloud, q, rel)).data
    return out


# ---------------------------------------------------------------------------
# image rendering (inference, no tape)
# ---------------------------------------------------------------------------

def render_rays(model: pc.Model, cloud: pc.NeuralPointCloud,
                origins: np.ndarray, dirs: np.ndarray, rcfg: RenderConfig,
                mode: str = "radiance", want_features: bool = False) -> dict:
    """Composite a batch of rays. mode: 'radiance' (Eq.-8 style) or 'diffuse'."""
    r = len(origins)
    s = rcfg.samples_per_ray
    batch = sample_along_rays(cloud, origins, dirs, s)
    flat_occ = np.flatnonzero(batch.occupied.reshape(-1))
    out = {
        "rgb_linear": np.zeros((r, 3), np.float32),
        "depth": batch.far.copy(),
        "normal": np.zeros((r, 3), np.float32),
        "acc": np.zeros(r, np.float32),
    }
    bg = np.asarray(rcfg.background, np.float32)
    out["rgb_linear"][:] = bg
    if want_features:
        out["features"] = np.zeros((r, model.cfg.cond_dim), np.float32)
        out["weight_sum"] = np.zeros(r, np.float32)
    if flat_occ.size == 0:
        return out
    x = batch.positions.reshape(-1, 3)[flat_occ]
    q = pc.knn_query(cloud, x)
    keep = q.any_valid
    if not keep.any():
        return out
    flat_idx = flat_occ[keep]
    q = pc.QueryResult(q.indices[keep], q.valid[keep], q.rel[keep],
                       q.weights[keep], q.norm_weights[keep], q.any_valid[keep])
    f_ix, f_x, _, rel = pc.aggregate_features(cloud, model, q)
    d = pc.predict_sdf(model, q, f_ix, plane=pc.plane_offsets(cloud, q, rel))
    sigma = sdf_to_density(d, model.beta())
    n_point, degen = pc.interpolate_point_normal(cloud, q, differentiable=False)
    normals = n_point.data.copy()
    if degen.any():
        fallback, _ = gradient_normal(model, cloud, x[keep][degen])
        normals[degen] = fallback
    view = np.repeat(dirs, s, axis=0)[flat_idx]
    c_d, c_s, c = pc.predict_radiance(model, f_x, view, normals)
    radiance = c_d if mode == "diffuse" else c
    sig_grid = ad.reshape(ad.scatter_rows(r * s, flat_idx, ad.reshape(sigma, (-1, 1))), (r, s))
    rad_grid = ad.reshape(ad.scatter_rows(r * s, flat_idx, radiance), (r, s, 3))
    w = compositing_weights(sig_grid, batch.delta)
    rgb, depth, acc = composite(w, rad_grid, batch.t, bg)
    nrm_grid = ad.reshape(ad.scatter_rows(r * s, flat_idx, Tensor(normals)), (r, s, 3))
    nrm = ad.tsum(ad.mul(ad.reshape(w, (r, s, 1)), nrm_grid), axis=1).data
    covered = acc.data > 1e-4
    out["rgb_linear"] = rgb.data
    out["depth"] = np.where(covered, depth, batch.far)
    nlen = np.linalg.norm(nrm, axis=-1, keepdims=True)
    out["normal"] = np.where(nlen > 1e-6, nrm / np.maximum(nlen, 1e-8), 0.0).astype(np.float32)
    out["acc"] = acc.data
    if want_features:
        wflat = w.data.reshape(-1)[flat_idx]
        fx_grid = np.zeros((r * s, model.cfg.cond_dim), np.float32)
        fx_grid[flat_idx] = f_x.data * wflat[:, None]
        out["features"] = fx_grid.reshape(r, s, -1).sum(axis=1)
        out["weight_sum"] = acc.data
    return out


def render_image(model: pc.Model, cloud: pc.NeuralPointCloud, camera: Camera,
                 rcfg: RenderConfig, mode: str = "radiance") -> dict:
    """Full-frame render -> sRGB rgb, depth, normal, acc (H,W,...) arrays."""
    origins, dirs = camera.rays()
    n = len(dirs)
    acc = {k: [] for k in ("rgb_linear", "depth", "normal", "acc")}
    for s in range(0, n, rcfg.chunk):
        part = render_rays(model, cloud, origins[s:s + rcfg.chunk],
                           dirs[s:s + rcfg.chunk], rcfg, mode=mode)
        for k in acc:
            acc[k].append(part[k])
    h, w = camera.height, camera.width
    out = {k: np.concatenate(v, axis=0) for k, v in acc.items()}
    result = {
        "rgb_linear": out["rgb_linear"].reshape(h, w, 3),
        "rgb": linear_to_srgb(out["rgb_linear"]).reshape(h, w, 3).astype(np.float32),
        "depth": out["depth"].reshape(h, w),
        "normal": out["normal"].reshape(h, w, 3),
        "acc": out["acc"].reshape(h, w),
    }
    return result


# ---------------------------------------------------------------------------
# stage-1 training
# ---------------------------------------------------------------------------

def train_stage1(model: pc.Model, cloud: pc.NeuralPointCloud, dataset,
                 cfg: Stage1Config, out_dir=None, prune_cfg=None, grow_cfg=None,
                 log=print) -> list[dict]:
    """Joint geometry + radiance training (color, normal, sparsity, continuity)."""
    rng = np.random.default_rng(cfg.seed)
    opt = nn.AdamState(lr=cfg.lr_mlp)
    params = _all_params(model, cloud)
    trainable = {k: v for k, v in params.items()
                 if k.startswith(pc.STAGE1_PREFIXES)}
    lr_over = {"points.": cfg.lr_points, "points.normals": cfg.lr_normals,
               "sdf.": cfg.lr_sdf}
    history: list[dict] = []
    rows_per_view = [cam.height * cam.width for cam, _ in dataset.train_views()]
    t_start = time.time()
    for it in range(cfg.iterations):
        view_idx = int(rng.integers(len(rows_per_view)))
        camera, image = dataset.train_views()[view_idx]
        pix = rng.integers(0, rows_per_view[view_idx], size=cfg.rays_per_iter)
        cols, rows = pix % camera.width, pix // camera.width
        origins, dirs = camera.rays(np.stack([cols, rows], axis=-1))
        gt = image.reshape(-1, 3)[pix].astype(np.float32)
        stats = _train_step(model, cloud, origins, dirs, gt, cfg, opt,
                            trainable, lr_over, rng, it)
        if stats is None:
            continue
        if not np.isfinite(stats["loss"]):
            raise nn.DivergedTrainingError(
                f"NaN loss at iteration {it} (view {view_idx}, seed {cfg.seed})")
        if cfg.prune_every and (it + 1) % cfg.prune_every == 0 and prune_cfg is not None:
            from . import maintenance
            maintenance.prune(cloud, model, prune_cfg)
            trainable, opt = _refresh_after_edit(model, cloud, opt)
        if cfg.grow_every and (it + 1) % cfg.grow_every == 0 and grow_cfg is not None:
            from . import maintenance
            maintenance.grow(cloud, model, grow_cfg)
            trainable, opt = _refresh_after_edit(model, cloud, opt)
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            stats.update(iteration=it, elapsed=time.time() - t_start)
            history.append(stats)
            log(f"iter {it:6d} loss {stats['loss']:.4f} color {stats['l_color']:.4f} "
                f"psnr {stats['psnr_batch']:.2f}")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out_dir / "stage1_metrics.csv", history)
        save_session(out_dir / "stage1.ckpt", model, cloud, opt)
    return history


def _refresh_after_edit(model, cloud, opt):
    """Point count changed: rebuild trainable dict and reset point-moment state."""
    trainable = {k: v for k, v in _all_params(model, cloud).items()
                 if k.startswith(pc.STAGE1_PREFIXES)}
    for key in ("points.features", "points.normals"):
        opt.m.pop(key, None)
        opt.v.pop(key, None)
    return trainable, opt


def _train_step(model, cloud, origins, dirs, gt_srgb, cfg: Stage1Config,
                opt, trainable, lr_over, rng, it) -> dict | None:
    r = len(origins)
    s = cfg.samples_per_ray
    batch = sample_along_rays(cloud, origins, dirs, s, rng=rng)
    flat_occ = np.flatnonzero(batch.occupied.reshape(-1))
    if flat_occ.size == 0:
        return None
    x = batch.positions.reshape(-1, 3)[flat_occ]
    q_all = pc.knn_query(cloud, x)
    keep = q_all.any_valid
    if not keep.any():
        return None
    flat_idx = flat_occ[keep]
    q = pc.QueryResult(q_all.indices[keep], q_all.valid[keep], q_all.rel[keep],
                       q_all.weights[keep], q_all.norm_weights[keep], q_all.any_valid[keep])
    xc = x[keep]
    view = np.repeat(dirs, s, axis=0)[flat_idx]
    leaf_params = list(trainable.values()) + [model.params[k] for k in model.params
                                              if not k.startswith(pc.STAGE1_PREFIXES)]
    warmup = it < cfg.warmup_iters
    use_point_normal = it >= cfg.warmup_iters + cfg.normal_switch_iters

    with Tape() as tape:
        xt = Tensor(xc, requires_grad=True)
        f_ix, f_x, nw, rel = pc.aggregate_features(cloud, model, q, x=xt)
        d = pc.predict_sdf(model, q, f_ix, nw, pc.plane_offsets(cloud, q, rel))
        # phase 1: SDF gradient normals from the shared graph
        with grads_disabled(leaf_params):
            tape.backward(ad.tsum(d))
        g = xt.grad if xt.grad is not None else np.zeros_like(xc)
        tape.zero_grad()
        xt.grad = None
        gnorm = np.linalg.norm(g, axis=-1, keepdims=True)
        n_grad = (g / np.maximum(gnorm, 1e-8)).astype(np.float32)

        # phase 2: densities, radiance, losses
        beta = model.beta()
        sigma = sdf_to_density(d, beta)
        n_point_t, degen = pc.interpolate_point_normal(cloud, q)
        spec_normal = n_point_t.data.copy()
        spec_normal[degen] = n_grad[degen]
        if not use_point_normal:
            spec_normal = np.where(degen[:, None], spec_normal, n_grad)
        if warmup:
            c_d = model.forward("rad_d", f_x)
            radiance = c_d
        else:
            _, _, radiance = pc.predict_radiance(model, f_x, view, spec_normal)
        sig_grid = ad.reshape(ad.scatter_rows(r * s, flat_idx, ad.reshape(sigma, (-1, 1))),
                              (r, s))
        rad_grid = ad.reshape(ad.scatter_rows(r * s, flat_idx, radiance), (r, s, 3))
        w = compositing_weights(sig_grid, batch.delta)
        rgb, depth_t, acc_t = composite(w, rad_grid, batch.t, np.zeros(3, np.float32))
        l_color = ad.tsum(ad.absolute(ad.sub(tonemap(rgb), Tensor(gt_srgb))))

        w_x = w.data.reshape(-1)[flat_idx]
        l_n = loss_normal(n_grad, n_point_t, w_x)
        # interior samples: past the expected termination of a surface-hitting ray
        term_depth = np.where(acc_t.data > 0.5, depth_t, np.inf)
        interior = (batch.t > term_depth[:, None]).reshape(-1)[flat_idx]
        l_s = loss_sparsity(sigma, beta, cfg.cauchy_c, interior=interior)

        # continuity pairs: consecutive contributing samples on the same ray
        comp_map = np.full(r * s, -1, np.int64)
        comp_map[flat_idx] = np.arange(len(flat_idx))
        grid = comp_map.reshape(r, s)
        pair = (grid[:, :-1] >= 0) & (grid[:, 1:] >= 0)
        if pair.any():
            i1 = grid[:, :-1][pair]
            i2 = grid[:, 1:][pair]
            dd = ad.sub(ad.getitem(d, i2), ad.getitem(d, i1))
            # projection target uses the interpolated point normal: it is the
            # low-noise estimate and anchors along-ray SDF slopes to geometry
            n_proj = n_point_t.data.copy()
            n_proj[degen] = n_grad[degen]
            vdotn = np.sum(view[i1] * n_proj[i1], axis=-1)
            proj = (vdotn * batch.delta[:, :-1][pair]).astype(np.float32)
            l_d = loss_sdf_continuity(dd, proj)
        else:
            l_d = ad.ensure_tensor(np.float32(0.0))

        # short-baseline probe pairs: same first-order consistency as the
        # along-ray pairs, but at a controlled step in random directions
        if cfg.fd_pairs > 0 and cfg.fd_epsilon > 0:
            n_proj = n_point_t.data.copy()
            n_proj[degen] = n_grad[degen]
            m = min(cfg.fd_pairs, len(xc))
            sel = rng.choice(len(xc), size=m, replace=False)
            u = rng.normal(size=(m, 3)).astype(np.float32)
            u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-8)
            xp = xc[sel] + cfg.fd_epsilon * u
            qp = pc.knn_query(cloud, xp)
            ok = qp.any_valid
            if ok.any():
                qp = pc.QueryResult(qp.indices[ok], qp.valid[ok], qp.rel[ok],
                                    qp.weights[ok], qp.norm_weights[ok], qp.any_valid[ok])
                fp, _, nwp, relp = pc.aggregate_features(cloud, model, qp)
                dp = pc.predict_sdf(model, qp, fp, nwp, pc.plane_offsets(cloud, qp, relp))
                # slope form: (dd/eps - n.u)^2 keeps the signal scale-free
                dd2 = ad.mul(ad.sub(dp, ad.getitem(d, sel[ok])), 1.0 / cfg.fd_epsilon)
                proj2 = np.sum(u[ok] * n_proj[sel[ok]], axis=-1).astype(np.float32)
                l_fd = loss_sdf_continuity(dd2, proj2)
            else:
                l_fd = ad.ensure_tensor(np.float32(0.0))
        else:
            l_fd = ad.ensure_tensor(np.float32(0.0))

        # zero-anchor: the cloud points are the surface estimate, pin d there
        if cfg.anchor_points > 0:
            m = min(cfg.anchor_points, len(cloud))
            sel_a = rng.choice(len(cloud), size=m, replace=False)
            qa = pc.knn_query(cloud, cloud.positions[sel_a])
            fa, _, nwa, rela = pc.aggregate_features(cloud, model, qa)
            da = pc.predict_sdf(model, qa, fa, nwa, pc.plane_offsets(cloud, qa, rela))
            l_anchor = ad.tsum(ad.mul(da, da))
        else:
            l_anchor = ad.ensure_tensor(np.float32(0.0))

        total = ad.add(ad.add(l_color, ad.mul(l_n, cfg.lambda_n)),
                       ad.add(ad.mul(l_s, cfg.lambda_s), ad.mul(l_d, cfg.lambda_d)))
        total = ad.add(total, ad.add(ad.mul(l_fd, cfg.lambda_fd),
                                     ad.mul(l_anchor, cfg.lambda_anchor)))
        nn.zero_grads(trainable)
        # release frees the graph during the sweep, halving the peak footprint
        tape.backward(total, release=True)

    nn.adam_step(opt, trainable, lr_over)
    nn.zero_grads(trainable)
    cloud.renormalize()
    np.maximum.at(cloud.max_weight, q.indices[q.valid],
                  np.broadcast_to(w_x[:, None], q.indices.shape)[q.valid])
    mse = float(np.mean((linear_to_srgb(np.clip(rgb.data, 0, 1)) - gt_srgb) ** 2))
    return {
        "loss": total.item(), "l_color": l_color.item(), "l_n": l_n.item(),
        "l_s": l_s.item(), "l_d": l_d.item(),
        "psnr_batch": 10.0 * np.log10(1.0 / max(mse, 1e-10)),
    }


def write_metrics_csv(path, history: list[dict]) -> None:
    if not history:
        return
    keys = ["iteration", "loss", "l_color", "l_n", "l_s", "l_d", "psnr_batch", "elapsed"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# session checkpoints (model + cloud in one container)
# ---------------------------------------------------------------------------

def save_session(path, model: pc.Model, cloud: pc.NeuralPointCloud,
                 optimizer: nn.AdamState | None = None) -> None:
    params = dict(model.params)
    params.update(cloud.param_dict())
    params["points.positions"] = Tensor(cloud.positions)
    params["points.max_weight"] = Tensor(cloud.max_weight)
    meta = {f"cfg.{k}": float(v) for k, v in vars(model.cfg).items()}
    meta["cloud.k"] = float(cloud.k)
    meta["cloud.radius_scale"] = float(cloud.radius_scale)
    nn.save_checkpoint(path, params, optimizer, meta)


def load_session(path) -> tuple[pc.Model, pc.NeuralPointCloud, nn.AdamState | None]:
    params, opt, meta = nn.load_checkpoint(path)
    cfg_kwargs = {}
    for key, value in meta.items():
        if key.startswith("cfg."):
            name = key[4:]
            typ = pc.ModelConfig.__dataclass_fields__[name].type
            cfg_kwargs[name] = int(value) if typ == "int" else float(value)
    cfg = pc.ModelConfig(**cfg_kwargs)
    positions = params.pop("points.positions").data
    features = params.pop("points.features").data
    normals = params.pop("points.normals").data
    max_weight = params.pop("points.max_weight").data
    cloud = pc.NeuralPointCloud(positions, features, normals,
                                k=int(meta.get("cloud.k", cfg.k_neighbors)),
                                radius_scale=meta.get("cloud.radius_scale", cfg.radius_scale))
    cloud.max_weight = max_weight.astype(np.float32)
    model = pc.Model(cfg, params)
    return model, cloud, opt


def evaluate_views(model, cloud, views, rcfg: RenderConfig) -> list[dict]:
    """PSNR per held-out view; views = list of (camera, srgb image)."""
    rows = []
    for i, (camera, image) in enumerate(views):
        res = render_image(model, cloud, camera, rcfg)
        rows.append({"view": i, "psnr": psnr(res["rgb"], image)})
    return rows
