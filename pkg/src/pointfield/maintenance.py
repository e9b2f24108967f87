"""Point-cloud maintenance: pruning by SDF magnitude / recorded compositing
weight, and growing new points into under-covered surface voxels."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import cloud as pc
from . import renderer as rd
from .config import GrowConfig, PruneConfig


def record_weights(cloud: pc.NeuralPointCloud, indices: np.ndarray,
                   valid: np.ndarray, weights: np.ndarray) -> None:
    """Fold a batch of per-sample compositing weights into each neighboring
    point's running maximum. Order-independent (max is commutative)."""
    w = np.broadcast_to(np.asarray(weights, np.float32)[:, None], indices.shape)
    np.maximum.at(cloud.max_weight, indices[valid], w[valid])


def sdf_prune_threshold(beta: float, confidence: float) -> float:
    """s* with Psi_beta(s*) = confidence, i.e. Psi_beta(-s*) = 1 - confidence."""
    return float(beta * np.log(0.5 / (1.0 - confidence)))


def leave_one_out_sdf(cloud: pc.NeuralPointCloud, model: pc.Model,
                      chunk: int = 16384) -> np.ndarray:
    """Field value at each cloud point as interpolated from its *other*
    neighbors. Self-exclusion matters: inverse-distance weights make each
    point's own tangent plane dominate at its exact position, which would
    report d ~ 0 for any point. Isolated points get the free-space sentinel."""
    n = len(cloud)
    out = np.full(n, pc.FREE_SPACE_SDF, np.float32)
    for s in range(0, n, chunk):
        ids = np.arange(s, min(s + chunk, n))
        q = pc.knn_query(cloud, cloud.positions[ids])
        valid = q.valid & (q.indices != ids[:, None])
        w = np.where(valid, q.weights, 0.0).astype(np.float32)
        wsum = w.sum(axis=1, keepdims=True)
        norm_w = np.where(wsum > 0, w / np.maximum(wsum, 1e-12), 0.0).astype(np.float32)
        q = pc.QueryResult(q.indices, valid, q.rel, w, norm_w, valid.any(axis=1))
        if not q.any_valid.any():
            continue
        f_ix, _, _, rel = pc.aggregate_features(cloud, model, q)
        out[ids] = pc.predict_sdf(model, q, f_ix,
                                  plane=pc.plane_offsets(cloud, q, rel)).data
    return out


def prune(cloud: pc.NeuralPointCloud, model: pc.Model,
          cfg: PruneConfig, report_path=None) -> dict:
    """Remove points far from the learned zero set (|d| > s*) or never
    reaching the compositing-weight threshold. Aborts (removing nothing)
    if more than the safety fraction would go."""
    beta = float(model.beta().item())
    s_star = sdf_prune_threshold(beta, cfg.sdf_confidence)
    d = leave_one_out_sdf(cloud, model)
    by_sdf = np.abs(d) > s_star
    by_weight = cloud.max_weight < cfg.weight_threshold
    remove = by_sdf | by_weight
    frac = float(remove.mean())
    report = {
        "sdf_threshold": s_star, "beta": beta,
        "removed_by_sdf": int(by_sdf.sum()), "removed_by_weight": int(by_weight.sum()),
        "removed": int(remove.sum()), "fraction": frac,
        "aborted": frac > cfg.max_removal_fraction,
        "removed_indices": np.flatnonzero(remove).tolist(),
        "removed_positions": cloud.positions[remove].tolist(),
    }
    if not report["aborted"] and remove.any():
        keep = ~remove
        cloud.positions = cloud.positions[keep]
        cloud.features.data = cloud.features.data[keep]
        cloud.normals.data = cloud.normals.data[keep]
        cloud.max_weight = np.zeros(int(keep.sum()), np.float32)  # reset recording
        cloud.rebuild_index()
    elif not report["aborted"]:
        cloud.max_weight[:] = 0.0
    if report_path is not None:
        Path(report_path).write_text(json.dumps(report))
    return report


def grow(cloud: pc.NeuralPointCloud, model: pc.Model,
         cfg: GrowConfig, report_path=None) -> dict:
    """Add centers of sparse surface voxels.

    Candidates are voxels whose 27-neighborhood holds fewer than T_points
    points and whose center SDF magnitude is below T_SDF; each candidate
    contributes the centers of its K sparsest neighborhood voxels. Added
    points never land in a voxel whose center SDF magnitude >= T_SDF."""
    from scipy.ndimage import correlate
    counts = cloud.point_cell_counts
    hood = correlate(counts, np.ones((3, 3, 3), np.int64), mode="constant")
    dims = cloud.grid_dims
    ijk = np.stack(np.meshgrid(*[np.arange(n) for n in dims], indexing="ij"), axis=-1)
    centers = cloud.grid_origin + (ijk + 0.5) * cloud.grid_cell
    sdf = rd.predict_sdf_at(model, cloud, centers.reshape(-1, 3)).reshape(dims)
    near_surface = np.abs(sdf) < cfg.sdf_threshold
    candidates = near_surface & (hood < cfg.point_threshold)
    add = np.zeros(dims, bool)
    cand_idx = np.argwhere(candidates)
    for i, j, k in cand_idx:
        sl = (slice(max(i - 1, 0), i + 2), slice(max(j - 1, 0), j + 2),
              slice(max(k - 1, 0), k + 2))
        local_counts = counts[sl]
        local_ok = near_surface[sl]
        order = np.argsort(local_counts, axis=None, kind="stable")
        picked = 0
        for flat in order:
            li, lj, lk = np.unravel_index(flat, local_counts.shape)
            if not local_ok[li, lj, lk]:
                continue
            add[sl[0].start + li, sl[1].start + lj, sl[2].start + lk] = True
            picked += 1
            if picked >= cfg.k_sparsest:
                break
    new_pos = centers[add].reshape(-1, 3).astype(np.float32)
    report = {"added": int(len(new_pos)), "added_positions": new_pos.tolist()}
    if len(new_pos):
        q = pc.knn_query(cloud, new_pos)
        w = q.norm_weights[..., None]
        feats = (cloud.features.data[q.indices] * w).sum(axis=1)
        normals = (cloud.normals.data[q.indices] * w).sum(axis=1)
        nl = np.linalg.norm(normals, axis=-1, keepdims=True)
        normals = np.where(nl > 1e-8, normals / np.maximum(nl, 1e-8), [0.0, 0.0, 1.0])
        cloud.positions = np.concatenate([cloud.positions, new_pos])
        cloud.features.data = np.concatenate([cloud.features.data, feats.astype(np.float32)])
        cloud.normals.data = np.concatenate([cloud.normals.data, normals.astype(np.float32)])
        cloud.max_weight = np.concatenate([cloud.max_weight,
                                           np.zeros(len(new_pos), np.float32)])
        cloud.rebuild_index()
    if report_path is not None:
        Path(report_path).write_text(json.dumps(report))
    return report
